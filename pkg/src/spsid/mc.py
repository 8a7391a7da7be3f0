"""Monte Carlo experiment engine: coverage studies, sweeps and benchmarks.

Every trial draws (optionally) a fresh system, simulates one run, builds the
regression data and instruments once, and then evaluates every requested
method on that shared data. Per-trial seeds derive deterministically from the
master seed, the cell index, the trial index and the retry attempt, so a plan
reproduces exactly regardless of the degree of parallelism.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .eoa import dual_block_size, outer_approximation, vectorized_outer_approximation
from .estimators import AsymptoticEllipsoid
from .exceptions import (DegeneracyError, RiccatiError, UnderdeterminedError,
                         UnstableTrajectoryError)
from .model import (GaussianNoise, NoiseModel, SystemSpec, noise_to_params,
                    random_stable_system, simulate, synthesize_lqr)
from .regression import (MODE_DIRECT, MODE_INDIRECT, build_direct, build_indirect,
                         build_instruments, flatten_parameter, vectorize)
from .sps import SpsRegion

METHOD_ASYMPTOTIC = "AS"
METHOD_INDICATOR = "IN"
METHOD_VECTOR_EOA = "IV_EOA"
METHOD_MATRIX_EOA = "MIV_EOA"
ALL_METHODS = (METHOD_ASYMPTOTIC, METHOD_INDICATOR, METHOD_VECTOR_EOA,
               METHOD_MATRIX_EOA)

REPORT_FIELDS = ("dim", "params", "method", "noise", "mode", "epsilon", "n", "s",
                 "hits", "invalid", "p_hat", "median_radius_sq", "wall_ms",
                 "block_size")
REPORT_HEADER = ",".join(REPORT_FIELDS)

_RECOVERABLE = (DegeneracyError, UnderdeterminedError, UnstableTrajectoryError,
                RiccatiError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ExperimentPlan:
    """One batch of Monte Carlo cells sharing a master seed.

    ``dims`` entries are either a state dimension (the input dimension then
    matches it) or an explicit ``(d_x, d_u)`` pair. ``epsilon`` may be a
    single exploitation rate or a sweep tuple; ``ns`` is the sample-size sweep
    used by :func:`run_sample_sweep`.
    """

    dims: tuple = (2,)
    n: int = 500
    s: int = 500
    epsilon: float | tuple = 0.0
    noise: NoiseModel = field(default_factory=GaussianNoise)
    mode: str = MODE_DIRECT
    methods: tuple = (METHOD_INDICATOR,)
    seed: int = 0
    m: int = 100
    q: int = 10
    lqr_q: float = 1.0
    lqr_v: float = 1.0
    target_radius: float = 0.9
    fresh_system_per_trial: bool = True
    max_retries: int = 3
    ns: tuple | None = None

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be at least 1")
        for method in self.methods:
            if method not in ALL_METHODS:
                raise ValueError(f"unknown method {method!r}; expected {ALL_METHODS}")
        if self.mode not in (MODE_DIRECT, MODE_INDIRECT):
            raise ValueError("mode must be 'direct' or 'indirect'")

    @property
    def confidence(self) -> float:
        return 1.0 - self.q / self.m

    def epsilons(self) -> tuple:
        eps = self.epsilon
        return tuple(eps) if isinstance(eps, (tuple, list)) else (float(eps),)

    def dim_pairs(self) -> tuple:
        pairs = []
        for entry in self.dims:
            if isinstance(entry, (tuple, list)):
                pairs.append((int(entry[0]), int(entry[1])))
            else:
                pairs.append((int(entry), int(entry)))
        return tuple(pairs)


@dataclass(frozen=True)
class CoverageRow:
    dim: str
    params: int
    method: str
    noise: str
    mode: str
    epsilon: float
    n: int
    s: int
    hits: int
    invalid: int
    p_hat: float
    median_radius_sq: float | None
    wall_ms: float
    block_size: int | None


@dataclass
class CoverageReport:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for r in self.rows:
            writer.writerow([
                r.dim, r.params, r.method, r.noise, r.mode, repr(r.epsilon), r.n,
                r.s, r.hits, r.invalid, repr(r.p_hat),
                "" if r.median_radius_sq is None else repr(r.median_radius_sq),
                f"{r.wall_ms:.3f}",
                "" if r.block_size is None else r.block_size,
            ])
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def find(self, **filters) -> CoverageRow:
        matches = [r for r in self.rows
                   if all(getattr(r, k) == v for k, v in filters.items())]
        if len(matches) != 1:
            raise KeyError(f"{len(matches)} rows match {filters}")
        return matches[0]


def _dim_label(d_x: int, d_u: int) -> str:
    return str(d_x) if d_x == d_u else f"{d_x}x{d_u}"


def _draw_system(d_x, d_u, plan: ExperimentPlan, rng):
    a, b = random_stable_system(d_x, d_u, plan.target_radius, rng=rng)
    k = synthesize_lqr(a, b, plan.lqr_q, plan.lqr_v)
    return a, b, k


def _run_trial(plan: ExperimentPlan, d_x: int, d_u: int, epsilon: float, n: int,
               cell_idx: int, trial: int, fixed_system=None):
    """One seeded trial; returns per-method outcomes or None when degenerate.

    Degenerate draws (instrument singularity, unstable closed loop, ...) are
    re-seeded and retried up to ``plan.max_retries`` times before the trial is
    declared invalid.
    """
    for attempt in range(plan.max_retries + 1):
        seq = np.random.SeedSequence(entropy=plan.seed,
                                     spawn_key=(cell_idx, trial, attempt))
        sys_seq, traj_seq, sps_seq = seq.spawn(3)
        try:
            if fixed_system is not None:
                a, b, k = fixed_system
            else:
                a, b, k = _draw_system(d_x, d_u, plan, np.random.default_rng(sys_seq))
            spec = SystemSpec(A=a, B=b, K=k, epsilon=epsilon, noise=plan.noise)
            traj = simulate(spec, n, rng=np.random.default_rng(traj_seq))
            if plan.mode == MODE_DIRECT:
                data = build_direct(traj)
                theta_true = spec.direct_parameter()
            else:
                data, _, _ = build_indirect(traj, spec)
                theta_true = spec.indirect_parameter()
            data = build_instruments(data, traj)

            needs_vector = (METHOD_ASYMPTOTIC in plan.methods
                            or METHOD_VECTOR_EOA in plan.methods)
            problem = vectorize(data) if needs_vector else None
            theta_vec = flatten_parameter(theta_true, d_x) if needs_vector else None

            outcome = {}
            region = None
            if METHOD_INDICATOR in plan.methods or METHOD_MATRIX_EOA in plan.methods:
                t0 = time.perf_counter()
                region = SpsRegion(m=plan.m, q=plan.q,
                                   random_state=np.random.default_rng(sps_seq))
                region.fit(data)
                fit_ms = 1e3 * (time.perf_counter() - t0)
            if METHOD_INDICATOR in plan.methods:
                t0 = time.perf_counter()
                hit = region.contains(theta_true)
                outcome[METHOD_INDICATOR] = (
                    hit, None, fit_ms + 1e3 * (time.perf_counter() - t0))
            if METHOD_MATRIX_EOA in plan.methods:
                t0 = time.perf_counter()
                ell = outer_approximation(region)
                hit = ell.contains(theta_true)
                outcome[METHOD_MATRIX_EOA] = (
                    hit, ell.radius_sq, fit_ms + 1e3 * (time.perf_counter() - t0))
            if METHOD_ASYMPTOTIC in plan.methods:
                t0 = time.perf_counter()
                asym = AsymptoticEllipsoid(confidence=plan.confidence).fit(problem)
                hit = asym.contains(theta_vec)
                outcome[METHOD_ASYMPTOTIC] = (
                    hit, asym.radius_sq_, 1e3 * (time.perf_counter() - t0))
            if METHOD_VECTOR_EOA in plan.methods:
                t0 = time.perf_counter()
                ell = vectorized_outer_approximation(
                    problem, m=plan.m, q=plan.q,
                    random_state=np.random.default_rng(sps_seq))
                hit = ell.contains(theta_vec.reshape(-1, 1))
                outcome[METHOD_VECTOR_EOA] = (
                    hit, ell.radius_sq, 1e3 * (time.perf_counter() - t0))
            return outcome
        except _RECOVERABLE:
            continue
    return None


def _aggregate_cell(plan: ExperimentPlan, d_x: int, d_u: int, epsilon: float,
                    n: int, outcomes) -> list:
    rows = []
    valid = [o for o in outcomes if o is not None]
    invalid = len(outcomes) - len(valid)
    for method in plan.methods:
        hits = sum(1 for o in valid if o[method][0])
        radii = [o[method][1] for o in valid if o[method][1] is not None]
        wall = sum(o[method][2] for o in valid)
        if method == METHOD_MATRIX_EOA:
            block = dual_block_size(d_x, d_u, vectorized=False)
        elif method == METHOD_VECTOR_EOA:
            block = dual_block_size(d_x, d_u, vectorized=True)
        else:
            block = None
        rows.append(CoverageRow(
            dim=_dim_label(d_x, d_u),
            params=d_x * (d_x + d_u),
            method=method,
            noise=noise_to_params(plan.noise)[0],
            mode=plan.mode,
            epsilon=epsilon,
            n=n,
            s=len(valid),
            hits=hits,
            invalid=invalid,
            p_hat=hits / len(valid) if valid else 0.0,
            median_radius_sq=float(np.median(radii)) if radii else None,
            wall_ms=wall,
            block_size=block,
        ))
    return rows


def _run_cells(plan: ExperimentPlan, cells, n_jobs: int = 1) -> CoverageReport:
    rows = []
    for cell_idx, (d_x, d_u, epsilon, n) in enumerate(cells):
        fixed_system = None
        if not plan.fresh_system_per_trial:
            seq = np.random.SeedSequence(entropy=plan.seed, spawn_key=(cell_idx,))
            fixed_system = _draw_system(d_x, d_u, plan, np.random.default_rng(seq))
        if n_jobs == 1:
            outcomes = [_run_trial(plan, d_x, d_u, epsilon, n, cell_idx, t,
                                   fixed_system) for t in range(plan.s)]
        else:
            outcomes = Parallel(n_jobs=n_jobs, prefer="threads")(
                delayed(_run_trial)(plan, d_x, d_u, epsilon, n, cell_idx, t,
                                    fixed_system) for t in range(plan.s))
        rows.extend(_aggregate_cell(plan, d_x, d_u, epsilon, n, outcomes))
    return CoverageReport(rows=rows)


def run_coverage(plan: ExperimentPlan, n_jobs: int = 1) -> CoverageReport:
    """Coverage of the true parameter for every requested method and cell."""
    cells = [(d_x, d_u, eps, plan.n)
             for d_x, d_u in plan.dim_pairs() for eps in plan.epsilons()]
    return _run_cells(plan, cells, n_jobs=n_jobs)


def run_epsilon_sweep(plan: ExperimentPlan, n_jobs: int = 1) -> CoverageReport:
    """Coverage as a function of the exploitation rate (plan.epsilon tuple)."""
    if len(plan.epsilons()) < 2:
        raise ValueError("epsilon sweep needs a tuple of exploitation rates")
    return run_coverage(plan, n_jobs=n_jobs)


def run_sample_sweep(plan: ExperimentPlan, n_jobs: int = 1) -> CoverageReport:
    """Coverage and median squared radius as a function of the sample size."""
    if not plan.ns:
        raise ValueError("sample sweep needs plan.ns")
    cells = [(d_x, d_u, eps, int(n))
             for d_x, d_u in plan.dim_pairs() for eps in plan.epsilons()
             for n in plan.ns]
    return _run_cells(plan, cells, n_jobs=n_jobs)


def run_benchmark(plan: ExperimentPlan) -> CoverageReport:
    """Time the matrix and vectorized outer-approximation pipelines end to end.

    Both pipelines run on identical data and seeds; each is timed from region
    statistics to the final radius so the wall-time ratio reflects the full
    computation, not just the dual solves. Structural block sizes are exact.
    """
    rows = []
    for cell_idx, (d_x, d_u) in enumerate(plan.dim_pairs()):
        eps = plan.epsilons()[0]
        matrix_outcomes = []
        vector_outcomes = []
        for trial in range(plan.s):
            out = _benchmark_trial(plan, d_x, d_u, eps, cell_idx, trial)
            if out is None:
                matrix_outcomes.append(None)
                vector_outcomes.append(None)
            else:
                matrix_outcomes.append({METHOD_MATRIX_EOA: out[METHOD_MATRIX_EOA]})
                vector_outcomes.append({METHOD_VECTOR_EOA: out[METHOD_VECTOR_EOA]})
        sub = replace(plan, methods=(METHOD_MATRIX_EOA,))
        rows.extend(_aggregate_cell(sub, d_x, d_u, eps, plan.n, matrix_outcomes))
        sub = replace(plan, methods=(METHOD_VECTOR_EOA,))
        rows.extend(_aggregate_cell(sub, d_x, d_u, eps, plan.n, vector_outcomes))
    return CoverageReport(rows=rows)


def _benchmark_trial(plan, d_x, d_u, epsilon, cell_idx, trial):
    for attempt in range(plan.max_retries + 1):
        seq = np.random.SeedSequence(entropy=plan.seed,
                                     spawn_key=(cell_idx, trial, attempt))
        sys_seq, traj_seq, sps_seq = seq.spawn(3)
        try:
            a, b, k = _draw_system(d_x, d_u, plan, np.random.default_rng(sys_seq))
            spec = SystemSpec(A=a, B=b, K=k, epsilon=epsilon, noise=plan.noise)
            traj = simulate(spec, plan.n, rng=np.random.default_rng(traj_seq))
            data = build_direct(traj)
            theta_true = spec.direct_parameter()
            data = build_instruments(data, traj)

            t0 = time.perf_counter()
            region = SpsRegion(m=plan.m, q=plan.q,
                               random_state=np.random.default_rng(sps_seq)).fit(data)
            matrix_ell = outer_approximation(region)
            matrix_ms = 1e3 * (time.perf_counter() - t0)

            t0 = time.perf_counter()
            problem = vectorize(data)
            vector_ell = vectorized_outer_approximation(
                problem, m=plan.m, q=plan.q,
                random_state=np.random.default_rng(sps_seq))
            vector_ms = 1e3 * (time.perf_counter() - t0)

            theta_vec = flatten_parameter(theta_true, d_x)
            return {
                METHOD_MATRIX_EOA: (matrix_ell.contains(theta_true),
                                    matrix_ell.radius_sq, matrix_ms),
                METHOD_VECTOR_EOA: (vector_ell.contains(theta_vec.reshape(-1, 1)),
                                    vector_ell.radius_sq, vector_ms),
            }
        except _RECOVERABLE:
            continue
    return None


def relative_wall_times(report: CoverageReport) -> dict:
    """Per-dimension ratio of matrix to vectorized pipeline wall time."""
    ratios = {}
    dims = sorted({r.dim for r in report.rows})
    for dim in dims:
        matrix = report.find(dim=dim, method=METHOD_MATRIX_EOA)
        vector = report.find(dim=dim, method=METHOD_VECTOR_EOA)
        ratios[dim] = matrix.wall_ms / vector.wall_ms if vector.wall_ms > 0 else float("nan")
    return ratios
