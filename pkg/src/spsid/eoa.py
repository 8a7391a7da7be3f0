"""Ellipsoidal outer approximation of a sign-perturbed sums region.

Each of the m - 1 perturbation comparisons defines a nonconvex quadratic
program: maximize the weighted distance from the point estimate over the set
where the reference sum does not exceed the i-th perturbed sum. Lagrange
duality reduces each program to a one-dimensional convex minimization over
the multiplier (the matrix variable of the equivalent semidefinite program
can be eliminated), and weak duality makes every dual optimum an upper bound
on its primal value. Taking the q-th largest dual optimum as the squared
radius therefore yields an ellipsoid that is guaranteed to contain the
indicator-defined region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .sps import SpsRegion, SpsRandomness, fit_vectorized_region
from .validation import as_matrix, check_condition

#: Absolute tolerance on the dual multiplier in the line search.
LAMBDA_TOL = 1e-9

#: Eigenvalues of the quadratic term at or below this level (relative to the
#: largest magnitude) make the dual infeasible, which signals an unbounded
#: primal direction.
_FEASIBILITY_FLOOR = 1e-12

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DualInstance:
    """Data of one per-perturbation program in whitened coordinates.

    The primal maximizes ``|Z|_F^2`` subject to
    ``Tr(Z' quad Z + Z' cross + cross' Z + const) <= 0`` where ``Z`` is the
    whitened deviation from the point estimate. ``quad`` is ``I`` minus a
    Gram-like product, so its eigenvalues never exceed one; ``const`` is
    symmetric negative semidefinite.
    """

    quad: np.ndarray    # (d, d), symmetric
    cross: np.ndarray   # (d, d_x)
    const: np.ndarray   # (d_x, d_x), symmetric
    index: int


def build_dual(region: SpsRegion, i: int) -> DualInstance:
    """Assemble the i-th dual instance (1 <= i <= m - 1) from region statistics."""
    if not 1 <= i < region.config_.m:
        raise ValueError(f"perturbation index must be in [1, {region.config_.m - 1}]")
    check_condition(region.V_, "V")
    q_i = region.Q_[i]
    m_i = region.M_[i]
    p = region.P_

    g = q_i @ np.linalg.solve(region.V_, region.P_sqrt_)
    gram = g.T @ np.linalg.solve(p, g)
    quad = np.eye(region.d_) - gram
    resid = m_i - q_i @ region.theta_iv_
    p_inv_resid = np.linalg.solve(p, resid)
    cross = g.T @ p_inv_resid
    const = -resid.T @ p_inv_resid
    return DualInstance(quad=0.5 * (quad + quad.T), cross=cross,
                        const=0.5 * (const + const.T), index=i)


def _terms(inst: DualInstance) -> tuple[np.ndarray, np.ndarray, float]:
    eigvals, eigvecs = np.linalg.eigh(inst.quad)
    weights = np.sum((eigvecs.T @ inst.cross) ** 2, axis=1)
    return eigvals, weights, float(np.trace(inst.const))


def _bound_value(eigvals, weights, trace_c, lam: float) -> float:
    """Upper bound produced by multiplier ``lam``; +inf when infeasible."""
    den = lam * eigvals - 1.0
    if np.any(den < 0.0):
        return math.inf
    at_zero = den == 0.0
    if np.any(at_zero):
        if np.any(weights[at_zero] > 0.0):
            return math.inf
        den = den[~at_zero]
        weights = weights[~at_zero]
    return lam * lam * float(np.sum(weights / den)) - lam * trace_c


def dual_feasible_from(inst: DualInstance) -> float | None:
    """Smallest feasible multiplier, or None when the dual is infeasible."""
    eigvals, _, _ = _terms(inst)
    floor = _FEASIBILITY_FLOOR * max(1.0, float(np.max(np.abs(eigvals))))
    if eigvals[0] <= floor:
        return None
    return 1.0 / eigvals[0]


def dual_objective(inst: DualInstance, lam: float) -> float:
    """Concave dual function of the primal (negative of the bound)."""
    eigvals, weights, trace_c = _terms(inst)
    if lam < 0:
        return -math.inf
    return -_bound_value(eigvals, weights, trace_c, lam)


def solve_dual(inst: DualInstance, lam_tol: float = LAMBDA_TOL) -> float:
    """Tightest dual upper bound on the primal maximum.

    Returns ``inf`` when the dual is infeasible (the corresponding primal
    direction is unbounded); that is a legitimate flagged outcome, not an
    error. The bound is convex in the multiplier on the feasible ray, so the
    minimum is located by doubling until the value increases and then
    golden-section search.
    """
    eigvals, weights, trace_c = _terms(inst)
    floor = _FEASIBILITY_FLOOR * max(1.0, float(np.max(np.abs(eigvals))))
    if eigvals[0] <= floor:
        return math.inf
    lam_lo = 1.0 / eigvals[0]
    if not np.any(weights > 0.0):
        # Linear bound; the minimum sits at the feasibility boundary.
        return _bound_value(eigvals, weights, trace_c, lam_lo)

    def f(lam):
        return _bound_value(eigvals, weights, trace_c, lam)

    f_lo = f(lam_lo)
    step = max(lam_lo, 1.0)
    prev_val = f_lo
    hi = lam_lo + step
    f_hi = f(hi)
    for _ in range(400):
        if np.isfinite(prev_val) and f_hi >= prev_val:
            break
        prev_val = f_hi
        step *= 2.0
        hi = lam_lo + step
        f_hi = f(hi)

    lo = lam_lo if np.isfinite(f_lo) else lam_lo * (1.0 + 1e-12) + 1e-300
    a, b = lo, hi
    x1 = b - _INV_GOLDEN * (b - a)
    x2 = a + _INV_GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(300):
        if b - a <= lam_tol * max(1.0, b):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_GOLDEN * (b - a)
            f2 = f(x2)
    candidates = [v for v in (f_lo, f1, f2, f(0.5 * (a + b))) if np.isfinite(v)]
    return min(candidates) if candidates else math.inf


@dataclass(frozen=True)
class Ellipsoid:
    """Compact region ``{Theta : |shape_map (Theta - center)|_F^2 <= radius_sq}``.

    ``radius_sq = inf`` marks an unbounded (but still valid) over-bound whose
    membership test accepts everything.
    """

    center: np.ndarray     # (d, d_x)
    shape_map: np.ndarray  # (d, d)
    radius_sq: float

    def __post_init__(self):
        center = as_matrix(self.center, "center")
        object.__setattr__(self, "center", center)
        object.__setattr__(
            self, "shape_map",
            as_matrix(self.shape_map, "shape_map", rows=center.shape[0], square=True))
        if not (self.radius_sq >= 0.0 or math.isinf(self.radius_sq)):
            raise ValueError("radius_sq must be nonnegative or inf")

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.radius_sq)

    def squared_distance(self, theta) -> float:
        th = as_matrix(theta, "theta", rows=self.center.shape[0],
                       cols=self.center.shape[1])
        z = self.shape_map @ (th - self.center)
        return float(np.sum(z * z))

    def contains(self, theta) -> bool:
        if self.unbounded:
            return True
        return self.squared_distance(theta) <= self.radius_sq

    def predict(self, thetas) -> np.ndarray:
        stack = np.asarray(thetas, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        if self.unbounded:
            return np.ones(stack.shape[0], dtype=bool)
        z = np.einsum("de,tex->tdx", self.shape_map, stack - self.center)
        return np.einsum("tdx,tdx->t", z, z) <= self.radius_sq


def outer_approximation(region: SpsRegion, n_jobs: int = 1) -> Ellipsoid:
    """Ellipsoid containing the region: q-th largest dual bound as radius.

    The m - 1 duals are independent; with ``n_jobs > 1`` they are solved in
    parallel and aggregated by index, so the result does not depend on the
    degree of parallelism.
    """
    m, q = region.config_.m, region.config_.q
    instances = [build_dual(region, i) for i in range(1, m)]
    if n_jobs == 1:
        gammas = np.array([solve_dual(inst) for inst in instances])
    else:
        gammas = np.array(Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(solve_dual)(inst) for inst in instances))
    radius_sq = float(np.sort(gammas)[-q])
    return Ellipsoid(center=region.theta_iv_,
                     shape_map=region.P_inv_sqrt_ @ region.V_,
                     radius_sq=radius_sq)


def vectorized_outer_approximation(problem, m: int = 100, q: int = 10,
                                   random_state=None,
                                   randomness: SpsRandomness | None = None,
                                   n_jobs: int = 1) -> Ellipsoid:
    """Outer approximation of the scalar-variant region in flattened space.

    The dual programs here carry Schur blocks of size ``d_theta + 1``
    (one per scalar parameter plus one), against ``2 d_x + d_u`` for the
    matrix pipeline, which is what makes the matrix route cheaper as the
    dimensions grow.
    """
    region = fit_vectorized_region(problem, m=m, q=q, random_state=random_state,
                                   randomness=randomness)
    return outer_approximation(region, n_jobs=n_jobs)


def dual_block_size(d_x: int, d_u: int, vectorized: bool = False) -> int:
    """Side length of the semidefinite constraint block of one dual program."""
    if vectorized:
        return d_x * d_x + d_x * d_u + 1
    return 2 * d_x + d_u


# ---------------------------------------------------------------------------
# Serialization: explicit (kind, row, col, value) triplets, one per entry.
# ---------------------------------------------------------------------------

def save_ellipsoid_csv(path: str, ellipsoid: Ellipsoid) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "row", "col", "value"])
        writer.writerow(["radius_sq", 0, 0, repr(ellipsoid.radius_sq)])
        for i, row in enumerate(ellipsoid.center):
            for j, v in enumerate(row):
                writer.writerow(["center", i, j, repr(float(v))])
        for i, row in enumerate(ellipsoid.shape_map):
            for j, v in enumerate(row):
                writer.writerow(["map", i, j, repr(float(v))])


def load_ellipsoid_csv(path: str) -> Ellipsoid:
    entries: dict[str, dict[tuple[int, int], float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for kind, row, col, value in reader:
            entries.setdefault(kind, {})[(int(row), int(col))] = float(value)

    def to_matrix(cells: dict[tuple[int, int], float]) -> np.ndarray:
        rows = 1 + max(i for i, _ in cells)
        cols = 1 + max(j for _, j in cells)
        out = np.empty((rows, cols))
        for (i, j), v in cells.items():
            out[i, j] = v
        return out

    return Ellipsoid(center=to_matrix(entries["center"]),
                     shape_map=to_matrix(entries["map"]),
                     radius_sq=entries["radius_sq"][(0, 0)])
