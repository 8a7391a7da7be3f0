"""Closed-loop stochastic linear state-space models.

The plant is ``x_{k+1} = A x_k + B u_k + w_k`` driven by the mixed input law
``u_k = eps * K x_k + (1 - eps) * r_k``, where ``K`` is a state-feedback gain,
``r_k`` is an i.i.d. standard normal exploration signal and ``w_k`` is process
noise drawn from one of the symmetric noise families below. The exploitation
rate ``eps`` interpolates between open loop (0) and pure feedback (1).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import ConfigError, RiccatiError, UnstableTrajectoryError
from .validation import as_matrix, spectral_radius

#: Simulation aborts once a state norm exceeds this guard.
STATE_NORM_GUARD = 1e12


@dataclass(frozen=True)
class GaussianNoise:
    """I.i.d. zero-mean Gaussian noise with per-component std ``sigma``."""

    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        return self.sigma * rng.standard_normal((n, dim))


@dataclass(frozen=True)
class GaussianMixtureNoise:
    """Even mixture of two Gaussian vectors centered at ``+mu*1`` and ``-mu*1``.

    Each noise vector is drawn from N(s * mu * 1, sigma_w * I) where the sign
    ``s`` is +1 or -1 with probability one half, shared across components.
    ``sigma_w`` scales the covariance, so the per-component std is
    ``sqrt(sigma_w)``. The mixture is symmetric about zero as a vector
    distribution, but not component-wise sign-flip invariant.
    """

    mu: float = 1.0
    sigma_w: float = 1.0

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValueError("sigma_w must be positive")

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        signs = rng.choice([-1.0, 1.0], size=(n, 1))
        return signs * self.mu + np.sqrt(self.sigma_w) * rng.standard_normal((n, dim))


@dataclass(frozen=True)
class LaplaceMixtureNoise:
    """Time-varying even mixture of two Laplace vectors.

    At step k (0-based) the location is ``s * 5*(k+1)/h * 1`` with a shared
    random sign ``s``, and every component is an independent Laplace draw with
    scale ``(k+1)/h + sigma_w``. The schedule length ``h`` defaults to the
    number of requested samples, so the mixture drifts and widens over the
    course of a run while staying symmetric about zero.
    """

    sigma_w: float = 1.0
    horizon: int | None = None

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValueError("sigma_w must be positive")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be a positive integer")

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        h = self.horizon if self.horizon is not None else n
        steps = (np.arange(n, dtype=float) + 1.0) / h
        signs = rng.choice([-1.0, 1.0], size=(n, 1))
        loc = signs * (5.0 * steps)[:, None]
        scale = (steps + self.sigma_w)[:, None]
        return rng.laplace(loc=np.broadcast_to(loc, (n, dim)),
                           scale=np.broadcast_to(scale, (n, dim)))


NoiseModel = Union[GaussianNoise, GaussianMixtureNoise, LaplaceMixtureNoise]

#: Config-file names for the noise families.
NOISE_FAMILIES = {
    "gaussian": GaussianNoise,
    "gaussian-mixture": GaussianMixtureNoise,
    "laplace-mixture": LaplaceMixtureNoise,
}


@dataclass(frozen=True)
class SystemSpec:
    """Ground-truth plant, feedback gain and noise family for simulation."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    epsilon: float
    noise: NoiseModel

    def __post_init__(self):
        a = as_matrix(self.A, "A", square=True)
        b = as_matrix(self.B, "B", rows=a.shape[0])
        k = as_matrix(self.K, "K", rows=b.shape[1], cols=a.shape[0])
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "K", k)
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        rho = spectral_radius(a + self.epsilon * b @ k)
        if rho >= 1.0:
            raise ValueError(
                f"closed loop A + eps*B*K is unstable (spectral radius {rho:.4f})"
            )

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_u(self) -> int:
        return self.B.shape[1]

    @property
    def d_r(self) -> int:
        # The exploration signal enters through (1 - eps) * I, so d_r = d_u.
        return self.d_u

    def direct_parameter(self) -> np.ndarray:
        """True parameter of the direct regression, ``[A^T; B^T]``."""
        return np.vstack([self.A.T, self.B.T])

    def closed_loop_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Closed-loop pair ``(C, D) = (A + eps*B*K, (1 - eps)*B)``."""
        return self.A + self.epsilon * self.B @ self.K, (1.0 - self.epsilon) * self.B

    def indirect_parameter(self) -> np.ndarray:
        """True parameter of the indirect regression, ``[C^T; D^T]``."""
        c, d = self.closed_loop_matrices()
        return np.vstack([c.T, d.T])


@dataclass(frozen=True)
class Trajectory:
    """A simulated run: states x_0..x_n plus the inputs that produced them.

    Invariants (exact, reproducible floating point identities):
    ``states[k+1] == A @ states[k] + B @ inputs[k] + noises[k]`` and
    ``inputs[k] == eps * (K @ states[k]) + (1 - eps) * references[k]``.
    """

    states: np.ndarray      # (n+1, d_x)
    inputs: np.ndarray      # (n, d_u)
    references: np.ndarray  # (n, d_r)
    noises: np.ndarray      # (n, d_x), kept for diagnostics and replay tests

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               rel_tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates ``P <- A'PA - A'PB (R + B'PB)^{-1} B'PA + Q`` from ``P = Q``
    until the relative change drops below ``rel_tol``. Small state dimensions
    only; raises :class:`RiccatiError` on divergence or non-convergence.
    """
    A = as_matrix(A, "A", square=True)
    B = as_matrix(B, "B", rows=A.shape[0])
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = A.T @ P @ A - (A.T @ P @ B) @ gain + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.linalg.norm(P_next) > 1e14:
            raise RiccatiError(
                "Riccati iteration diverged; (A, B) may not be stabilizable"
            )
        delta = np.linalg.norm(P_next - P) / max(1.0, np.linalg.norm(P_next))
        P = P_next
        if delta <= rel_tol:
            return P
    raise RiccatiError(f"Riccati iteration did not converge in {max_iter} steps")


def synthesize_lqr(A: np.ndarray, B: np.ndarray, q_weight: float = 1.0,
                   v_weight: float = 1.0) -> np.ndarray:
    """Infinite-horizon LQR gain for cost ``sum q*|x|^2 + v*|u|^2``.

    Returns ``K`` with the sign convention ``u = K x`` (the conventional minus
    sign is absorbed into ``K``), so the closed loop ``A + B K`` is stable.
    """
    if q_weight <= 0 or v_weight <= 0:
        raise ValueError("cost weights must be positive")
    A = as_matrix(A, "A", square=True)
    B = as_matrix(B, "B", rows=A.shape[0])
    Q = q_weight * np.eye(A.shape[0])
    R = v_weight * np.eye(B.shape[1])
    P = solve_dare(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise RiccatiError(
            f"LQR synthesis produced an unstable closed loop (radius {rho:.4f})"
        )
    return K


def random_stable_system(d_x: int, d_u: int, target_radius: float = 0.9,
                         rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw a random plant: ``A`` rescaled to a target spectral radius, ``B ~ U(1, 10)``.

    ``A`` starts from i.i.d. standard normal entries and is rescaled so its
    spectral radius equals ``target_radius`` exactly; ``B`` entries are
    uniform on (1, 10). Deterministic given the seed.
    """
    if not 0.0 < target_radius < 1.0:
        raise ValueError("target_radius must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    while True:
        raw = rng.standard_normal((d_x, d_x))
        rho = spectral_radius(raw)
        if rho > 0.0:
            break
    A = raw * (target_radius / rho)
    B = rng.uniform(1.0, 10.0, size=(d_x, d_u))
    return A, B


def simulate(spec: SystemSpec, n: int, x0: np.ndarray | None = None,
             rng=None, references: np.ndarray | None = None) -> Trajectory:
    """Simulate ``n`` steps of the closed-loop system.

    References are drawn i.i.d. standard normal, then the process noise is
    drawn from ``spec.noise`` (in that order, so the stream layout is part of
    the reproducibility contract); an explicit ``references`` array replaces
    the draw. Raises :class:`UnstableTrajectoryError` if a state norm passes
    the overflow guard.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng)
    d_x, d_u = spec.d_x, spec.d_u
    if references is None:
        refs = rng.standard_normal((n, spec.d_r))
    else:
        refs = as_matrix(references, "references", rows=n, cols=spec.d_r)
    noises = spec.noise.sample(rng, n, d_x)
    x = np.zeros(d_x) if x0 is None else np.asarray(x0, dtype=float).reshape(d_x)

    states = np.empty((n + 1, d_x))
    inputs = np.empty((n, d_u))
    states[0] = x
    eps = spec.epsilon
    for k in range(n):
        u = eps * (spec.K @ states[k]) + (1.0 - eps) * refs[k]
        x_next = spec.A @ states[k] + spec.B @ u + noises[k]
        if np.linalg.norm(x_next) > STATE_NORM_GUARD:
            raise UnstableTrajectoryError(
                f"unstable trajectory: |x_{k + 1}| exceeded {STATE_NORM_GUARD:.1e}"
            )
        inputs[k] = u
        states[k + 1] = x_next
    return Trajectory(states=states, inputs=inputs, references=refs, noises=noises)


def save_trajectory_csv(path: str, traj: Trajectory) -> None:
    """Write a trajectory as CSV: one row per step plus the terminal state."""
    import csv

    d_x = traj.states.shape[1]
    d_u = traj.inputs.shape[1]
    d_r = traj.references.shape[1]
    header = (["k"] + [f"x{j}" for j in range(d_x)] + [f"u{j}" for j in range(d_u)]
              + [f"r{j}" for j in range(d_r)] + [f"w{j}" for j in range(d_x)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(traj.n):
            writer.writerow([k] + [repr(float(v)) for v in traj.states[k]]
                            + [repr(float(v)) for v in traj.inputs[k]]
                            + [repr(float(v)) for v in traj.references[k]]
                            + [repr(float(v)) for v in traj.noises[k]])
        writer.writerow([traj.n] + [repr(float(v)) for v in traj.states[traj.n]]
                        + [""] * (d_u + d_r + d_x))


def load_trajectory_csv(path: str) -> Trajectory:
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    d_x = sum(1 for h in header if h.startswith("x"))
    d_u = sum(1 for h in header if h.startswith("u"))
    d_r = sum(1 for h in header if h.startswith("r"))
    n = len(rows) - 1
    states = np.empty((n + 1, d_x))
    inputs = np.empty((n, d_u))
    refs = np.empty((n, d_r))
    noises = np.empty((n, d_x))
    for row in rows:
        k = int(row[0])
        states[k] = [float(v) for v in row[1:1 + d_x]]
        if k < n:
            inputs[k] = [float(v) for v in row[1 + d_x:1 + d_x + d_u]]
            refs[k] = [float(v) for v in row[1 + d_x + d_u:1 + d_x + d_u + d_r]]
            noises[k] = [float(v) for v in row[1 + d_x + d_u + d_r:]]
    return Trajectory(states=states, inputs=inputs, references=refs, noises=noises)


# ---------------------------------------------------------------------------
# Structured-text serialization of the system recipe.
#
# The config stores the recipe (dims, seed, radius, eps, noise family, LQR
# weights) rather than raw matrices, so a file round-trips to the identical
# system on any machine.
# ---------------------------------------------------------------------------

def noise_from_params(family: str, params: dict) -> NoiseModel:
    try:
        cls = NOISE_FAMILIES[family]
    except KeyError:
        known = ", ".join(sorted(NOISE_FAMILIES))
        raise ConfigError(f"unknown noise family {family!r} (expected one of {known})")
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for noise family {family!r}: {exc}")


def noise_to_params(noise: NoiseModel) -> tuple[str, dict]:
    for name, cls in NOISE_FAMILIES.items():
        if isinstance(noise, cls):
            params = {k: v for k, v in vars(noise).items() if v is not None}
            return name, params
    raise ValueError(f"unknown noise model {noise!r}")


def _get(section, key, conv, cfg_name):
    if key not in section:
        raise ConfigError(f"missing key {key!r} in section [{cfg_name}]")
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {cfg_name}.{key}: {exc}")


def system_from_config(text: str) -> tuple[SystemSpec, dict]:
    """Build a :class:`SystemSpec` from a key = value config string.

    Returns the spec together with the parsed recipe dictionary (dims, seed,
    target_radius, epsilon, noise family and params, LQR weights).
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}")
    if "system" not in cp:
        raise ConfigError("missing [system] section")
    sys_sec = cp["system"]
    d_x = _get(sys_sec, "d_x", int, "system")
    d_u = _get(sys_sec, "d_u", int, "system")
    seed = _get(sys_sec, "seed", int, "system")
    target_radius = _get(sys_sec, "target_radius", float, "system")
    epsilon = _get(sys_sec, "epsilon", float, "system")

    noise_sec = cp["noise"] if "noise" in cp else {}
    family = noise_sec.get("family", "gaussian")
    params = {k: float(v) for k, v in noise_sec.items() if k != "family"}
    if family == "laplace-mixture" and "horizon" in params:
        params["horizon"] = int(params["horizon"])
    noise = noise_from_params(family, params)

    lqr_sec = cp["lqr"] if "lqr" in cp else {}
    lqr_q = float(lqr_sec.get("q", 1.0))
    lqr_v = float(lqr_sec.get("v", 1.0))

    A, B = random_stable_system(d_x, d_u, target_radius, rng=seed)
    K = synthesize_lqr(A, B, lqr_q, lqr_v)
    spec = SystemSpec(A=A, B=B, K=K, epsilon=epsilon, noise=noise)
    recipe = {
        "d_x": d_x, "d_u": d_u, "seed": seed, "target_radius": target_radius,
        "epsilon": epsilon, "noise_family": family, "noise_params": params,
        "lqr_q": lqr_q, "lqr_v": lqr_v,
    }
    return spec, recipe


def system_to_config(recipe: dict) -> str:
    """Format a recipe dictionary (as returned by ``system_from_config``)."""
    cp = configparser.ConfigParser()
    cp["system"] = {
        "d_x": str(recipe["d_x"]),
        "d_u": str(recipe["d_u"]),
        "seed": str(recipe["seed"]),
        "target_radius": repr(recipe["target_radius"]),
        "epsilon": repr(recipe["epsilon"]),
    }
    noise = {"family": recipe["noise_family"]}
    noise.update({k: repr(v) for k, v in recipe["noise_params"].items()})
    cp["noise"] = noise
    cp["lqr"] = {"q": repr(recipe["lqr_q"]), "v": repr(recipe["lqr_v"])}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
