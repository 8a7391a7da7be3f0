"""Regression problems assembled from trajectories, plus instrument construction.

Direct identification regresses ``x_{k+1}`` on ``(x_k, u_k)`` and targets
``[A^T; B^T]``; indirect identification regresses on ``(x_k, r_k)`` and
targets the closed-loop pair ``[C^T; D^T]``. Instruments are built from a
least-squares pre-estimate by replaying a noiseless state sequence driven by
the exploration signal, which decouples them from the process noise.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .estimators import ls_estimate
from .exceptions import UnderdeterminedError
from .model import SystemSpec, Trajectory
from .validation import as_matrix, check_condition

MODE_DIRECT = "direct"
MODE_INDIRECT = "indirect"


@dataclass(frozen=True)
class RegressionData:
    """Output/regressor/instrument triple ``(Y, Phi, Psi)`` of one experiment.

    ``Y`` is n x d_x with rows ``x_{k+1}^T``. ``Phi`` is n x d with rows
    ``(x_k, u_k)`` in direct mode or ``(x_k, r_k)`` in indirect mode, so
    ``d = d_x + d_u``. ``Psi`` (same shape as ``Phi``) holds the instrument
    rows and is ``None`` until :func:`build_instruments` fills it.
    """

    Y: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray | None
    mode: str

    def __post_init__(self):
        y = as_matrix(self.Y, "Y")
        phi = as_matrix(self.Phi, "Phi", rows=y.shape[0])
        object.__setattr__(self, "Y", y)
        object.__setattr__(self, "Phi", phi)
        if self.Psi is not None:
            psi = as_matrix(self.Psi, "Psi", rows=phi.shape[0], cols=phi.shape[1])
            object.__setattr__(self, "Psi", psi)
        if self.mode not in (MODE_DIRECT, MODE_INDIRECT):
            raise ValueError(f"mode must be 'direct' or 'indirect', got {self.mode!r}")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.Phi.shape[1]

    @property
    def d_x(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class VectorizedProblem:
    """Scalar-output reformulation of a matrix regression.

    Rows are ordered (k, i): row ``k*d_x + i`` carries output component
    ``x_{k+1,i}``. Each regressor row has the d_x-vector part of the original
    row placed in the i-th block of width d_x and the input part in the i-th
    block of width d_u, all other entries zero. The parameter vector layout
    groups all rows of the first matrix block, then all rows of the second
    (see :func:`flatten_parameter`).
    """

    y: np.ndarray        # (n*d_x,)
    Xi: np.ndarray       # (n*d_x, d_theta)
    Psi: np.ndarray      # (n*d_x, d_theta)
    d_x: int
    d_u: int
    n: int

    @property
    def d_theta(self) -> int:
        return self.Xi.shape[1]


def flatten_parameter(theta: np.ndarray, d_x: int) -> np.ndarray:
    """Flatten a d x d_x parameter matrix to the vectorized layout.

    ``theta = [A^T; B^T]`` maps to ``(a_1, ..., a_{d_x}, b_1, ..., b_{d_x})``
    where ``a_i`` and ``b_i`` are the rows of ``A`` and ``B``.
    """
    theta = as_matrix(theta, "theta")
    return np.concatenate([theta[:d_x].T.ravel(), theta[d_x:].T.ravel()])


def unflatten_parameter(vec: np.ndarray, d_x: int, d_u: int) -> np.ndarray:
    """Inverse of :func:`flatten_parameter`."""
    vec = np.asarray(vec, dtype=float).ravel()
    if vec.size != d_x * (d_x + d_u):
        raise ValueError(f"expected {d_x * (d_x + d_u)} entries, got {vec.size}")
    a_t = vec[:d_x * d_x].reshape(d_x, d_x).T
    b_t = vec[d_x * d_x:].reshape(d_x, d_u).T
    return np.vstack([a_t, b_t])


def build_direct(traj: Trajectory) -> RegressionData:
    """Direct regression: ``Y`` rows ``x_{k+1}``, ``Phi`` rows ``(x_k, u_k)``."""
    phi = np.hstack([traj.states[:-1], traj.inputs])
    if traj.n < phi.shape[1]:
        raise UnderdeterminedError(
            f"underdetermined: n={traj.n} samples for d={phi.shape[1]} regressors"
        )
    return RegressionData(Y=traj.states[1:].copy(), Phi=phi, Psi=None,
                          mode=MODE_DIRECT)


def build_indirect(traj: Trajectory, spec: SystemSpec
                   ) -> tuple[RegressionData, np.ndarray, np.ndarray]:
    """Indirect regression on ``(x_k, r_k)`` plus its ground truth ``(C, D)``."""
    phi = np.hstack([traj.states[:-1], traj.references])
    if traj.n < phi.shape[1]:
        raise UnderdeterminedError(
            f"underdetermined: n={traj.n} samples for d={phi.shape[1]} regressors"
        )
    data = RegressionData(Y=traj.states[1:].copy(), Phi=phi, Psi=None,
                          mode=MODE_INDIRECT)
    c, d = spec.closed_loop_matrices()
    return data, c, d


def build_instruments(data: RegressionData, traj: Trajectory,
                      estimate_data: RegressionData | None = None) -> RegressionData:
    """Fill ``Psi`` with instruments replayed from a least-squares pre-estimate.

    The LS estimate of ``data`` (or of ``estimate_data`` when given, the
    two-sample variant whose instruments are exactly independent of the noise)
    is split into state/input blocks, a noiseless state sequence
    ``xbar_{k+1} = Ahat xbar_k + Bhat r_k`` is generated from ``xbar_0 = 0``,
    and the instrument rows are ``(xbar_k, r_k)``. Raises a degeneracy error
    naming the failing matrix when ``Phi'Phi`` or ``Psi'Phi`` is
    ill-conditioned.
    """
    base = data if estimate_data is None else estimate_data
    check_condition(base.Phi.T @ base.Phi, "Phi'Phi")
    theta_ls = ls_estimate(base)
    d_x = data.d_x
    a_hat = theta_ls[:d_x].T
    b_hat = theta_ls[d_x:].T

    refs = traj.references
    n = data.n
    xbar = np.zeros((n, d_x))
    for k in range(n - 1):
        xbar[k + 1] = a_hat @ xbar[k] + b_hat @ refs[k]
    psi = np.hstack([xbar, refs])
    check_condition(psi.T @ data.Phi, "Psi'Phi")
    return replace(data, Psi=psi)


def vectorize(data: RegressionData) -> VectorizedProblem:
    """Rewrite a matrix regression as one scalar regression per output entry."""
    if data.Psi is None:
        raise ValueError("vectorize requires instruments; call build_instruments first")
    n, d_x, d = data.n, data.d_x, data.d
    d_u = d - d_x
    d_theta = d_x * d
    big_n = n * d_x
    xi = np.zeros((big_n, d_theta))
    psi = np.zeros((big_n, d_theta))
    for i in range(d_x):
        xi[i::d_x, i * d_x:(i + 1) * d_x] = data.Phi[:, :d_x]
        xi[i::d_x, d_x * d_x + i * d_u:d_x * d_x + (i + 1) * d_u] = data.Phi[:, d_x:]
        psi[i::d_x, i * d_x:(i + 1) * d_x] = data.Psi[:, :d_x]
        psi[i::d_x, d_x * d_x + i * d_u:d_x * d_x + (i + 1) * d_u] = data.Psi[:, d_x:]
    y = data.Y.reshape(-1)
    return VectorizedProblem(y=y, Xi=xi, Psi=psi, d_x=d_x, d_u=d_u, n=n)


# ---------------------------------------------------------------------------
# CSV export/import: one file per matrix, header row with column names.
# ---------------------------------------------------------------------------

def _write_matrix_csv(path: str, m: np.ndarray, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"{prefix}{j}" for j in range(m.shape[1])])
        for row in m:
            writer.writerow([repr(float(v)) for v in row])


def _read_matrix_csv(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]])


def save_regression_csv(data: RegressionData, directory: str) -> None:
    """Write ``Y.csv``, ``Phi.csv`` and (when present) ``Psi.csv``."""
    os.makedirs(directory, exist_ok=True)
    _write_matrix_csv(os.path.join(directory, "Y.csv"), data.Y, "y")
    _write_matrix_csv(os.path.join(directory, "Phi.csv"), data.Phi, "phi")
    if data.Psi is not None:
        _write_matrix_csv(os.path.join(directory, "Psi.csv"), data.Psi, "psi")


def load_regression_csv(directory: str, mode: str = MODE_DIRECT) -> RegressionData:
    y = _read_matrix_csv(os.path.join(directory, "Y.csv"))
    phi = _read_matrix_csv(os.path.join(directory, "Phi.csv"))
    psi_path = os.path.join(directory, "Psi.csv")
    psi = _read_matrix_csv(psi_path) if os.path.exists(psi_path) else None
    return RegressionData(Y=y, Phi=phi, Psi=psi, mode=mode)
