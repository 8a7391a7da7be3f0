"""Input validation and small positive-definite linear algebra helpers."""

from __future__ import annotations

import numpy as np

from .exceptions import DegeneracyError

#: Condition number above which a matrix is treated as numerically singular.
MAX_CONDITION = 1e12

#: Relative eigenvalue floor below which a symmetric matrix is not accepted as PD.
PD_EIGENVALUE_FLOOR = 1e-12


def as_matrix(x, name: str, rows: int | None = None, cols: int | None = None,
              square: bool = False) -> np.ndarray:
    """Coerce ``x`` to a 2-d float array and check its shape."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    if square and a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {a.shape[1]}")
    return a


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def check_condition(m: np.ndarray, name: str, max_cond: float = MAX_CONDITION) -> None:
    """Raise :class:`DegeneracyError` naming ``m`` if it is ill-conditioned."""
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > max_cond:
        raise DegeneracyError(
            f"instrument degeneracy: matrix {name} has condition number "
            f"{cond:.3e} (limit {max_cond:.1e})"
        )


def principal_sqrt_spd(p: np.ndarray, name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Principal square root and inverse square root of a symmetric PD matrix.

    Returns ``(S, S_inv)`` with ``S @ S == p`` and ``S_inv = S^{-1}``, both
    symmetric. Raises :class:`DegeneracyError` when the smallest eigenvalue is
    at or below ``PD_EIGENVALUE_FLOOR`` times the largest.
    """
    sym = 0.5 * (p + p.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[-1] <= 0 or eigvals[0] <= PD_EIGENVALUE_FLOOR * eigvals[-1]:
        raise DegeneracyError(
            f"{name} is not positive definite (eigenvalues in "
            f"[{eigvals[0]:.3e}, {eigvals[-1]:.3e}])"
        )
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    inv_root = (eigvecs / np.sqrt(eigvals)) @ eigvecs.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def solve_spd(p: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``p @ x = b`` for symmetric positive definite ``p``."""
    return np.linalg.solve(p, b)
