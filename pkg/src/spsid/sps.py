"""Sign-perturbed sums confidence regions for instrumental-variable regression.

The region is defined through an indicator: a candidate parameter matrix is
accepted when the squared Frobenius norm of its unperturbed instrumented
residual sum is not among the ``q`` largest of the ``m`` values obtained by
sign-perturbing the residual rows. With instruments independent of a noise
sequence that is symmetric about zero row-wise, the true parameter is covered
with probability exactly ``1 - q/m`` for any sample size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import UnderdeterminedError
from .validation import as_matrix, check_condition, principal_sqrt_spd

#: Chunk size for batched membership evaluation.
_PREDICT_CHUNK = 512


@dataclass(frozen=True)
class SpsConfig:
    """Perturbation count ``m`` and exclusion count ``q``; level is 1 - q/m."""

    m: int = 100
    q: int = 10

    def __post_init__(self):
        if not (isinstance(self.m, int) and isinstance(self.q, int)):
            raise ValueError("m and q must be integers")
        if not 0 < self.q < self.m:
            raise ValueError("need m > q > 0")

    @property
    def p(self) -> float:
        return 1.0 - self.q / self.m

    @classmethod
    def from_confidence(cls, p: float) -> "SpsConfig":
        """Smallest (m, q) with 1 - q/m equal to the rational level ``p``."""
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        tail = Fraction(1.0 - p).limit_denominator(10**6)
        return cls(m=tail.denominator, q=tail.numerator)


@dataclass(frozen=True)
class SpsRandomness:
    """The random signs and tie-breaking permutation drawn once per region.

    ``signs`` has one row of +-1 per perturbation (shape (m-1, rows)), and
    ``permutation`` is a uniform random permutation of {0, ..., m-1} used to
    break exact ties in the rank comparison.
    """

    signs: np.ndarray
    permutation: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=np.int8)
        perm = np.asarray(self.permutation, dtype=np.int64)
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +1 or -1")
        m = signs.shape[0] + 1
        if sorted(perm.tolist()) != list(range(m)):
            raise ValueError("permutation must be a bijection on {0, ..., m-1}")
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "permutation", perm)

    @property
    def m(self) -> int:
        return self.signs.shape[0] + 1


def draw_randomness(m: int, rows: int, rng=None) -> SpsRandomness:
    """Draw i.i.d. +-1 signs and a uniform permutation from ``rng``."""
    rng = np.random.default_rng(rng)
    signs = (2 * rng.integers(0, 2, size=(m - 1, rows), dtype=np.int8) - 1)
    perm = rng.permutation(m)
    return SpsRandomness(signs=signs, permutation=perm)


def save_randomness_csv(path: str, randomness: SpsRandomness) -> None:
    """Write signs and permutation as explicit (kind, row, col, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "row", "col", "value"])
        for j, v in enumerate(randomness.permutation):
            writer.writerow(["permutation", j, 0, int(v)])
        for i, row in enumerate(randomness.signs):
            for k, v in enumerate(row):
                writer.writerow(["sign", i, k, int(v)])


def load_randomness_csv(path: str) -> SpsRandomness:
    perm_entries: list[tuple[int, int]] = []
    sign_entries: list[tuple[int, int, int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for kind, row, col, value in reader:
            if kind == "permutation":
                perm_entries.append((int(row), int(value)))
            elif kind == "sign":
                sign_entries.append((int(row), int(col), int(value)))
            else:
                raise ValueError(f"unknown row kind {kind!r}")
    perm = np.array([v for _, v in sorted(perm_entries)])
    n_rows = 1 + max(i for i, _, _ in sign_entries)
    n_cols = 1 + max(k for _, k, _ in sign_entries)
    signs = np.empty((n_rows, n_cols), dtype=np.int8)
    for i, k, v in sign_entries:
        signs[i, k] = v
    return SpsRandomness(signs=signs, permutation=perm)


class SpsRegion(BaseEstimator):
    """Exact finite-sample confidence region for a matrix regression parameter.

    Parameters
    ----------
    m : int
        Total number of compared sums (one reference plus m - 1 perturbed).
    q : int
        The region excludes parameters whose reference sum ranks among the
        ``q`` largest; the confidence level is ``1 - q/m``.
    random_state : int, Generator or None
        Seed for the signs and tie-breaking permutation.

    After ``fit`` the region is immutable and all queries are reentrant.
    Fitted attributes follow the trailing-underscore convention, notably
    ``theta_iv_`` (the IV point estimate, always a member of the region),
    ``P_``, ``P_sqrt_``, ``P_inv_sqrt_`` and ``V_``.
    """

    def __init__(self, m: int = 100, q: int = 10, random_state=None):
        self.m = m
        self.q = q
        self.random_state = random_state

    # -- construction -------------------------------------------------------

    def fit(self, X, y=None, instruments=None, randomness: SpsRandomness | None = None):
        """Cache the region statistics for output ``y`` and regressors ``X``.

        ``X`` may also be a :class:`~spsid.regression.RegressionData`, in
        which case ``y`` and ``instruments`` are taken from it. When
        ``instruments`` is omitted the regressors serve as their own
        instruments (which reduces the point estimate to least squares).
        An explicit ``randomness`` overrides the seeded draw, for
        cross-implementation reproducibility.
        """
        config = SpsConfig(m=self.m, q=self.q)
        if y is None and hasattr(X, "Phi"):
            data = X
            X, y, instruments = data.Phi, data.Y, data.Psi
        phi = as_matrix(X, "X")
        out = as_matrix(y, "y", rows=phi.shape[0])
        psi = phi if instruments is None else as_matrix(
            instruments, "instruments", rows=phi.shape[0], cols=phi.shape[1])
        n, d = phi.shape
        if n < d:
            raise UnderdeterminedError(f"underdetermined: n={n} rows for d={d} columns")

        gram = psi.T @ phi
        check_condition(gram, "Psi'Phi")
        p_mat = psi.T @ psi / n
        p_sqrt, p_inv_sqrt = principal_sqrt_spd(p_mat, "Psi'Psi/n")

        if randomness is None:
            randomness = draw_randomness(config.m, n, np.random.default_rng(self.random_state))
        elif randomness.m != config.m or randomness.signs.shape[1] != n:
            raise ValueError("randomness shape does not match (m, n)")

        # Per-perturbation averaged statistics; the residual sums evaluated at
        # any parameter follow from these without touching the raw data again.
        # The unperturbed reference is contracted through the same expression
        # (an all-ones sign row) so that identical sign patterns produce
        # bit-identical sums and exact ties break by the permutation alone.
        signs = np.vstack([np.ones((1, n)), randomness.signs.astype(float)])
        q_stack = np.einsum("in,nd,ne->ide", signs, psi, phi, optimize=True) / n
        m_stack = np.einsum("in,nd,nx->idx", signs, psi, out, optimize=True) / n

        self.n_ = n
        self.d_ = d
        self.d_x_ = out.shape[1]
        self.config_ = config
        self.randomness_ = randomness
        self.P_ = p_mat
        self.P_sqrt_ = p_sqrt
        self.P_inv_sqrt_ = p_inv_sqrt
        self.V_ = q_stack[0]
        self.theta_iv_ = np.linalg.solve(gram, psi.T @ out)
        self.Q_ = q_stack
        self.M_ = m_stack
        self._pq = np.matmul(p_inv_sqrt, q_stack)
        self._pm = np.matmul(p_inv_sqrt, m_stack)
        return self

    # -- queries -------------------------------------------------------------

    def perturbation_norms(self, theta) -> np.ndarray:
        """Squared Frobenius norms of the m weighted residual sums at ``theta``.

        Index 0 is the unperturbed reference, which vanishes at the IV
        estimate.
        """
        check_is_fitted(self)
        th = as_matrix(theta, "theta", rows=self.d_, cols=self.d_x_)
        s = self._pm - np.matmul(self._pq, th)
        return np.einsum("idx,idx->i", s, s)

    def rank(self, theta) -> int:
        """Position of the reference norm among all m norms (1 = smallest).

        Strictly-greater comparison with permutation tie-breaking: an exact
        tie counts only when the reference's permutation value is larger.
        """
        norms = self.perturbation_norms(theta)
        return int(self._ranks(norms[0:1, None], norms[1:, None])[0])

    def contains(self, theta) -> bool:
        """Membership indicator: rank at most m - q."""
        return self.rank(theta) <= self.config_.m - self.config_.q

    def predict(self, thetas) -> np.ndarray:
        """Batched membership for a (T, d, d_x) stack of parameter matrices."""
        check_is_fitted(self)
        stack = np.asarray(thetas, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        if stack.shape[1:] != (self.d_, self.d_x_):
            raise ValueError(
                f"expected stack of ({self.d_}, {self.d_x_}) matrices, got {stack.shape}")
        limit = self.config_.m - self.config_.q
        out = np.empty(stack.shape[0], dtype=bool)
        for start in range(0, stack.shape[0], _PREDICT_CHUNK):
            chunk = stack[start:start + _PREDICT_CHUNK]
            s = self._pm[:, None] - np.einsum("ide,tex->itdx", self._pq, chunk)
            norms = np.einsum("itdx,itdx->it", s, s)
            ranks = self._ranks(norms[0:1], norms[1:])
            out[start:start + chunk.shape[0]] = ranks <= limit
        return out

    def _ranks(self, ref: np.ndarray, others: np.ndarray) -> np.ndarray:
        perm = self.randomness_.permutation
        beats = (ref > others) | ((ref == others) & (perm[0] > perm[1:])[:, None])
        return 1 + beats.sum(axis=0)


def fit_vectorized_region(problem, m: int = 100, q: int = 10, random_state=None,
                          randomness: SpsRandomness | None = None) -> SpsRegion:
    """Scalar-variant region on a vectorized problem.

    This runs the same construction on the scalar regression
    ``(y, Xi, Psi)``, with one independent sign per scalar observation
    (``n * d_x`` signs per perturbation). Its exactness additionally requires
    the noise distribution to be symmetric component-wise, which is strictly
    stronger than the vector symmetry the matrix region needs.
    """
    region = SpsRegion(m=m, q=q, random_state=random_state)
    return region.fit(problem.Xi, problem.y.reshape(-1, 1), instruments=problem.Psi,
                      randomness=randomness)
