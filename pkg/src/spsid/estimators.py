"""Point estimates and the asymptotic-theory confidence ellipsoid baseline."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegeneracyError
from .validation import check_condition, solve_spd


def ls_estimate(data) -> np.ndarray:
    """Least-squares estimate minimizing ``|Y - Phi Theta|_F``.

    Solved via QR (``lstsq``), never by explicit inversion. Raises a
    degeneracy error when ``Phi'Phi`` is numerically singular.
    """
    phi, y = data.Phi, data.Y
    check_condition(phi.T @ phi, "Phi'Phi")
    theta, *_ = np.linalg.lstsq(phi, y, rcond=None)
    return theta


def iv_estimate(data) -> np.ndarray:
    """Instrumental-variable estimate solving ``Psi'(Y - Phi Theta) = 0``."""
    if data.Psi is None:
        raise ValueError("iv_estimate requires instruments")
    g = data.Psi.T @ data.Phi
    check_condition(g, "Psi'Phi")
    return np.linalg.solve(g, data.Psi.T @ data.Y)


def iv_estimate_vectorized(problem) -> np.ndarray:
    """IV estimate of the vectorized (scalar-output) problem."""
    g = problem.Psi.T @ problem.Xi
    check_condition(g, "Psi'Xi")
    return np.linalg.solve(g, problem.Psi.T @ problem.y)


# ---------------------------------------------------------------------------
# Chi-square quantiles via the regularized incomplete gamma function.
#
# Self-contained series + continued-fraction evaluation with bisection for
# the inverse; cross-checked against an independent implementation in the
# test suite.
# ---------------------------------------------------------------------------

def _lower_gamma_series(a: float, x: float) -> float:
    # Series expansion of P(a, x), reliable for x < a + 1.
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(1000):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_cf(a: float, x: float) -> float:
    # Modified Lentz continued fraction for Q(a, x), reliable for x >= a + 1.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_lower_gamma(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _lower_gamma_series(a, x)
    return 1.0 - _upper_gamma_cf(a, x)


def chi2_cdf(x: float, df: int) -> float:
    if x <= 0:
        return 0.0
    return regularized_lower_gamma(0.5 * df, 0.5 * x)


def chi2_quantile(p: float, df: int) -> float:
    """Quantile of the chi-square distribution with ``df`` degrees of freedom.

    Bisection on the CDF to absolute tolerance 1e-10 on the argument.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if df < 1:
        raise ValueError("df must be a positive integer")
    lo = 0.0
    hi = df + 10.0 * math.sqrt(2.0 * df) + 60.0
    while chi2_cdf(hi, df) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10:
            break
    return 0.5 * (lo + hi)


class AsymptoticEllipsoid(BaseEstimator):
    """Confidence ellipsoid from the asymptotic normality of the IV estimate.

    Fitted on a vectorized problem; the membership test is
    ``(theta - center)' R (theta - center) <= radius_sq`` where ``R`` is the
    empirical information-style matrix and ``radius_sq = mu * sigma_sq / N``
    with ``mu`` the chi-square quantile at the requested confidence level and
    ``N = n * d_x`` the number of scalar observations. The noise variance is
    estimated with the degrees-of-freedom divisor ``N - d_theta``. Coverage is
    only asymptotically calibrated.
    """

    def __init__(self, confidence: float = 0.9):
        self.confidence = confidence

    def fit(self, problem):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        big_n = problem.y.shape[0]
        d_theta = problem.d_theta
        if big_n <= d_theta:
            raise DegeneracyError(
                f"need more than {d_theta} scalar observations, got {big_n}"
            )
        center = iv_estimate_vectorized(problem)
        resid = problem.y - problem.Xi @ center
        sigma_sq = float(resid @ resid) / (big_n - d_theta)
        v = problem.Psi.T @ problem.Xi / big_n
        p = problem.Psi.T @ problem.Psi / big_n
        shape = v.T @ solve_spd(p, v)
        shape = 0.5 * (shape + shape.T)
        mu = chi2_quantile(self.confidence, d_theta)

        self.center_ = center
        self.shape_ = shape
        self.sigma_sq_ = sigma_sq
        self.mu_ = mu
        self.df_ = d_theta
        self.radius_sq_ = mu * sigma_sq / big_n
        return self

    def mahalanobis_sq(self, theta: np.ndarray) -> float:
        check_is_fitted(self)
        diff = np.asarray(theta, dtype=float).ravel() - self.center_
        return float(diff @ self.shape_ @ diff)

    def contains(self, theta: np.ndarray) -> bool:
        return self.mahalanobis_sq(theta) <= self.radius_sq_

    def predict(self, thetas: np.ndarray) -> np.ndarray:
        """Vectorized membership test for a (T, d_theta) stack of parameters."""
        check_is_fitted(self)
        diff = np.atleast_2d(np.asarray(thetas, dtype=float)) - self.center_
        vals = np.einsum("ti,ij,tj->t", diff, self.shape_, diff)
        return vals <= self.radius_sq_
