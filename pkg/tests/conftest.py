"""Shared fixtures and helpers for the test suite."""

import math
from dataclasses import dataclass

import numpy as np
import pytest

import spsid as sp


@dataclass(frozen=True)
class ZeroNoise:
    """Degenerate noise-free sampler for exactness tests."""

    def sample(self, rng, n, dim):
        return np.zeros((n, dim))


def make_system(d_x=2, d_u=2, epsilon=0.0, noise=None, seed=0, lqr_q=1.0, lqr_v=1.0):
    rng = np.random.default_rng(seed)
    a, b = sp.random_stable_system(d_x, d_u, 0.9, rng=rng)
    k = sp.synthesize_lqr(a, b, lqr_q, lqr_v)
    return sp.SystemSpec(A=a, B=b, K=k, epsilon=epsilon,
                         noise=noise if noise is not None else sp.GaussianNoise())


def make_data(d_x=2, d_u=2, n=300, epsilon=0.0, noise=None, seed=0, mode="direct"):
    """Seeded system + trajectory + instrumented regression data + truth."""
    spec = make_system(d_x, d_u, epsilon, noise, seed)
    traj = sp.simulate(spec, n, rng=np.random.default_rng((seed, 1)))
    if mode == "direct":
        data = sp.build_direct(traj)
        theta_true = spec.direct_parameter()
    else:
        data, _, _ = sp.build_indirect(traj, spec)
        theta_true = spec.indirect_parameter()
    data = sp.build_instruments(data, traj)
    return spec, traj, data, theta_true


@pytest.fixture
def small_region():
    """A modest fitted region reused by several structural tests."""
    _, _, data, theta_true = make_data(d_x=2, d_u=2, n=300, seed=5)
    region = sp.SpsRegion(m=30, q=3, random_state=0).fit(data)
    return region, theta_true


def primal_boundary_value(inst, direction):
    """Largest feasible squared length along one normalized direction."""
    d = direction / np.linalg.norm(direction)
    a = float(np.sum(d * (inst.quad @ d)))
    b = float(np.sum(d * inst.cross))
    c = float(np.trace(inst.const))
    if a <= 0:
        if a < 0 or b != 0.0 or c <= 0:
            return math.inf
        return -math.inf
    disc = b * b - a * c
    if disc < 0:
        return -math.inf
    root = math.sqrt(disc)
    return max(((-b + root) / a) ** 2, ((-b - root) / a) ** 2)


def primal_search(inst, rng, n_dirs=2_000, refine=True):
    """Random-direction search with local refinement; lower bound on the max."""
    best_val = 0.0 if np.trace(inst.const) <= 0 else -math.inf
    best_dir = None
    for _ in range(n_dirs):
        direction = rng.standard_normal(inst.cross.shape)
        val = primal_boundary_value(inst, direction)
        if val > best_val:
            best_val, best_dir = val, direction
        if math.isinf(best_val):
            return best_val
    if refine and best_dir is not None:
        from scipy.optimize import minimize

        shape = best_dir.shape
        res = minimize(lambda v: -primal_boundary_value(inst, v.reshape(shape)),
                       best_dir.ravel(), method="Nelder-Mead",
                       options={"maxiter": 2_000, "xatol": 1e-10, "fatol": 1e-12})
        if -res.fun > best_val:
            best_val = -res.fun
    return best_val
