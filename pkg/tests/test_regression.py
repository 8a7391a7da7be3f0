"""Tests for regression assembly, instruments and vectorization."""

import numpy as np
import pytest

import spsid as sp
from spsid.exceptions import DegeneracyError, UnderdeterminedError

from conftest import ZeroNoise, make_data, make_system


class TestBuildDirect:
    def test_shapes(self):
        spec = make_system(2, 1, seed=0)
        traj = sp.simulate(spec, 5, rng=0)
        data = sp.build_direct(traj)
        assert data.Y.shape == (5, 2)
        assert data.Phi.shape == (5, 3)

    def test_residual_reproduces_noise(self):
        spec = make_system(2, 2, epsilon=0.4, seed=1)
        traj = sp.simulate(spec, 200, rng=2)
        data = sp.build_direct(traj)
        resid = data.Y - data.Phi @ spec.direct_parameter()
        assert np.allclose(resid, traj.noises, rtol=0, atol=1e-10)

    def test_noise_free_residual_zero(self):
        spec = make_system(2, 2, noise=ZeroNoise(), seed=3)
        traj = sp.simulate(spec, 100, rng=1)
        data = sp.build_direct(traj)
        resid = data.Y - data.Phi @ spec.direct_parameter()
        assert np.allclose(resid, 0.0, atol=1e-10)

    def test_underdetermined(self):
        spec = make_system(2, 2, seed=0)
        traj = sp.simulate(spec, 3, rng=0)
        with pytest.raises(UnderdeterminedError, match="underdetermined"):
            sp.build_direct(traj)


class TestBuildIndirect:
    def test_open_loop_reduces_to_plant(self):
        spec = make_system(2, 2, epsilon=0.0, seed=4)
        traj = sp.simulate(spec, 100, rng=0)
        _, c, d = sp.build_indirect(traj, spec)
        assert np.array_equal(c, spec.A)
        assert np.array_equal(d, spec.B)

    def test_full_feedback_kills_reference_gain(self):
        spec = make_system(2, 2, epsilon=1.0, seed=4)
        traj = sp.simulate(spec, 100, rng=0)
        _, c, d = sp.build_indirect(traj, spec)
        assert np.allclose(d, 0.0)

    def test_noise_free_residual_zero(self):
        spec = make_system(2, 2, epsilon=0.6, noise=ZeroNoise(), seed=5)
        traj = sp.simulate(spec, 100, rng=1)
        data, c, d = sp.build_indirect(traj, spec)
        theta = np.vstack([c.T, d.T])
        assert np.allclose(data.Y - data.Phi @ theta, 0.0, atol=1e-9)

    def test_residual_reproduces_noise(self):
        spec = make_system(2, 2, epsilon=0.6, seed=6)
        traj = sp.simulate(spec, 150, rng=3)
        data, c, d = sp.build_indirect(traj, spec)
        resid = data.Y - data.Phi @ np.vstack([c.T, d.T])
        assert np.allclose(resid, traj.noises, rtol=0, atol=1e-9)


class TestInstruments:
    def test_noise_free_replay_exact(self):
        # With no noise the pre-estimate is exact, so the replayed states
        # coincide with the simulated ones and the instruments equal the
        # regressors.
        spec = make_system(2, 2, epsilon=0.0, noise=ZeroNoise(), seed=7)
        traj = sp.simulate(spec, 80, rng=2)
        data = sp.build_instruments(sp.build_direct(traj), traj)
        assert np.allclose(data.Psi, data.Phi, atol=1e-8)

    def test_v_close_to_long_run(self):
        # Seeded check that the averaged cross matrix at n = 500 is within
        # 10% (Frobenius) of its n = 10^4 estimate, and well conditioned.
        spec = make_system(2, 2, epsilon=0.0, seed=123)
        vs = {}
        for n in (500, 10_000):
            traj = sp.simulate(spec, n, rng=np.random.default_rng((9, n)))
            data = sp.build_instruments(sp.build_direct(traj), traj)
            vs[n] = data.Psi.T @ data.Phi / n
        assert np.isfinite(np.linalg.cond(vs[500]))
        rel = np.linalg.norm(vs[500] - vs[10_000]) / np.linalg.norm(vs[10_000])
        assert rel < 0.10

    def test_full_feedback_decorrelates_instruments(self):
        # At eps = 1 the plant ignores the reference, so the replayed states
        # lose correlation with the true states (the flagged failure mode of
        # this instrument construction).
        def mean_abs_state_corr(epsilon):
            vals = []
            for t in range(5):
                spec = make_system(2, 2, epsilon=epsilon, seed=(50, t))
                traj = sp.simulate(spec, 500, rng=np.random.default_rng((51, t)))
                if epsilon == 1.0:
                    data, _, _ = sp.build_indirect(traj, spec)
                else:
                    data = sp.build_direct(traj)
                data = sp.build_instruments(data, traj)
                xbar = data.Psi[:, :2]
                x = data.Phi[:, :2]
                for j in range(2):
                    vals.append(abs(np.corrcoef(xbar[:, j], x[:, j])[0, 1]))
            return np.mean(vals)

        assert mean_abs_state_corr(0.0) > 0.9
        assert mean_abs_state_corr(1.0) < 0.25

    def test_degenerate_regressors_flagged(self):
        # A collinear regressor column must be reported by name.
        spec = make_system(2, 2, epsilon=1.0, seed=8)
        traj = sp.simulate(spec, 100, rng=1)
        with pytest.raises(DegeneracyError, match="Phi'Phi"):
            sp.build_instruments(sp.build_direct(traj), traj)

    def test_degenerate_instruments_flagged(self):
        spec = make_system(2, 2, epsilon=0.0, seed=8)
        traj = sp.simulate(spec, 100, rng=1)
        data = sp.build_direct(traj)
        bad = sp.RegressionData(Y=data.Y, Phi=data.Phi,
                                Psi=np.ones_like(data.Phi), mode=data.mode)
        with pytest.raises(DegeneracyError, match="Psi'Phi"):
            sp.SpsRegion(m=10, q=1, random_state=0).fit(bad)

    def test_two_sample_instruments_decorrelate_from_noise(self):
        # Instruments built from an independent second run: the empirical
        # correlation with the noise entries shrinks as n grows.
        def median_abs_corr(n, seeds=12):
            vals = []
            for t in range(seeds):
                spec = make_system(2, 2, epsilon=0.0, seed=(60, t))
                traj = sp.simulate(spec, n, rng=np.random.default_rng((61, t)))
                traj2 = sp.simulate(spec, n, rng=np.random.default_rng((62, t)))
                data = sp.build_direct(traj)
                data = sp.build_instruments(data, traj,
                                            estimate_data=sp.build_direct(traj2))
                vals.append(abs(np.corrcoef(data.Psi[:, 0], traj.noises[:, 0])[0, 1]))
            return np.median(vals)

        corr = [median_abs_corr(n) for n in (100, 1_000, 10_000)]
        assert corr[0] > corr[1] > corr[2]


class TestVectorize:
    def test_matches_matrix_product(self):
        _, _, data, _ = make_data(2, 2, n=60, seed=9)
        problem = sp.vectorize(data)
        rng = np.random.default_rng(0)
        for _ in range(100):
            theta = rng.standard_normal((data.d, data.d_x))
            lhs = problem.Xi @ sp.flatten_parameter(theta, data.d_x)
            rhs = (data.Phi @ theta).reshape(-1)
            assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)

    def test_scalar_output_collapse(self):
        _, _, data, _ = make_data(1, 1, n=40, seed=10)
        problem = sp.vectorize(data)
        assert np.array_equal(problem.Xi, data.Phi)
        assert np.array_equal(problem.Psi, data.Psi)
        assert np.array_equal(problem.y, data.Y[:, 0])

    def test_block_structure(self):
        _, _, data, _ = make_data(2, 1, n=30, seed=11)
        problem = sp.vectorize(data)
        assert problem.d_theta == 6
        # x_0 = 0 blanks the state block of the first d_x rows; every other
        # row carries exactly one regressor copy.
        nonzeros = np.count_nonzero(problem.Xi, axis=1)
        assert np.all(nonzeros[data.d_x:] == data.d)

    def test_iv_estimates_agree(self):
        # The vectorized solve decouples into the matrix normal equations.
        _, _, data, _ = make_data(2, 2, n=200, seed=12)
        problem = sp.vectorize(data)
        matrix_est = sp.iv_estimate(data)
        vector_est = sp.iv_estimate_vectorized(problem)
        flat = sp.flatten_parameter(matrix_est, data.d_x)
        assert np.linalg.norm(vector_est - flat) <= 1e-10 * np.linalg.norm(flat)

    def test_requires_instruments(self):
        spec = make_system(2, 2, seed=0)
        traj = sp.simulate(spec, 50, rng=0)
        with pytest.raises(ValueError, match="instruments"):
            sp.vectorize(sp.build_direct(traj))


class TestParameterLayout:
    def test_flatten_roundtrip(self):
        rng = np.random.default_rng(1)
        theta = rng.standard_normal((5, 2))
        flat = sp.flatten_parameter(theta, 2)
        assert np.array_equal(sp.unflatten_parameter(flat, 2, 3), theta)

    def test_layout_groups_rows(self):
        # First the rows of the state block, then the rows of the input block.
        theta = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])  # [A^T; B^T], d_x=2
        flat = sp.flatten_parameter(theta, 2)
        assert np.array_equal(flat, [1.0, 3.0, 2.0, 4.0, 5.0, 6.0])


class TestCsv:
    def test_roundtrip(self, tmp_path):
        _, _, data, _ = make_data(2, 2, n=40, seed=13)
        sp.save_regression_csv(data, str(tmp_path))
        loaded = sp.load_regression_csv(str(tmp_path), mode=data.mode)
        assert np.array_equal(loaded.Y, data.Y)
        assert np.array_equal(loaded.Phi, data.Phi)
        assert np.array_equal(loaded.Psi, data.Psi)

    def test_without_instruments(self, tmp_path):
        spec = make_system(2, 2, seed=0)
        traj = sp.simulate(spec, 30, rng=0)
        data = sp.build_direct(traj)
        sp.save_regression_csv(data, str(tmp_path))
        loaded = sp.load_regression_csv(str(tmp_path))
        assert loaded.Psi is None
        assert np.array_equal(loaded.Phi, data.Phi)
