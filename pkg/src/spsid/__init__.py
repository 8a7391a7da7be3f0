"""Exact finite-sample confidence regions for closed-loop LSS identification.

The package simulates closed-loop stochastic linear state-space systems,
assembles instrumental-variable regression problems from trajectories, and
constructs distribution-free confidence regions for the parameter matrices
via sign-perturbed residual sums, together with ellipsoidal outer
approximations and an asymptotic-theory baseline. A Monte Carlo engine and a
CLI reproduce coverage tables, exploitation sweeps, sample-size sweeps and a
structural benchmark.
"""

from .eoa import (DualInstance, Ellipsoid, build_dual, dual_block_size,
                  load_ellipsoid_csv, outer_approximation, save_ellipsoid_csv,
                  solve_dual, vectorized_outer_approximation)
from .estimators import (AsymptoticEllipsoid, chi2_cdf, chi2_quantile,
                         iv_estimate, iv_estimate_vectorized, ls_estimate)
from .exceptions import (ConfigError, DegeneracyError, RiccatiError, SpsidError,
                         UnderdeterminedError, UnstableTrajectoryError)
from .mc import (CoverageReport, CoverageRow, ExperimentPlan, run_benchmark,
                 run_coverage, run_epsilon_sweep, run_sample_sweep)
from .model import (GaussianMixtureNoise, GaussianNoise, LaplaceMixtureNoise,
                    SystemSpec, Trajectory, random_stable_system, simulate,
                    solve_dare, synthesize_lqr, system_from_config,
                    system_to_config)
from .regression import (RegressionData, VectorizedProblem, build_direct,
                         build_indirect, build_instruments, flatten_parameter,
                         load_regression_csv, save_regression_csv,
                         unflatten_parameter, vectorize)
from .sps import (SpsConfig, SpsRandomness, SpsRegion, draw_randomness,
                  fit_vectorized_region, load_randomness_csv,
                  save_randomness_csv)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticEllipsoid", "ConfigError", "CoverageReport", "CoverageRow",
    "DegeneracyError", "DualInstance", "Ellipsoid", "ExperimentPlan",
    "GaussianMixtureNoise", "GaussianNoise", "LaplaceMixtureNoise",
    "RegressionData", "RiccatiError", "SpsConfig", "SpsRandomness", "SpsRegion",
    "SpsidError", "SystemSpec", "Trajectory", "UnderdeterminedError",
    "UnstableTrajectoryError", "VectorizedProblem", "build_direct",
    "build_dual", "build_indirect", "build_instruments", "chi2_cdf",
    "chi2_quantile", "draw_randomness", "dual_block_size",
    "fit_vectorized_region", "flatten_parameter", "iv_estimate",
    "iv_estimate_vectorized", "load_ellipsoid_csv", "load_randomness_csv",
    "load_regression_csv", "ls_estimate", "outer_approximation",
    "random_stable_system", "run_benchmark", "run_coverage",
    "run_epsilon_sweep", "run_sample_sweep", "save_ellipsoid_csv",
    "save_randomness_csv", "save_regression_csv", "simulate", "solve_dare",
    "solve_dual", "synthesize_lqr", "system_from_config", "system_to_config",
    "unflatten_parameter", "vectorize", "vectorized_outer_approximation",
]
