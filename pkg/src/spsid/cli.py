"""Command-line entry point.

Subcommands: simulate, indicator, eoa, coverage, sweep-epsilon, sweep-n,
bench. Configuration files are plain key = value text with sections; see the
README for the schema. Exit codes: 0 on success, 2 on configuration errors,
1 on runtime errors.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import mc
from .eoa import outer_approximation, save_ellipsoid_csv
from .exceptions import ConfigError, SpsidError
from .model import (noise_from_params, save_trajectory_csv, simulate,
                    system_from_config)
from .regression import (MODE_DIRECT, MODE_INDIRECT, build_direct, build_indirect,
                         build_instruments)
from .sps import SpsRegion


def _read_config(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure in {path}: {exc}")
    return cp


def _section(cp, name):
    if name not in cp:
        raise ConfigError(f"missing [{name}] section")
    return cp[name]


def _typed(section, name, key, conv, default=None):
    if key not in section:
        if default is not None:
            return default
        raise ConfigError(f"missing key {key!r} in section [{name}]")
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}.{key}: {exc}")


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_noise(cp):
    section = cp["noise"] if "noise" in cp else {}
    family = section.get("family", "gaussian")
    params = {k: float(v) for k, v in section.items() if k != "family"}
    if family == "laplace-mixture" and "horizon" in params:
        params["horizon"] = int(params["horizon"])
    return noise_from_params(family, params)


def _parse_dims(text: str) -> tuple:
    dims = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if "x" in chunk:
            d_x, d_u = chunk.split("x")
            dims.append((int(d_x), int(d_u)))
        else:
            dims.append(int(chunk))
    return tuple(dims)


def _parse_floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _parse_ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def plan_from_config(cp, seed_override=None) -> mc.ExperimentPlan:
    exp = _section(cp, "experiment")
    methods = tuple(v.strip() for v in exp.get("methods", "IN").split(","))
    epsilon = _parse_floats(exp.get("epsilon", "0.0"))
    try:
        plan = mc.ExperimentPlan(
            dims=_parse_dims(exp.get("dims", "2")),
            n=_typed(exp, "experiment", "n", int, 500),
            s=_typed(exp, "experiment", "s", int, 500),
            epsilon=epsilon if len(epsilon) > 1 else epsilon[0],
            noise=_parse_noise(cp),
            mode=exp.get("mode", MODE_DIRECT),
            methods=methods,
            seed=seed_override if seed_override is not None
            else _typed(exp, "experiment", "seed", int, 0),
            m=_typed(exp, "experiment", "m", int, 100),
            q=_typed(exp, "experiment", "q", int, 10),
            lqr_q=_typed(exp, "experiment", "lqr_q", float, 1.0),
            lqr_v=_typed(exp, "experiment", "lqr_v", float, 1.0),
            target_radius=_typed(exp, "experiment", "target_radius", float, 0.9),
            fresh_system_per_trial=_typed(exp, "experiment", "fresh_system",
                                          _parse_bool, True),
            ns=_parse_ints(exp["ns"]) if "ns" in exp else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    return plan


def _build_single_system(cp, seed_override=None):
    """System, trajectory, regression data and region settings for one run."""
    if seed_override is not None:
        if "system" not in cp:
            raise ConfigError("missing [system] section")
        cp["system"]["seed"] = str(seed_override)
    text_parts = []
    for name in cp.sections():
        text_parts.append(f"[{name}]")
        text_parts.extend(f"{k} = {v}" for k, v in cp[name].items())
    spec, recipe = system_from_config("\n".join(text_parts))

    data_sec = cp["data"] if "data" in cp else {}
    n = _typed(data_sec, "data", "n", int, 500)
    mode = data_sec.get("mode", MODE_DIRECT)
    if mode not in (MODE_DIRECT, MODE_INDIRECT):
        raise ConfigError(f"bad value for data.mode: {mode!r}")
    sps_sec = cp["sps"] if "sps" in cp else {}
    m = _typed(sps_sec, "sps", "m", int, 100)
    q = _typed(sps_sec, "sps", "q", int, 10)

    seed = recipe["seed"]
    traj = simulate(spec, n,
                    rng=np.random.default_rng(np.random.SeedSequence(
                        entropy=seed, spawn_key=(1,))))
    if mode == MODE_DIRECT:
        data = build_direct(traj)
        theta_true = spec.direct_parameter()
    else:
        data, _, _ = build_indirect(traj, spec)
        theta_true = spec.indirect_parameter()
    data = build_instruments(data, traj)
    sps_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(2,)))
    return spec, traj, data, theta_true, (m, q, sps_rng)


def _emit_report(report, out_path, quiet):
    if out_path:
        report.write_csv(out_path)
    if not quiet:
        for row in report.rows:
            radius = ("" if row.median_radius_sq is None
                      else f" median_radius_sq={row.median_radius_sq:.6g}")
            print(f"dim={row.dim} method={row.method} noise={row.noise} "
                  f"mode={row.mode} eps={row.epsilon:g} n={row.n} s={row.s} "
                  f"hits={row.hits} invalid={row.invalid} "
                  f"p_hat={row.p_hat:.4f}{radius}")


def _cmd_simulate(args):
    cp = _read_config(args.config)
    _, traj, _, _, _ = _build_single_system(cp, args.seed)
    if not args.out:
        raise ConfigError("simulate requires --out")
    save_trajectory_csv(args.out, traj)
    if not args.quiet:
        print(f"wrote {traj.n} steps to {args.out}")
    return 0


def _cmd_indicator(args):
    cp = _read_config(args.config)
    _, _, data, _, (m, q, sps_rng) = _build_single_system(cp, args.seed)
    region = SpsRegion(m=m, q=q, random_state=sps_rng).fit(data)
    if args.theta:
        theta = np.loadtxt(args.theta, delimiter=",", ndmin=2)
    else:
        theta = region.theta_iv_
    rank = region.rank(theta)
    inside = rank <= m - q
    print(f"inside={str(inside).lower()} rank={rank} m={m} q={q}")
    return 0


def _cmd_eoa(args):
    cp = _read_config(args.config)
    _, _, data, _, (m, q, sps_rng) = _build_single_system(cp, args.seed)
    region = SpsRegion(m=m, q=q, random_state=sps_rng).fit(data)
    ellipsoid = outer_approximation(region, n_jobs=args.threads)
    if not args.out:
        raise ConfigError("eoa requires --out")
    save_ellipsoid_csv(args.out, ellipsoid)
    if not args.quiet:
        print(f"radius_sq={ellipsoid.radius_sq:.6g} "
              f"unbounded={str(ellipsoid.unbounded).lower()} wrote {args.out}")
    return 0


def _cmd_coverage(args):
    plan = plan_from_config(_read_config(args.config), args.seed)
    report = mc.run_coverage(plan, n_jobs=args.threads)
    _emit_report(report, args.out, args.quiet)
    return 0


def _cmd_sweep_epsilon(args):
    plan = plan_from_config(_read_config(args.config), args.seed)
    report = mc.run_epsilon_sweep(plan, n_jobs=args.threads)
    _emit_report(report, args.out, args.quiet)
    return 0


def _cmd_sweep_n(args):
    plan = plan_from_config(_read_config(args.config), args.seed)
    report = mc.run_sample_sweep(plan, n_jobs=args.threads)
    _emit_report(report, args.out, args.quiet)
    return 0


def _cmd_bench(args):
    plan = plan_from_config(_read_config(args.config), args.seed)
    report = mc.run_benchmark(plan)
    _emit_report(report, args.out, args.quiet)
    if not args.quiet:
        for dim, ratio in mc.relative_wall_times(report).items():
            print(f"dim={dim} relative_time_matrix_over_vectorized={ratio:.3f}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "indicator": _cmd_indicator,
    "eoa": _cmd_eoa,
    "coverage": _cmd_coverage,
    "sweep-epsilon": _cmd_sweep_epsilon,
    "sweep-n": _cmd_sweep_n,
    "bench": _cmd_bench,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spsid",
        description="Finite-sample confidence regions for closed-loop "
                    "state-space identification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (falls back to SPS_THREADS)")
        p.add_argument("--quiet", action="store_true", help="suppress summaries")
        if name == "indicator":
            p.add_argument("--theta", default=None,
                           help="CSV matrix to test; defaults to the IV estimate")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = int(os.environ.get("SPS_THREADS", "1"))
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpsidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface anything else as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
