"""Command-line entry point: noise export, pathwise solves, rate experiments.

Configuration is a flat INI file (sections model/driver/experiment/solver)
echoed in full into the run manifest; command-line flags override config
keys.  All randomness flows from the single base_seed key.  Coefficients are
chosen from a registry of named fixtures (see _SIGMAS/_DRIFTS), optionally
parametrized as `name:value`.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .averaging import DriftSpec, check_a4
from .errors import ConfigurationError, SymSdeError
from .experiment import (
    ExperimentConfig,
    boundedness_diagnostic,
    build_summary,
    ito_crosscheck_experiment,
    run_averaging_experiment,
    write_rates_csv,
    write_rates_svg,
)
from .flow import (
    DiffusionSpec,
    FlowMap,
    flow_dx,
    flow_forward,
    flow_inverse,
    flow_inverse_dx,
)
from .noise import (
    DriverSpec,
    NoiseGrid,
    generate_wiener,
    write_path_csv,
)
from .solver import (
    ModelSpec,
    solve_averaged,
    solve_scaled,
    write_trajectory_csv,
)
from .symint import residual, symmetric_integral

_TWO_PI = 2.0 * np.pi


def _const_fn(a: float):
    return lambda x: a + 0.0 * np.asarray(x, dtype=float)


def _split_param(text: str):
    name, _, param = text.strip().partition(":")
    return name, (float(param) if param else None)


def make_sigma(spec_text: str) -> DiffusionSpec:
    """Build a diffusion coefficient from a registry name like `const:2.0`."""
    name, param = _split_param(spec_text)
    if name in ("const", "zero"):
        a = 0.0 if name == "zero" else (1.0 if param is None else param)
        return DiffusionSpec(_const_fn(a), _const_fn(0.0), _const_fn(0.0), 0.0)
    if name == "linear":
        return DiffusionSpec(lambda x: np.asarray(x, dtype=float) + 0.0,
                             _const_fn(1.0), _const_fn(0.0), 1.0)
    if name == "sin_plus_2":
        return DiffusionSpec(lambda x: np.sin(x) + 2.0, np.cos,
                             lambda x: -np.sin(x), 1.0)
    raise ConfigurationError(f"unknown sigma fixture {spec_text!r}")


def make_drift(spec_text: str) -> DriftSpec:
    """Build a drift from a registry name like `sin_cos` or `const:0.5`."""
    name, param = _split_param(spec_text)
    if name == "zero":
        return DriftSpec(lambda x, s: 0.0 * (np.asarray(x, dtype=float)
                                             + 0.0 * np.asarray(s, dtype=float)),
                         lambda c: 0.0, 0.0, None, _const_fn(0.0))
    if name == "const":
        c = 1.0 if param is None else param
        return DriftSpec(lambda x, s: c + 0.0 * (np.asarray(x, dtype=float)
                                                 + 0.0 * np.asarray(s, dtype=float)),
                         lambda c_: 0.0, abs(c), None, _const_fn(c))
    if name == "cos_s":
        return DriftSpec(lambda x, s: np.cos(s) + 0.0 * np.asarray(x, dtype=float),
                         lambda c: 0.0, 1.0, _TWO_PI, _const_fn(0.0))
    if name == "sin_cos":
        return DriftSpec(lambda x, s: np.sin(x) * np.cos(s),
                         lambda c: 1.0, 1.0, _TWO_PI, _const_fn(0.0))
    if name == "sin_mix":
        # mean of 0.3 + 0.7*cos^2 over a period is 0.65
        return DriftSpec(lambda x, s: np.sin(x) * (0.3 + 0.7 * np.cos(s) ** 2),
                         lambda c: 1.0, 1.0, np.pi,
                         lambda y: 0.65 * np.sin(y))
    if name == "log_growth":
        # centered integral grows like log(1+r): boundedness negative control
        return DriftSpec(lambda x, s: np.sin(x) * (np.asarray(s, dtype=float)
                                                   / (1.0 + np.asarray(s, dtype=float))),
                         lambda c: 1.0, 1.0, None, np.sin)
    if name == "quasi_periodic":
        # almost periodic: a long-run mean exists but cannot be certified by
        # period quadrature, so averaging is refused for this fixture
        return DriftSpec(lambda x, s: 0.5 * np.sin(x) * (np.cos(s)
                                                         + np.cos(np.sqrt(2.0) * s)),
                         lambda c: 1.0, 1.0, None, None)
    raise ConfigurationError(f"unknown drift fixture {spec_text!r}")


_DEFAULTS = {
    "model": {"sigma": "sin_plus_2", "drift": "sin_cos", "x0": "0.0"},
    "driver": {"kind": "wiener", "hurst": ""},
    "experiment": {
        "T": "1.0",
        "finest_n": "8192",
        "epsilons": "0.125 0.0625 0.03125 0.015625 0.0078125 0.00390625",
        "replicates": "200",
        "base_seed": "1",
        "rate_exponent_hypothesis": f"{1.0 / 3.0:.17g}",
        "substeps": "1",
        "min_n": "512",
        "a4_r_max": "1000.0",
        "crosscheck": "false",
    },
    "solver": {
        "r_substeps_per_unit": "64",
        "newton_tol": "1e-10",
        "newton_max_iter": "50",
    },
}


def load_config(path) -> dict:
    """Parse the INI config into {section: {key: string}} over the defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (the horizon key is `T`)
    if not Path(path).is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    resolved = {sec: dict(values) for sec, values in _DEFAULTS.items()}
    for sec in parser.sections():
        if sec not in resolved:
            raise ConfigurationError(f"unknown config section [{sec}]")
        for key, value in parser.items(sec):
            if key not in resolved[sec]:
                raise ConfigurationError(f"unknown config key {key!r} in [{sec}]")
            resolved[sec][key] = value.strip()
    return resolved


def apply_overrides(resolved: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        resolved["experiment"]["base_seed"] = str(args.seed)
    if getattr(args, "epsilon", None):
        resolved["experiment"]["epsilons"] = " ".join(
            f"{e:.17g}" for e in args.epsilon)
    if getattr(args, "driver", None) is not None:
        resolved["driver"]["kind"] = args.driver
    if getattr(args, "hurst", None) is not None:
        resolved["driver"]["hurst"] = f"{args.hurst:.17g}"
    if getattr(args, "n", None) is not None:
        resolved["experiment"]["finest_n"] = str(args.n)
    if getattr(args, "crosscheck", False):
        resolved["experiment"]["crosscheck"] = "true"
    return resolved


def config_hash(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_epsilons(text: str):
    parts = text.replace(",", " ").split()
    if not parts:
        raise ConfigurationError("epsilons must not be empty")
    return tuple(float(p) for p in parts)


def build_driver(resolved: dict) -> DriverSpec:
    kind = resolved["driver"]["kind"]
    hurst_text = resolved["driver"].get("hurst", "")
    hurst = float(hurst_text) if hurst_text else None
    return DriverSpec(kind, hurst)


def build_model(resolved: dict) -> ModelSpec:
    sec = resolved["model"]
    return ModelSpec(make_sigma(sec["sigma"]), make_drift(sec["drift"]),
                     float(sec["x0"]))


def build_flow(resolved: dict, model: ModelSpec) -> FlowMap:
    sec = resolved["solver"]
    return FlowMap(model.diffusion,
                   r_substeps_per_unit=int(sec["r_substeps_per_unit"]),
                   newton_tol=float(sec["newton_tol"]),
                   newton_max_iter=int(sec["newton_max_iter"]))


def build_experiment(resolved: dict) -> ExperimentConfig:
    model = build_model(resolved)
    sec = resolved["experiment"]
    return ExperimentConfig(
        model=model,
        driver=build_driver(resolved),
        horizon=float(sec["T"]),
        finest_n=int(sec["finest_n"]),
        epsilons=_parse_epsilons(sec["epsilons"]),
        replicates=int(sec["replicates"]),
        base_seed=int(sec["base_seed"]),
        rate_exponent_hypothesis=float(sec["rate_exponent_hypothesis"]),
        substeps=int(sec["substeps"]),
        min_n=int(sec["min_n"]),
        flow=build_flow(resolved, model),
    )


def write_manifest(out_dir: Path, config_path, resolved: dict,
                   command: str, started: float) -> None:
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "config_sha256": config_hash(resolved),
        "output_dir": str(out_dir),
        "tool_version": __version__,
        "duration_seconds": time.monotonic() - started,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_noise(args) -> int:
    driver = DriverSpec(args.driver, args.hurst)
    grid = NoiseGrid(args.T, args.n)
    path = driver.make(grid, args.seed if args.seed is not None else 0)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_path_csv(path, out)
    print(f"wrote {out} ({grid.n_steps + 1} samples, driver {driver.label()})")
    return 0


def cmd_solve(args) -> int:
    started = time.monotonic()
    resolved = apply_overrides(load_config(args.config), args)
    cfg = build_experiment(resolved)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = NoiseGrid(cfg.horizon, cfg.finest_n)
    path = cfg.driver.make(grid, cfg.base_seed)
    fm = cfg.flow_map()

    trajectories = [solve_averaged(cfg.model, fm, path, cfg.substeps)]
    for eps in cfg.epsilons:
        trajectories.append(solve_scaled(cfg.model, fm, path, eps, cfg.substeps))

    lines = []
    for traj in trajectories:
        name = ("trajectory_averaged.csv" if traj.is_averaged
                else f"trajectory_eps_{traj.epsilon:g}.csv")
        write_trajectory_csv(traj, path, out_dir / name)
        lines.append(f"residual[{traj.label()}]: "
                     f"{residual(cfg.model, fm, traj, path):.6e}")

    a4 = check_a4(cfg.model.drift,
                  cfg.model.x0 + np.linspace(-2.0, 2.0, 9),
                  float(resolved["experiment"]["a4_r_max"]))
    report = "\n".join(lines) + "\n\n" + a4.as_text() + "\n"
    (out_dir / "residual_report.txt").write_text(report, encoding="utf-8")
    write_manifest(out_dir, args.config, resolved, "solve", started)
    print(report, end="")
    return 0


def _expected_rate(cfg: ExperimentConfig):
    grid = NoiseGrid(cfg.horizon, 1)
    gamma = cfg.driver.make(grid, cfg.base_seed).holder_gamma
    return None if gamma is None else gamma / (1.0 + gamma)


def cmd_rate(args) -> int:
    started = time.monotonic()
    resolved = apply_overrides(load_config(args.config), args)
    cfg = build_experiment(resolved)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    fit = run_averaging_experiment(cfg, jobs=args.jobs)
    bound = (boundedness_diagnostic(fit) if len(cfg.epsilons) >= 4 else None)
    a4 = check_a4(cfg.model.drift,
                  cfg.model.x0 + np.linspace(-2.0, 2.0, 9),
                  float(resolved["experiment"]["a4_r_max"]))
    cross = None
    if resolved["experiment"]["crosscheck"].lower() in ("true", "1", "yes"):
        cross = ito_crosscheck_experiment(cfg, jobs=args.jobs)

    write_rates_csv(fit, out_dir / "rates.csv")
    summary = build_summary(fit, a4, bound, cross, config_echo=resolved,
                            expected_rate=_expected_rate(cfg))
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.svg:
        write_rates_svg(fit, out_dir / "rates.svg")
    write_manifest(out_dir, args.config, resolved, "rate", started)

    verdicts = {"a4": a4.passed}
    if bound is not None:
        verdicts["boundedness"] = bound.passed
    if cross is not None:
        verdicts["crosscheck"] = cross.passed
    print(f"slope: {fit.slope:.4f} (stderr {fit.slope_stderr:.4f}), "
          f"failed replicates: {fit.failed_replicates}")
    for name, ok in verdicts.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    return 0 if all(verdicts.values()) else 1


def _verify_checks():
    checks = []
    tol_closed = 1e-8

    lin = FlowMap(make_sigma("linear"))
    r, x = np.meshgrid(np.linspace(-2, 2, 9), np.linspace(-2, 2, 9))
    scale = np.maximum(1.0, np.abs(x * np.exp(r)))
    err_f = np.max(np.abs(flow_forward(lin, r, x) - x * np.exp(r)) / scale)
    checks.append(("flow.forward_linear_sigma", err_f < tol_closed,
                   f"max rel err {err_f:.2e}"))
    err_dx = np.max(np.abs(flow_dx(lin, r, x) - np.exp(r)) / np.exp(r))
    checks.append(("flow.dx_linear_sigma", err_dx < tol_closed,
                   f"max rel err {err_dx:.2e}"))
    err_h = np.max(np.abs(flow_inverse(lin, r, x) - x * np.exp(-r))
                   / np.maximum(1.0, np.abs(x * np.exp(-r))))
    checks.append(("flow.inverse_linear_sigma", err_h < tol_closed,
                   f"max rel err {err_h:.2e}"))
    err_hdx = np.max(np.abs(flow_inverse_dx(lin, r, x) - np.exp(-r)) / np.exp(-r))
    checks.append(("flow.inverse_dx_linear_sigma", err_hdx < tol_closed,
                   f"max rel err {err_hdx:.2e}"))

    fm = FlowMap(make_sigma("sin_plus_2"))
    r, x = np.meshgrid(np.linspace(-2, 2, 21), np.linspace(-2, 2, 21))
    round_trip = np.max(np.abs(flow_inverse(fm, r, flow_forward(fm, r, x)) - x))
    checks.append(("flow.round_trip", round_trip <= fm.newton_tol,
                   f"max |H(r,F(r,x))-x| = {round_trip:.2e}"))
    rs, ss = np.meshgrid(np.linspace(-1, 1, 9), np.linspace(-1, 1, 9))
    group = np.max(np.abs(flow_forward(fm, rs + ss, 0.3)
                          - flow_forward(fm, ss, flow_forward(fm, rs, 0.3))))
    # composition propagates per-leg truncation (~5e-9 on these probes)
    checks.append(("flow.group_property", group < 1e-8,
                   f"max defect {group:.2e}"))
    dx_vals = flow_dx(fm, r, x)
    envelope = np.exp(fm.spec.deriv_bound * np.abs(r))
    ok = bool(np.all(dx_vals > 0.0)
              and np.all(dx_vals <= envelope * (1 + 1e-12))
              and np.all(dx_vals >= (1 - 1e-12) / envelope))
    checks.append(("flow.dx_positive_within_envelope", ok,
                   f"range [{dx_vals.min():.3g}, {dx_vals.max():.3g}]"))

    worst = 0.0
    for seed in range(20):
        path = generate_wiener(NoiseGrid(1.0, 256), seed)
        mu = path.values
        exact = 0.5 * (mu[-1] ** 2 - mu[0] ** 2)
        got = symmetric_integral(mu, mu)
        worst = max(worst, abs(got - exact) / max(1.0, abs(exact)))
    checks.append(("symint.chain_identity", worst < 1e-12,
                   f"max rel defect {worst:.2e}"))
    mu = generate_wiener(NoiseGrid(1.0, 128), 42).values
    lin_defect = abs(
        symmetric_integral(2.0 * mu + 3.0 * mu**2, mu)
        - 2.0 * symmetric_integral(mu, mu) - 3.0 * symmetric_integral(mu**2, mu)
    )
    checks.append(("symint.linearity", lin_defect < 1e-12,
                   f"defect {lin_defect:.2e}"))
    return checks


def cmd_verify(args) -> int:
    failures = 0
    for name, ok, detail in _verify_checks():
        print(f"verify {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        failures += not ok
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symsde",
        description="Pathwise solver and averaging-rate experiments for "
                    "symmetric-integral SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_noise = sub.add_parser("noise", help="generate and export a noise path")
    p_noise.add_argument("--driver", default="wiener",
                         choices=["wiener", "fbm", "subfbm", "deterministic"])
    p_noise.add_argument("--hurst", type=float, default=None)
    p_noise.add_argument("--n", type=int, default=1024)
    p_noise.add_argument("--T", type=float, default=1.0)
    p_noise.add_argument("--seed", type=int, default=0)
    p_noise.add_argument("--out", default="mu.csv")
    p_noise.set_defaults(func=cmd_noise)

    p_solve = sub.add_parser("solve", help="solve scaled and averaged systems")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default="out_solve")
    p_solve.add_argument("--seed", type=int, default=None)
    p_solve.add_argument("--epsilon", type=float, action="append")
    p_solve.add_argument("--driver", default=None,
                         choices=["wiener", "fbm", "subfbm", "deterministic"])
    p_solve.add_argument("--hurst", type=float, default=None)
    p_solve.add_argument("--n", type=int, default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_rate = sub.add_parser("rate", help="run the Monte Carlo rate experiment")
    p_rate.add_argument("--config", required=True)
    p_rate.add_argument("--out", default="out_rate")
    p_rate.add_argument("--seed", type=int, default=None)
    p_rate.add_argument("--epsilon", type=float, action="append")
    p_rate.add_argument("--driver", default=None,
                        choices=["wiener", "fbm", "subfbm", "deterministic"])
    p_rate.add_argument("--hurst", type=float, default=None)
    p_rate.add_argument("--n", type=int, default=None)
    p_rate.add_argument("--jobs", type=int, default=1)
    p_rate.add_argument("--svg", action="store_true")
    p_rate.add_argument("--crosscheck", action="store_true")
    p_rate.set_defaults(func=cmd_rate)

    p_verify = sub.add_parser("verify", help="run flow/symint invariant suites")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports bad flags with code 2
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SymSdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
