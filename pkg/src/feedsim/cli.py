"""Command-line front door.

Every command reads an optional ``key = value`` configuration file with
``[section]`` headers, writes CSVs and a ``manifest.txt`` into ``--out``,
and is a pure function of the configuration and the seed.  Unknown
sections or keys abort before any computation.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
non-convergence, 4 data-contract violation.
"""
import argparse
import configparser
import hashlib
import importlib.metadata
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._accel import use_numba
from .behavior import UtilityParams
from .calibration import MOMENT_NAMES, calibrate
from .counterfactual import (PolicySpec, RegimeSpec, TARGET_ABOVE_MEAN, TARGET_ALL, policy_frontier,
                             simulate_policy, FRONTIER_COLUMNS)
from .distributions import DEFAULT_TASTE, parse_taste
from .estimation import (EstimationError, estimate_theta_iv, estimate_theta_ols, estimate_theta_reliability,
                         estimate_theta_by_group, linearized_theta, results_table, steady_state_check)
from .measurement import DEFAULT_GRID, DEFAULT_THRESHOLD, read_scores, score_items, select_threshold
from .optimize import NelderMeadOptions
from .reports import emit_plot_data, shares_binscatter
from .simulator import SimConfig, draw_population, read_panel, simulate_panel, write_panel

log = logging.getLogger("feedsim")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_DATA = 0, 2, 3, 4
COMMANDS = ("simulate", "estimate", "calibrate", "counterfactual", "classify", "full-pipeline")
STOCHASTIC = ("simulate", "counterfactual", "full-pipeline")
CSV_OPTS = dict(index=False, na_rep="", lineterminator="\n")


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class DataContractError(ValueError):
    pass


def _floats(text):
    vals = [float(x) for x in text.split(",") if x.strip()]
    if not vals:
        raise ValueError("empty list")
    return tuple(vals)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _methods(text):
    vals = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = set(vals) - set(ESTIMATORS)
    if bad or not vals:
        raise ValueError(f"unknown methods {sorted(bad)}")
    return vals


ESTIMATORS = {
    "ols": estimate_theta_ols,
    "iv": estimate_theta_iv,
    "reliability": estimate_theta_reliability,
    "iv_log": lambda panel: estimate_theta_iv(panel, log_spec=True),
}


def _target(text):
    if text in (TARGET_ALL, TARGET_ABOVE_MEAN):
        return text
    kind, _, rest = text.partition(":")
    if kind != "quintiles":
        raise ValueError("expected all, above_mean or quintiles:k,...")
    ks = frozenset(int(k) for k in rest.split(",") if k.strip())
    if not ks or not ks <= set(range(1, 6)):
        raise ValueError("quintiles must be among 1..5")
    return ks


def _theta_or_estimated(text):
    return text if text == "estimated" else float(text)


SCHEMA = {
    "simulation": {"n_users": int, "treat_frac": float, "days_per_period": int, "taste": parse_taste,
                   "posts_per_view_unit": float, "seed": int},
    "params": {k: float for k in ("alpha", "beta", "eta", "delta", "theta", "mu")},
    "input": {"panel": str, "scores": str},
    "estimation": {"methods": _methods, "n_groups": int},
    "calibration": {"theta": _theta_or_estimated, "x0": _floats, "max_iter": int, "xtol": float, "ftol": float},
    "counterfactual": {"a_grid": _floats, "target": _target, "regime": _choice("zero", "estimated", "one"),
                       "theta": _theta_or_estimated},
    "classify": {"thresholds": _floats, "threshold": float, "tpr_tolerance": float},
}


@dataclass
class RunConfig:
    command: str
    config_path: str = None
    seed: int = None
    out: Path = Path(".")
    workers: int = 1
    force: bool = False
    values: dict = field(default_factory=dict)
    canonical: str = ""

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical.encode()).hexdigest()


def load_config(path):
    """Parse and validate a configuration file into ``{section: {key: value}}``.

    Returns the typed values and a canonical text form (sorted, whitespace
    normalised) used for hashing.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values, lines = {}, []
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
            lines.append(f"{section}.{key}={raw.strip()}")
    return values, "\n".join(sorted(lines))


def sim_config(run):
    s = run.values.get("simulation", {})
    p = run.values.get("params", {})
    try:
        params = UtilityParams(**p)
        return SimConfig(n_users=s.get("n_users", 100_000), treat_frac=s.get("treat_frac", 0.5),
                         days_per_period=s.get("days_per_period", 30), params=params,
                         taste_dist=s.get("taste", DEFAULT_TASTE),
                         posts_per_view_unit=s.get("posts_per_view_unit", 120.0), seed=run.seed or 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


class Outputs:
    """Tracks files written by a run so a failure can remove them."""

    def __init__(self, out, force):
        self.out = Path(out)
        self.force = force
        self.written = []

    def path(self, name):
        p = self.out / name
        if p.exists() and not self.force and p not in self.written:
            raise ConfigError(f"{p} exists; pass --force to overwrite")
        return p

    def csv(self, name, df):
        p = self.path(name)
        df.to_csv(p, **CSV_OPTS)
        self.written.append(p)
        return p

    def text(self, name, body):
        p = self.path(name)
        p.write_text(body)
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.written.clear()


def _load_panel(run, panel=None):
    if panel is not None:
        return panel
    path = run.get("input", "panel")
    if path is None:
        raise ConfigError("[input] panel is required")
    try:
        return read_panel(path)
    except (OSError, ValueError) as exc:
        raise DataContractError(f"cannot use panel {path}: {exc}") from exc


def do_simulate(run, outs, ctx):
    cfg = sim_config(run)
    panel = simulate_panel(cfg, workers=run.workers)
    p = outs.path("panel.csv")
    write_panel(panel, p)
    outs.written.append(p)
    ctx["panel"] = panel
    ctx["config"] = cfg


def do_estimate(run, outs, ctx):
    panel = _load_panel(run, ctx.get("panel"))
    methods = run.get("estimation", "methods", tuple(ESTIMATORS))
    try:
        ests = {m: ESTIMATORS[m](panel) for m in methods}
        steady = steady_state_check(panel)
        groups = estimate_theta_by_group(panel) if run.get("estimation", "n_groups", 2) > 1 else None
    except EstimationError as exc:
        raise DataContractError(str(exc)) from exc
    outs.csv("theta_estimates.csv", results_table(list(ests.values())))
    outs.csv("steady_state.csv", pd.DataFrame([vars(steady)]))
    if groups is not None:
        rows = [dict(group=g, theta_hat=e.theta_hat, se=e.se, n_obs=e.n_obs) for g, e in groups.estimates.items()]
        rows.append(dict(group="wald", theta_hat=groups.wald, se=np.nan, n_obs=groups.df))
        rows.append(dict(group="p_value", theta_hat=groups.p_value, se=np.nan, n_obs=groups.df))
        outs.csv("theta_by_group.csv", pd.DataFrame(rows))
    for name, df in emit_plot_data(panel).items():
        outs.csv(f"{name}.csv", df)
    ctx["estimates"] = ests


def _calibration_theta(run, ctx):
    theta = run.get("calibration", "theta", "estimated")
    if theta != "estimated":
        return float(theta)
    if "estimates" in ctx and "iv" in ctx["estimates"]:
        return ctx["estimates"]["iv"].theta_hat
    return sim_config(run).params.theta


def do_calibrate(run, outs, ctx):
    panel = _load_panel(run, ctx.get("panel"))
    theta = float(np.clip(_calibration_theta(run, ctx), 0.0, 1.0))
    opts = NelderMeadOptions(max_iter=run.get("calibration", "max_iter", 5000),
                             xtol=run.get("calibration", "xtol", 1e-8), ftol=run.get("calibration", "ftol", 1e-8))
    ppvu = sim_config(run).posts_per_view_unit
    try:
        res = calibrate(panel, theta, ppvu, x0=run.get("calibration", "x0", (1.0, 1.0, 1.0, 1.0)), options=opts)
    except ValueError as exc:
        raise DataContractError(str(exc)) from exc
    if not res.converged:
        raise NonConvergence(f"Nelder-Mead stopped after {res.iterations} iterations without converging")
    outs.csv("calibration_report.csv", res.report())
    ctx["calibration"] = res
    ctx["calibration_theta"] = theta


def do_counterfactual(run, outs, ctx):
    cfg = ctx.get("config") or sim_config(run)
    regime_name = run.get("counterfactual", "regime", "estimated")
    theta = run.get("counterfactual", "theta", "estimated")
    if theta == "estimated":
        theta = ctx["estimates"]["iv"].theta_hat if "iv" in ctx.get("estimates", {}) else cfg.params.theta
    try:
        regime = RegimeSpec(regime_name, float(np.clip(theta, 0.0, 1.0)))
        grid = run.get("counterfactual", "a_grid", (0.0, 0.2, 0.4, 0.6, 0.8, 1.0))
        target = run.get("counterfactual", "target", TARGET_ABOVE_MEAN)
        PolicySpec(max(grid), target)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pop = draw_population(cfg)
    frontier = policy_frontier(pop, grid, regime, cfg.params, target=target)
    outs.csv("frontier.csv", frontier[FRONTIER_COLUMNS])
    outs.csv("decomposition.csv", frontier)
    for name, df in emit_plot_data(frontier).items():
        outs.csv(f"{name}_long.csv", df)
    sampled = simulate_policy(pop, PolicySpec(max(grid), target), regime, cfg, workers=run.workers)
    outs.csv("shares_binscatter.csv", shares_binscatter(sampled))
    ctx["frontier"] = frontier


def do_classify(run, outs, ctx):
    path = run.get("input", "scores")
    if path is None:
        raise ConfigError("[input] scores is required")
    try:
        df = read_scores(path)
    except (OSError, ValueError) as exc:
        raise DataContractError(f"cannot use scores {path}: {exc}") from exc
    grid = run.get("classify", "thresholds", DEFAULT_GRID)
    threshold = run.get("classify", "threshold", None)
    if "label" in df and df["label"].notna().any():
        chosen, report = select_threshold(df, grid, run.get("classify", "tpr_tolerance", 0.0))
        outs.csv("threshold_report.csv", report)
        threshold = chosen if threshold is None else threshold
    threshold = DEFAULT_THRESHOLD if threshold is None else threshold
    outs.csv("scores_binarized.csv", score_items(df, threshold))


def _summary(run, ctx):
    cfg = ctx["config"]
    iv = ctx["estimates"]["iv"]
    lo, hi = iv.ci95
    truth = cfg.params
    rows = [
        dict(quantity="theta_iv", truth=truth.theta, estimate=iv.theta_hat, ci_low=lo, ci_high=hi,
             ok=float(lo <= truth.theta <= hi)),
        dict(quantity="theta_linearized_target", truth=linearized_theta(cfg.taste_dist, truth.theta),
             estimate=iv.theta_hat, ci_low=lo, ci_high=hi, ok=np.nan),
    ]
    for name in ("iv_log", "ols"):
        if name in ctx["estimates"]:
            e = ctx["estimates"][name]
            rows.append(dict(quantity=f"theta_{name}", truth=truth.theta, estimate=e.theta_hat, ci_low=e.ci95[0],
                             ci_high=e.ci95[1], ok=float(e.covers(truth.theta))))
    cal = ctx["calibration"]
    a, b, e, d = cal.as_tuple()
    # only these combinations are identified by the moments
    for name, t, est in (("views_at_equilibrium", truth.equilibrium_views, b * (a + e) / (2 * a * e)),
                         ("shares_at_equilibrium", truth.equilibrium_shares, b / (2 * e)),
                         ("delta_over_eta", truth.delta / truth.eta, d / e)):
        rows.append(dict(quantity=name, truth=t, estimate=est, ci_low=np.nan, ci_high=np.nan, ok=np.nan))
    for k, fv, ev in zip(MOMENT_NAMES, cal.fitted.as_array(), cal.empirical.as_array()):
        rows.append(dict(quantity=f"moment_{k}", truth=ev, estimate=fv, ci_low=np.nan, ci_high=np.nan,
                         ok=float(abs(fv / ev - 1) < 0.01) if ev else np.nan))
    return pd.DataFrame(rows)


def do_full_pipeline(run, outs, ctx):
    if "iv" not in run.get("estimation", "methods", ("iv",)):
        raise ConfigError("full-pipeline needs the iv estimator in [estimation] methods")
    do_simulate(run, outs, ctx)
    do_estimate(run, outs, ctx)
    do_calibrate(run, outs, ctx)
    do_counterfactual(run, outs, ctx)
    outs.csv("summary.csv", _summary(run, ctx))


HANDLERS = {"simulate": do_simulate, "estimate": do_estimate, "calibrate": do_calibrate,
            "counterfactual": do_counterfactual, "classify": do_classify, "full-pipeline": do_full_pipeline}


def _versions():
    out = {"feedsim": __version__, "python": platform.python_version()}
    for name in ("numpy", "scipy", "pandas", "numba"):
        try:
            out[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            out[name] = "absent"
    return out


def manifest(run, outs, wall):
    versions = _versions()
    lines = [f"command={run.command}", f"config={run.config_path or ''}", f"config_hash={run.config_hash}",
             f"seed={'' if run.seed is None else run.seed}", f"workers={run.workers}",
             f"backend={'numba' if use_numba() else 'numpy'}"]
    lines += [f"version_{k}={v}" for k, v in versions.items()]
    lines += [f"output={p.name}" for p in outs.written]
    lines.append(f"wall_time_seconds={wall:.3f}")
    return "\n".join(lines) + "\n"


def build_parser():
    ap = argparse.ArgumentParser(prog="feedsim", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value configuration file with [section] headers")
    ap.add_argument("--seed", type=int, help="random seed; required by stochastic commands")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="worker threads for the simulator")
    ap.add_argument("--force", action="store_true", help="overwrite existing outputs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None):
    """Parse ``argv``, execute the command and return the exit code."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    outs = None
    try:
        values, canonical = load_config(args.config) if args.config else ({}, "")
        seed = args.seed if args.seed is not None else values.get("simulation", {}).get("seed")
        if args.command in STOCHASTIC and seed is None:
            raise ConfigError(f"{args.command} needs a seed (--seed or [simulation] seed)")
        if seed is not None and seed < 0:
            raise ConfigError("seed must be non-negative")
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = RunConfig(args.command, args.config, seed, Path(args.out), args.workers, args.force, values,
                        canonical + f"\nseed={seed}")
        cfg.out.mkdir(parents=True, exist_ok=True)
        outs = Outputs(cfg.out, cfg.force)
        # validate the simulation block before any compute
        sim_config(cfg)
        t0 = time.perf_counter()
        HANDLERS[cfg.command](cfg, outs, {})
        outs.text("manifest.txt", manifest(cfg, outs, time.perf_counter() - t0))
        return EXIT_OK
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except NonConvergence as exc:
        code, msg = EXIT_NONCONVERGENCE, f"non-convergence: {exc}"
    except DataContractError as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    if outs is not None:
        outs.cleanup()
    print(msg, file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
