"""Command line front end.

Subcommands: ``analyze`` (closed-form report for a model), ``simulate``
(single trajectory), ``experiment`` (Monte-Carlo grid to CSV), and
``check`` (assumption audit with PASS/FAIL lines).

Exit codes: 0 success, 1 usage, 2 config or assumption validation
failure, 3 numerical failure (divergence, singular or non-convergent
linear algebra).
"""

from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import _kernels
from .analytics import analytic_report, noise_covariance, predicted_bias
from .errors import (
    CenteringViolation,
    ConfigError,
    InconsistentDims,
    InsufficientGrid,
    LsaLabError,
    NonErgodicChain,
    NotHurwitz,
    NumericalDivergence,
    SingularSystem,
    TruncationFailure,
)
from .harness import experiment_from_config, run_experiment, write_csv
from .lsa import LsaRunConfig, lsa_run, rr_run
from .expansion import expansion_run
from .model import build_model, markov_constants, step_size_thresholds

_VALIDATION_ERRORS = (
    ConfigError, InconsistentDims, NonErgodicChain, NotHurwitz,
    CenteringViolation, InsufficientGrid,
)
_NUMERICAL_ERRORS = (NumericalDivergence, TruncationFailure, SingularSystem)


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _preset_names() -> list[str]:
    base = resources.files("lsalab") / "presets"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def _preset_spec(name: str) -> dict:
    base = resources.files("lsalab") / "presets" / f"{name}.json"
    if not base.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(_preset_names())}")
    return json.loads(base.read_text(encoding="utf-8"))


def _resolve_spec(model_config: str | None, preset: str | None) -> dict:
    if (model_config is None) == (preset is None):
        raise click.UsageError("provide exactly one of a config path or --preset")
    if preset is not None:
        return _preset_spec(preset)
    return _load_json(Path(model_config))


def _parse_start(start: str):
    return int(start) if start.lstrip("-").isdigit() else start


def _vec(v) -> str:
    return "[" + ", ".join(repr(float(x)) for x in np.asarray(v).ravel()) + "]"


@click.group()
def cli() -> None:
    """Simulation and analysis tools for constant-step linear stochastic
    approximation driven by a finite ergodic Markov chain."""


@cli.command()
@click.argument("model_config", required=False, type=click.Path())
@click.option("--preset", default=None, help="packaged model preset name")
@click.option("--alpha", "alphas", multiple=True, type=float,
              help="step size(s) to evaluate the bias prediction at")
@click.option("--order", type=click.IntRange(1, 2), default=2, show_default=True,
              help="bias expansion order for predictions")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="also write the full report as JSON")
@click.option("--echo-model", is_flag=True, help="include the canonical model in the JSON")
def analyze(model_config, preset, alphas, order, out, echo_model) -> None:
    """Closed-form bias and covariance report for a model config."""
    model = build_model(_resolve_spec(model_config, preset))
    chain = model.chain
    report = analytic_report(model)
    sc = markov_constants(model)
    thresholds = step_size_thresholds(model, sc)

    click.echo(f"states: {chain.num_states}  dim: {model.dim}")
    click.echo(f"stationary distribution: {_vec(chain.stationary)}")
    click.echo(f"mixing time: {chain.mixing_time}  tv rate: {chain.tv_rate!r}  "
               f"zeta: {chain.zeta!r}")
    click.echo(f"theta*: {_vec(model.theta_star)}")
    click.echo(f"alpha_inf: {sc.alpha_inf!r}")
    click.echo(f"alpha_inf (markov): {thresholds[0]!r}")
    click.echo(f"alpha_2 (markov): {thresholds[1]!r}")
    click.echo(f"alpha bias ceiling (p=2): {thresholds[2]!r}")
    click.echo(f"bias slope delta1: {_vec(report.delta1)}")
    click.echo(f"bias curvature delta2: {_vec(report.delta2)}")
    click.echo(f"noise covariance trace: {float(np.trace(report.sigma_eps))!r}")
    click.echo("asymptotic covariance:")
    for row in report.sigma_inf:
        click.echo("  " + _vec(row))
    predictions = []
    for alpha in alphas:
        value, bound = predicted_bias(model, alpha, order=order)
        predictions.append(
            {"alpha": alpha, "order": order, "value": value.tolist(),
             "remainder_bound": bound}
        )
        click.echo(f"predicted bias at alpha={alpha!r} (order {order}): "
                   f"{_vec(value)}  remainder bound {bound!r}")

    if out is not None:
        payload = {
            "chain": {
                "num_states": chain.num_states,
                "stationary": chain.stationary.tolist(),
                "mixing_time": chain.mixing_time,
                "tv_rate": chain.tv_rate,
                "zeta": chain.zeta,
            },
            "theta_star": model.theta_star.tolist(),
            "thresholds": {
                "alpha_inf": sc.alpha_inf,
                "alpha_inf_markov": thresholds[0],
                "alpha_2_markov": thresholds[1],
                "alpha_bias_p2": thresholds[2],
            },
            "delta1": report.delta1.tolist(),
            "delta2": report.delta2.tolist(),
            "sigma_eps": report.sigma_eps.tolist(),
            "sigma_inf": report.sigma_inf.tolist(),
            "predictions": predictions,
        }
        if echo_model:
            from .model import echo_config

            payload["model"] = echo_config(model)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {out}")


@cli.command()
@click.argument("model_config", required=False, type=click.Path())
@click.option("--preset", default=None, help="packaged model preset name")
@click.option("--alpha", required=True, type=float)
@click.option("--n", "n_steps", required=True, type=int)
@click.option("--n0", type=int, default=None, help="averaging start (default n // 2)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--start", default="stationary", show_default=True,
              help="initial state index or 'stationary'")
@click.option("--estimator", type=click.Choice(["pr", "rr", "last", "all"]),
              default="all", show_default=True)
@click.option("--expand", "level", type=click.IntRange(0, 6), default=None,
              help="also run the error expansion at this level")
@click.option("--trace-every", type=int, default=0,
              help="record every k-th step to the --out CSV")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="trace CSV path (requires --trace-every)")
def simulate(model_config, preset, alpha, n_steps, n0, seed, start, estimator,
             level, trace_every, out) -> None:
    """Run one trajectory and print the requested estimators."""
    if (out is not None) != (trace_every > 0):
        raise click.UsageError("--out and --trace-every must be used together")
    model = build_model(_resolve_spec(model_config, preset))
    cfg = LsaRunConfig(alpha=alpha, n=n_steps, n0=n0, seed=seed,
                       start=_parse_start(start))
    click.echo(f"backend: {_kernels.active_backend_name()}")
    click.echo(f"alpha={alpha!r} n={n_steps} n0={cfg.resolved_n0()} seed={seed} "
               f"start={start}")

    if level is not None:
        state = expansion_run(model, cfg, level, trace_stride=trace_every)
        for l in range(level + 1):
            click.echo(f"|J({l})| = {float(np.linalg.norm(state.j[l]))!r}")
        click.echo(f"|H({level})| = {float(np.linalg.norm(state.h))!r}")
        click.echo(f"|transient| = {float(np.linalg.norm(state.transient))!r}")
        click.echo(f"theta_err = {_vec(state.theta_err)}")
        click.echo(f"max reconstruction residual = {state.max_rel_err!r}")
        if out is not None:
            header = (["step"] + [f"theta_{i}" for i in range(model.dim)]
                      + [f"j{l}_norm" for l in range(level + 1)]
                      + ["h_norm", "transient_norm", "residual"])
            _write_trace(out, header, state.trace)
            click.echo(f"wrote {out}")
        return

    result = rr_run(model, cfg)
    fields = {"last": result.last_alpha, "pr": result.pr_alpha, "rr": result.rr}
    order = ["last", "pr", "rr"] if estimator == "all" else [estimator]
    for name in order:
        click.echo(f"{name} = {_vec(fields[name])}")
    if estimator in ("all", "pr", "rr"):
        click.echo(f"pr_2alpha = {_vec(result.pr_2alpha)}")
        click.echo(f"noise_mean = {_vec(result.noise_mean)}")
    err = result.rr - model.theta_star
    click.echo(f"|rr - theta*| = {float(np.linalg.norm(err))!r}")
    if out is not None:
        _, _, trace = lsa_run(model, cfg, trace_stride=trace_every)
        header = ["step"] + [f"theta_{i}" for i in range(model.dim)]
        _write_trace(out, header, trace)
        click.echo(f"wrote {out}")


def _write_trace(path: str, header: list[str], trace: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in trace:
            cells = [str(int(row[0]))] + [repr(float(v)) for v in row[1:]]
            fh.write(",".join(cells) + "\n")


def _apply_overrides(raw: dict, overrides, seed: int | None) -> None:
    grid_touched = False
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        if key == "n_traj":
            raw["n_traj"] = int(val)
        elif key == "base_seed":
            raw["base_seed"] = int(val)
        elif key == "n":
            for entry in raw.get("grid", []):
                entry["n"] = int(val)
            grid_touched = True
        elif key == "alpha":
            for entry in raw.get("grid", []):
                entry["alpha"] = float(val)
                entry.pop("beta", None)
                entry.pop("c", None)
            grid_touched = True
        elif key == "n0":
            raw["n0"] = int(val)
        elif key == "noise_window":
            raw["noise_window"] = val
        elif key == "start":
            raw["start"] = _parse_start(val)
        elif key == "estimators":
            raw["estimators"] = val.split(",")
        elif key == "statistics":
            raw["statistics"] = val.split(",")
        else:
            raise ConfigError(f"unknown override key {key!r}")
    if grid_touched:
        # forcing n or alpha can collapse distinct cells into duplicates
        seen = set()
        deduped = []
        for entry in raw.get("grid", []):
            sig = (entry.get("n"), entry.get("alpha"), entry.get("beta"),
                   entry.get("c", 1.0))
            if sig in seen:
                continue
            seen.add(sig)
            deduped.append(entry)
        raw["grid"] = deduped
    if seed is not None:
        raw["base_seed"] = seed


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="experiment config JSON")
@click.option("--preset", default=None, help="packaged experiment preset name")
@click.option("--out", type=click.Path(file_okay=False), default="results",
              show_default=True)
@click.option("--threads", type=int, default=None, help="worker threads (default: auto)")
@click.option("--seed", type=int, default=None, help="override the base seed")
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
              help="override a config entry (n, alpha, n_traj, base_seed, n0, "
                   "noise_window, start, estimators, statistics)")
def experiment(config_path, preset, out, threads, seed, overrides) -> None:
    """Run a Monte-Carlo grid and write one CSV per statistic."""
    if (config_path is None) == (preset is None):
        raise click.UsageError("provide exactly one of --config or --preset")
    if preset is not None:
        raw = _preset_spec(preset)
        base_dir = resources.files("lsalab") / "presets"
    else:
        raw = _load_json(Path(config_path))
        base_dir = Path(config_path).parent
    _apply_overrides(raw, overrides, seed)
    cfg = experiment_from_config(raw, base_dir)
    if threads is not None:
        cfg.threads = threads
    click.echo(f"backend: {_kernels.active_backend_name()}  points: {len(cfg.grid)}  "
               f"trajectories: {cfg.n_traj}")
    try:
        result = run_experiment(cfg)
    except NumericalDivergence as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None and partial.points:
            for path in write_csv(partial, out):
                click.echo(f"wrote (partial) {path}", err=True)
        raise
    for pr in result.points:
        bits = [f"n={pr.point.n}", f"alpha={pr.alpha:.6g}"]
        if pr.point.beta is not None:
            bits.append(f"beta={pr.point.beta:g}")
        for est in result.estimators:
            bits.append(f"{est}_mse={pr.stats[est].mse:.6g}")
        bits.append(f"[{pr.wall_time:.2f}s]")
        click.echo("  ".join(bits))
    for path in write_csv(result, out):
        click.echo(f"wrote {path}")


@cli.command()
@click.argument("model_config", required=False, type=click.Path())
@click.option("--preset", default=None, help="packaged model preset name")
@click.option("--alpha", type=float, default=None,
              help="also check this step size against the thresholds")
@click.pass_context
def check(ctx, model_config, preset, alpha) -> None:
    """Audit the model assumptions; exits 2 if any check fails."""
    spec = _resolve_spec(model_config, preset)
    names = ["config", "shapes", "ergodic", "centering", "hurwitz", "target"]
    fail_of = {
        ConfigError: "config",
        InconsistentDims: "shapes",
        NonErgodicChain: "ergodic",
        CenteringViolation: "centering",
        NotHurwitz: "hurwitz",
        SingularSystem: "target",
    }
    rows: list[tuple[str, str, str]] = []
    model = None
    try:
        model = build_model(spec)
    except LsaLabError as exc:
        bad = fail_of.get(type(exc), "config")
        reached = False
        for name in names:
            if name == bad:
                rows.append((name, "FAIL", str(exc)))
                reached = True
            elif reached:
                rows.append((name, "SKIP", "not checked after failure"))
            else:
                rows.append((name, "PASS", ""))
        rows.append(("step-size", "SKIP", "not checked after failure"))
    if model is not None:
        chain = model.chain
        from .model import hurwitz_margin

        rows.append(("config", "PASS", "all keys recognized"))
        rows.append(("shapes", "PASS",
                     f"{chain.num_states} states, dimension {model.dim}"))
        rows.append(("ergodic", "PASS",
                     f"mixing time {chain.mixing_time}, tv rate {chain.tv_rate:.6g}"))
        rows.append(("centering", "PASS", "state averages match declared means"))
        rows.append(("hurwitz", "PASS",
                     f"spectral margin {hurwitz_margin(model.a_bar):.6g}"))
        rows.append(("target", "PASS", f"theta* = {_vec(model.theta_star)}"))
        thresholds = step_size_thresholds(model)
        if alpha is None:
            rows.append(("step-size", "PASS",
                         f"alpha_inf (markov) = {thresholds[0]:.6g}"))
        elif alpha <= thresholds[0]:
            rows.append(("step-size", "PASS",
                         f"alpha={alpha:g} <= alpha_inf (markov) = {thresholds[0]:.6g}"))
        else:
            rows.append(("step-size", "FAIL",
                         f"alpha={alpha:g} exceeds alpha_inf (markov) = "
                         f"{thresholds[0]:.6g}"))
    failed = False
    for name, status, detail in rows:
        line = f"{status} {name}"
        if detail:
            line += f": {detail}"
        click.echo(line)
        failed = failed or status == "FAIL"
    if failed:
        ctx.exit(2)


def main(argv=None) -> int:
    """Run the CLI without terminating the process; returns the exit code."""
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except _VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except _NUMERICAL_ERRORS as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3


def entry() -> None:  # console script target
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entry()
