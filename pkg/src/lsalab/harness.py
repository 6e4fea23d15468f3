"""Multi-trajectory Monte-Carlo experiment engine.

Runs coupled two-step-size trajectories over a grid of (step size,
horizon) points, with one Philox substream per (grid point, trajectory)
pair, so results are bitwise independent of the worker-thread count and
of scheduling order.  Per point and per estimator it reports the mean
error vector, the mean squared error, and remainder statistics of the
form E |estimator - theta* + mean-of-noise|^2 whose noise window
defaults to the averaging window (k = n0+1..n); jackknife standard
errors throughout.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.stats

from . import _kernels
from .errors import ConfigError, InsufficientGrid, NumericalDivergence
from .model import LsaModel, build_model
from .rng import substream

ESTIMATORS = ("pr", "rr", "last")
STATISTICS = ("bias", "mse", "remainder", "rescaled_remainder")


@dataclass(frozen=True)
class GridPoint:
    """One (horizon, step size) cell; alpha fixed or alpha = c * n^-beta."""

    n: int
    alpha: float | None = None
    beta: float | None = None
    c: float = 1.0

    def resolve_alpha(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        if self.beta is None:
            raise ConfigError(f"grid point n={self.n} needs alpha or beta")
        return float(self.c * self.n ** (-self.beta))

    def key(self):
        return (self.n, self.resolve_alpha(), self.beta, self.c)


@dataclass
class ExperimentConfig:
    model: LsaModel
    grid: list[GridPoint]
    n_traj: int = 400
    base_seed: int = 0
    theta0: np.ndarray | None = None          # None means theta*
    start: int | str = "stationary"
    estimators: tuple[str, ...] = ("pr", "rr")
    statistics: tuple[str, ...] = STATISTICS
    noise_window: str = "pr"                  # "pr" or "full"
    n0: int | None = None                     # None means n // 2 per point
    threads: int | None = None                # None means auto
    keep_raw: bool = False                    # attach per-trajectory arrays

    def validate(self) -> None:
        if self.n_traj < 2:
            raise ConfigError("n_traj must be >= 2 for standard errors")
        if not self.grid:
            raise ConfigError("experiment grid is empty")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}; allowed {ESTIMATORS}")
        bad = set(self.statistics) - set(STATISTICS)
        if bad:
            raise ConfigError(f"unknown statistics {sorted(bad)}; allowed {STATISTICS}")
        if self.noise_window not in ("pr", "full"):
            raise ConfigError("noise_window must be 'pr' or 'full'")
        for pt in self.grid:
            if pt.n < 2:
                raise ConfigError(f"grid point n={pt.n} too small")
            alpha = pt.resolve_alpha()
            if not alpha > 0:
                raise ConfigError(f"grid point n={pt.n} has nonpositive alpha")
        self.model.chain.start_index(self.start)


@dataclass
class EstimatorStats:
    mean_err: np.ndarray
    mean_err_se: np.ndarray
    mse: float
    mse_se: float
    remainder: float | None = None
    remainder_se: float | None = None


@dataclass
class PointResult:
    point: GridPoint
    alpha: float
    n0: int
    stats: dict[str, EstimatorStats]
    wall_time: float
    raw: "_PointRaw | None" = None


@dataclass
class ExperimentResult:
    points: list[PointResult]
    estimators: tuple[str, ...]
    statistics: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def find(self, n: int, *, alpha: float | None = None, beta: float | None = None) -> PointResult:
        for pr in self.points:
            if pr.point.n != n:
                continue
            if alpha is not None and not math.isclose(pr.alpha, alpha, rel_tol=1e-12):
                continue
            if beta is not None and pr.point.beta != beta:
                continue
            return pr
        raise KeyError(f"no grid point with n={n}, alpha={alpha}, beta={beta}")


def jackknife_se(stat_fn, samples: np.ndarray) -> float:
    """Leave-one-out standard error of a statistic over axis 0."""
    t = samples.shape[0]
    if t < 2:
        raise ValueError("jackknife needs at least two samples")
    loo = np.empty(t)
    for i in range(t):
        loo[i] = stat_fn(np.delete(samples, i, axis=0))
    return float(np.sqrt((t - 1) / t * np.sum((loo - loo.mean()) ** 2)))


@dataclass
class _PointRaw:
    pr: np.ndarray
    pr2: np.ndarray
    rr: np.ndarray
    last: np.ndarray
    noise_pr: np.ndarray
    noise_full: np.ndarray
    div_step: np.ndarray


def _auto_threads() -> int:
    return max(1, os.cpu_count() or 1)


def _run_point(cfg: ExperimentConfig, g_idx: int, pt: GridPoint) -> _PointRaw:
    model = cfg.model
    chain = model.chain
    kern = _kernels.active
    t_count = cfg.n_traj
    d = model.dim
    n = pt.n
    alpha = pt.resolve_alpha()
    n0 = n // 2 if cfg.n0 is None else cfg.n0
    if not 0 <= n0 < n:
        raise ConfigError(f"n0={n0} incompatible with n={n}")
    theta0 = model.theta_star if cfg.theta0 is None else np.asarray(cfg.theta0, float)
    start = chain.start_index(cfg.start)
    window = n - n0

    pr = np.empty((t_count, d))
    pr2 = np.empty((t_count, d))
    last = np.empty((t_count, d))
    noise_pr = np.empty((t_count, d))
    noise_full = np.empty((t_count, d))
    div = np.full(t_count, -1, dtype=np.int64)

    def run_block(lo: int, hi: int) -> None:
        for t in range(lo, hi):
            rng = substream(cfg.base_seed, g_idx, t)
            dv, th_a, _, pra, prb, nprs, nfs = kern.rr_stream(
                rng, chain.pi_cdf, chain.row_cdf,
                model.a_of, model.b_of, model.eps_of,
                alpha, theta0, n, n0, start,
            )
            div[t] = dv
            if dv >= 0:
                continue
            pr[t] = pra / window
            pr2[t] = prb / window
            last[t] = th_a
            noise_pr[t] = nprs / window
            noise_full[t] = nfs / n

    workers = cfg.threads if cfg.threads is not None else _auto_threads()
    workers = max(1, min(workers, t_count))
    if workers == 1:
        run_block(0, t_count)
    else:
        block = math.ceil(t_count / (workers * 4))
        bounds = [(lo, min(lo + block, t_count)) for lo in range(0, t_count, block)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: run_block(*b), bounds))

    return _PointRaw(
        pr=pr, pr2=pr2, rr=2.0 * pr - pr2, last=last,
        noise_pr=noise_pr, noise_full=noise_full, div_step=div,
    )


def _point_stats(cfg: ExperimentConfig, pt: GridPoint, raw: _PointRaw, n0: int,
                 wall: float) -> PointResult:
    model = cfg.model
    t_count = cfg.n_traj
    noise = raw.noise_pr if cfg.noise_window == "pr" else raw.noise_full
    estim_arrays = {"pr": raw.pr, "rr": raw.rr, "last": raw.last}
    stats: dict[str, EstimatorStats] = {}
    for est in cfg.estimators:
        err = estim_arrays[est] - model.theta_star
        mean_err = err.mean(axis=0)
        mean_err_se = err.std(axis=0, ddof=1) / math.sqrt(t_count)
        sq = np.einsum("ti,ti->t", err, err)
        es = EstimatorStats(
            mean_err=mean_err,
            mean_err_se=mean_err_se,
            mse=float(sq.mean()),
            mse_se=jackknife_se(np.mean, sq),
        )
        if est != "last":
            shifted = err + noise
            rem = np.einsum("ti,ti->t", shifted, shifted)
            es.remainder = float(rem.mean())
            es.remainder_se = jackknife_se(np.mean, rem)
        stats[est] = es
    return PointResult(
        point=pt, alpha=pt.resolve_alpha(), n0=n0, stats=stats, wall_time=wall,
        raw=raw if cfg.keep_raw else None,
    )


def config_digest(cfg: ExperimentConfig) -> str:
    """Hash of everything that determines the numbers (not threads)."""
    from .model import echo_config

    payload = {
        "model": echo_config(cfg.model),
        "grid": [[pt.n, pt.alpha, pt.beta, pt.c] for pt in cfg.grid],
        "n_traj": cfg.n_traj,
        "base_seed": cfg.base_seed,
        "theta0": None if cfg.theta0 is None else np.asarray(cfg.theta0).tolist(),
        "start": cfg.start,
        "estimators": list(cfg.estimators),
        "statistics": list(cfg.statistics),
        "noise_window": cfg.noise_window,
        "n0": cfg.n0,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all grid points; raise after the sweep if any point diverged.

    On divergence the raised NumericalDivergence carries the completed
    points in its ``partial`` attribute.
    """
    cfg.validate()
    points: list[PointResult] = []
    failures: list[tuple[GridPoint, int, int]] = []  # (point, trajectory, step)
    for g_idx, pt in enumerate(cfg.grid):
        t0 = time.perf_counter()
        raw = _run_point(cfg, g_idx, pt)
        wall = time.perf_counter() - t0
        if np.any(raw.div_step >= 0):
            bad_t = int(np.argmax(raw.div_step >= 0))
            failures.append((pt, bad_t, int(raw.div_step[bad_t])))
            continue
        n0 = pt.n // 2 if cfg.n0 is None else cfg.n0
        points.append(_point_stats(cfg, pt, raw, n0, wall))

    meta = {
        "config_hash": config_digest(cfg),
        "base_seed": cfg.base_seed,
        "n_traj": cfg.n_traj,
        "noise_window": cfg.noise_window,
        "estimators": list(cfg.estimators),
        "statistics": list(cfg.statistics),
        "backend": _kernels.active_backend_name(),
        "threads": cfg.threads if cfg.threads is not None else _auto_threads(),
        "wall_times": [
            {"n": p.point.n, "alpha": p.alpha, "beta": p.point.beta, "seconds": p.wall_time}
            for p in points
        ],
    }
    result = ExperimentResult(
        points=points, estimators=cfg.estimators, statistics=cfg.statistics, meta=meta
    )
    if failures:
        pt, bad_t, step = failures[0]
        exc = NumericalDivergence(
            f"divergence at grid point n={pt.n}, alpha={pt.resolve_alpha():.6g} "
            f"(trajectory {bad_t}, step {step}); {len(failures)} point(s) failed",
            step=step,
        )
        exc.partial = result
        exc.failed_points = [f[0] for f in failures]
        raise exc
    return result


@dataclass
class ScalingFit:
    beta: float
    slope: float
    half_width: float
    n_values: list[int]
    remainders: list[float]
    rescaled: list[float]


def remainder_scaling(
    cfg: ExperimentConfig,
    result: ExperimentResult | None = None,
    estimator: str = "rr",
) -> dict[float, ScalingFit]:
    """Per-beta least-squares slope of log remainder against log n.

    Requires at least four horizons per beta spanning a decade, and
    strictly positive remainder estimates.
    """
    if result is None:
        result = run_experiment(cfg)
    groups: dict[float, list[PointResult]] = {}
    for pr in result.points:
        if pr.point.beta is not None and estimator in pr.stats:
            groups.setdefault(pr.point.beta, []).append(pr)
    if not groups:
        raise InsufficientGrid("no beta-parameterized grid points with remainder data")
    fits: dict[float, ScalingFit] = {}
    for beta, prs in sorted(groups.items()):
        prs = sorted(prs, key=lambda p: p.point.n)
        ns = [p.point.n for p in prs]
        rems = [p.stats[estimator].remainder for p in prs]
        if len(ns) < 4:
            raise InsufficientGrid(f"beta={beta}: need >= 4 horizons, have {len(ns)}")
        if max(ns) < 10 * min(ns):
            raise InsufficientGrid(f"beta={beta}: horizons must span at least one decade")
        if any(r is None or r <= 0.0 for r in rems):
            raise InsufficientGrid(f"beta={beta}: remainder statistic vanished; no slope to fit")
        x = np.log(np.asarray(ns, float))
        y = np.log(np.asarray(rems, float))
        m = len(ns)
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        dof = m - 2
        s2 = float(resid @ resid) / dof
        se_slope = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
        half = float(scipy.stats.t.ppf(0.975, dof) * se_slope)
        fits[beta] = ScalingFit(
            beta=beta,
            slope=float(slope),
            half_width=half,
            n_values=ns,
            remainders=[float(r) for r in rems],
            rescaled=[float(n ** (2.0 - beta) * r) for n, r in zip(ns, rems)],
        )
    return fits


@dataclass
class LeadingTermResult:
    n: int
    alpha: float
    ratio: float              # sqrt((n - n0) * E|Abar(rr - theta*)|^2 / Tr sigma_eps)
    ratio_se: float
    ratio_raw: float          # same with factor n instead of (n - n0)
    target_raw: float         # sqrt(n / (n - n0))
    trace_sigma_eps: float


def leading_term_check(cfg: ExperimentConfig, n_min: int = 10**4) -> LeadingTermResult:
    """Compare the scaled extrapolated error to the optimal covariance trace.

    Uses the largest grid point with alpha of the form c n^(-1/2) and
    n >= n_min; the window-normalized ratio targets 1.
    """
    from .analytics import noise_covariance

    cfg.validate()
    candidates = [
        (g_idx, pt) for g_idx, pt in enumerate(cfg.grid)
        if pt.beta == 0.5 and pt.n >= n_min
    ]
    if not candidates:
        raise InsufficientGrid(
            f"need a grid point with beta=1/2 and n >= {n_min} for the leading-term check"
        )
    g_idx, pt = max(candidates, key=lambda item: item[1].n)
    raw = _run_point(cfg, g_idx, pt)
    if np.any(raw.div_step >= 0):
        bad_t = int(np.argmax(raw.div_step >= 0))
        raise NumericalDivergence(
            f"divergence in leading-term run (trajectory {bad_t})",
            step=int(raw.div_step[bad_t]),
        )
    model = cfg.model
    n0 = pt.n // 2 if cfg.n0 is None else cfg.n0
    window = pt.n - n0
    trace = float(np.trace(noise_covariance(model)))
    scaled = (raw.rr - model.theta_star) @ model.a_bar.T
    sq = np.einsum("ti,ti->t", scaled, scaled)
    mean_sq = float(sq.mean())
    if trace <= 1e-300:
        zero = LeadingTermResult(pt.n, pt.resolve_alpha(), 0.0, 0.0, 0.0,
                                 math.sqrt(pt.n / window), trace)
        return zero

    def ratio_fn(x):
        return math.sqrt(window * float(np.mean(x)) / trace)

    return LeadingTermResult(
        n=pt.n,
        alpha=pt.resolve_alpha(),
        ratio=ratio_fn(sq),
        ratio_se=jackknife_se(ratio_fn, sq),
        ratio_raw=math.sqrt(pt.n * mean_sq / trace),
        target_raw=math.sqrt(pt.n / window),
        trace_sigma_eps=trace,
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(result: ExperimentResult, outdir: str | Path) -> list[Path]:
    """Emit one CSV per statistic plus run_meta.json; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, header: list[str], rows: list[list]) -> None:
        path = outdir / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")
        written.append(path)

    grid_cols = ["n", "alpha", "beta", "c"]

    def grid_vals(pr: PointResult) -> list:
        return [pr.point.n, pr.alpha, pr.point.beta, pr.point.c]

    stats = set(result.statistics)
    if "bias" in stats:
        rows = []
        for pr in result.points:
            for est in result.estimators:
                es = pr.stats[est]
                for comp in range(es.mean_err.shape[0]):
                    rows.append(grid_vals(pr) + [est, comp, es.mean_err[comp],
                                                 es.mean_err_se[comp]])
        emit("bias", grid_cols + ["estimator", "component", "value", "stderr"], rows)
    if "mse" in stats:
        rows = [
            grid_vals(pr) + [est, pr.stats[est].mse, pr.stats[est].mse_se]
            for pr in result.points for est in result.estimators
        ]
        emit("mse", grid_cols + ["estimator", "value", "stderr"], rows)
    if "remainder" in stats:
        rows = [
            grid_vals(pr) + [est, pr.stats[est].remainder, pr.stats[est].remainder_se]
            for pr in result.points for est in result.estimators
            if pr.stats[est].remainder is not None
        ]
        emit("remainder", grid_cols + ["estimator", "value", "stderr"], rows)
    if "rescaled_remainder" in stats:
        rows = []
        for pr in result.points:
            beta = pr.point.beta
            if beta is None:
                continue
            factor = pr.point.n ** (2.0 - beta)
            for est in result.estimators:
                es = pr.stats[est]
                if es.remainder is None:
                    continue
                rows.append(grid_vals(pr) + [est, factor * es.remainder,
                                             factor * es.remainder_se])
        emit("rescaled_remainder", grid_cols + ["estimator", "value", "stderr"], rows)

    meta_path = outdir / "run_meta.json"
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(result.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(meta_path)
    return written


def experiment_from_config(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed experiment config mapping.

    The ``model`` entry is either an inline model mapping or a path
    (relative to ``base_dir``) to a model config file.
    """
    if "model" not in raw:
        raise ConfigError("experiment config is missing 'model'")
    spec = raw["model"]
    if isinstance(spec, str):
        path = Path(base_dir) / spec
        try:
            with open(path, encoding="utf-8") as fh:
                spec = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read model config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model config {path} is not valid JSON: {exc}") from exc
    if not isinstance(spec, dict):
        raise ConfigError("'model' must be a mapping or a path string")
    model = build_model(spec)

    grid_raw = raw.get("grid")
    if not isinstance(grid_raw, list) or not grid_raw:
        raise ConfigError("experiment config needs a nonempty 'grid' list")
    grid = []
    for entry in grid_raw:
        if not isinstance(entry, dict) or "n" not in entry:
            raise ConfigError(f"grid entries need an 'n' field: {entry!r}")
        grid.append(GridPoint(
            n=int(entry["n"]),
            alpha=None if entry.get("alpha") is None else float(entry["alpha"]),
            beta=None if entry.get("beta") is None else float(entry["beta"]),
            c=float(entry.get("c", 1.0)),
        ))

    theta0 = raw.get("theta0", "star")
    theta0_arr = None if theta0 == "star" else np.asarray(theta0, dtype=np.float64)

    known = {"model", "grid", "n_traj", "base_seed", "theta0", "start", "estimators",
             "statistics", "noise_window", "n0"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")

    return ExperimentConfig(
        model=model,
        grid=grid,
        n_traj=int(raw.get("n_traj", 400)),
        base_seed=int(raw.get("base_seed", 0)),
        theta0=theta0_arr,
        start=raw.get("start", "stationary"),
        estimators=tuple(raw.get("estimators", ["pr", "rr"])),
        statistics=tuple(raw.get("statistics", list(STATISTICS))),
        noise_window=raw.get("noise_window", "pr"),
        n0=None if raw.get("n0") is None else int(raw["n0"]),
    )
