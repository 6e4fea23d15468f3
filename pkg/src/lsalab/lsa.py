"""Core recursions: constant-step iterates, running averages, extrapolation.

``lsa_run`` advances theta_k = theta_{k-1} - alpha (A(Z_k) theta_{k-1}
- b(Z_k)) for k = 1..n and returns the final iterate together with the
window average mean(theta_k, k = n0..n-1).  ``rr_run`` drives two
recursions, at steps alpha and 2 alpha, on ONE shared realized state
path, and combines their window averages as 2 avg_alpha - avg_2alpha,
cancelling the order-alpha bias term.  Memory is O(d) per trajectory;
averages use compensated summation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import NumericalDivergence
from .model import LsaModel, lyapunov_constants
from .rng import make_rng


@dataclass
class LsaRunConfig:
    """Single-trajectory run parameters.

    n0 defaults to n // 2; theta0 defaults to theta*; start is a state
    index or "stationary" (the default, giving Z_1 ~ pi).
    """

    alpha: float
    n: int
    n0: int | None = None
    theta0: np.ndarray | Sequence[float] | None = None
    seed: int | Sequence[int] = 0
    start: int | str = "stationary"

    def resolved_n0(self) -> int:
        return self.n // 2 if self.n0 is None else self.n0

    def resolved_theta0(self, model: LsaModel) -> np.ndarray:
        if self.theta0 is None:
            return model.theta_star.copy()
        theta0 = np.asarray(self.theta0, dtype=np.float64)
        if theta0.shape != (model.dim,):
            raise ValueError(f"theta0 must have shape ({model.dim},)")
        return theta0

    def validate(self, model: LsaModel, *, step_warning: bool = True) -> None:
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        n0 = self.resolved_n0()
        if not 0 <= n0 < self.n:
            raise ValueError(f"need 0 <= n0 < n, got n0={n0}, n={self.n}")
        model.chain.start_index(self.start)
        if step_warning:
            alpha_inf = lyapunov_constants(model.a_bar).alpha_inf
            if self.alpha > alpha_inf:
                warnings.warn(
                    f"alpha={self.alpha} exceeds the contraction ceiling "
                    f"alpha_inf={alpha_inf:.4g}; the run may diverge",
                    RuntimeWarning,
                    stacklevel=2,
                )


@dataclass
class RrOutput:
    """Coupled two-step-size outputs for one trajectory.

    noise_mean averages eps(Z_k) over the same window as the iterate
    averages (k = n0+1..n); noise_mean_full averages over k = 1..n.
    rr always equals 2 pr_alpha - pr_2alpha of the same object.
    """

    pr_alpha: np.ndarray
    pr_2alpha: np.ndarray
    rr: np.ndarray
    last_alpha: np.ndarray
    last_2alpha: np.ndarray
    noise_mean: np.ndarray
    noise_mean_full: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _raise_divergence(step: int, alpha: float):
    raise NumericalDivergence(
        f"iterate norm exceeded 1e12 at step {step} (alpha={alpha}); "
        "reduce the step size",
        step=step,
    )


def lsa_run(model: LsaModel, cfg: LsaRunConfig, *, trace_stride: int = 0):
    """Run one trajectory; return (theta_n, window average[, trace]).

    With ``trace_stride`` = s > 0, also return an (n//s, 1+d) array whose
    rows are (k, theta_k) at k = s, 2s, ...
    """
    cfg.validate(model)
    n0 = cfg.resolved_n0()
    theta0 = cfg.resolved_theta0(model)
    chain = model.chain
    start = chain.start_index(cfg.start)
    kern = _kernels.active

    div, theta, pr_sum, _, _ = kern.lsa_stream(
        make_rng(cfg.seed), chain.pi_cdf, chain.row_cdf,
        model.a_of, model.b_of, model.eps_of,
        float(cfg.alpha), theta0, int(cfg.n), int(n0), start,
    )
    if div >= 0:
        _raise_divergence(div, cfg.alpha)
    pr = pr_sum / (cfg.n - n0)
    if trace_stride <= 0:
        return theta, pr
    trace = np.zeros((cfg.n // trace_stride, 1 + model.dim))
    div2, _ = kern.lsa_trace(
        make_rng(cfg.seed), chain.pi_cdf, chain.row_cdf,
        model.a_of, model.b_of,
        float(cfg.alpha), theta0, int(cfg.n), start, int(trace_stride), trace,
    )
    if div2 >= 0:
        _raise_divergence(div2, cfg.alpha)
    return theta, pr, trace


def rr_run(model: LsaModel, cfg: LsaRunConfig) -> RrOutput:
    """Coupled runs at steps alpha and 2 alpha on one shared state path."""
    cfg.validate(model)
    return _rr_run_raw(
        model, float(cfg.alpha), int(cfg.n), cfg.resolved_n0(),
        cfg.resolved_theta0(model), make_rng(cfg.seed),
        model.chain.start_index(cfg.start),
    )


def _rr_run_raw(
    model: LsaModel,
    alpha: float,
    n: int,
    n0: int,
    theta0: np.ndarray,
    rng: np.random.Generator,
    start: int,
) -> RrOutput:
    """Validation-free core shared with the experiment harness."""
    chain = model.chain
    div, th_a, th_2a, pra_sum, pr2a_sum, npr_sum, nfull_sum = _kernels.active.rr_stream(
        rng, chain.pi_cdf, chain.row_cdf,
        model.a_of, model.b_of, model.eps_of,
        alpha, theta0, n, n0, start,
    )
    if div >= 0:
        _raise_divergence(div, alpha)
    window = n - n0
    pr_alpha = pra_sum / window
    pr_2alpha = pr2a_sum / window
    return RrOutput(
        pr_alpha=pr_alpha,
        pr_2alpha=pr_2alpha,
        rr=2.0 * pr_alpha - pr_2alpha,
        last_alpha=th_a,
        last_2alpha=th_2a,
        noise_mean=npr_sum / window,
        noise_mean_full=nfull_sum / n,
    )
