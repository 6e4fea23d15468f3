"""Perturbation expansion of the recursion error and its exact reconstruction.

On one realized path, the error theta_n - theta* decomposes as

    transient + J(0) + J(1) + ... + J(L) + H(L)

where the transient carries the initial condition through the running
product Gamma_{1:n} = (I - alpha A(Z_n)) ... (I - alpha A(Z_1)) and the
correction terms follow

    J_n(0) = (I - alpha Abar) J_{n-1}(0) - alpha eps(Z_n),
    J_n(l) = (I - alpha Abar) J_{n-1}(l) - alpha Atilde(Z_n) J_{n-1}(l-1),
    H_n(L) = (I - alpha A(Z_n)) H_{n-1}(L) - alpha Atilde(Z_n) J_{n-1}(L),

all starting at zero.  The identity holds algebraically at every step;
the runner tracks the worst relative residual as a health check.
Consecutive levels telescope: H(l) = J(l+1) + H(l+1) on the same path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericalDivergence
from .lsa import LsaRunConfig
from .model import LsaModel
from .rng import make_rng


@dataclass
class ExpansionState:
    """Final expansion terms for one trajectory.

    j[l] holds J(l); theta_err is theta_n - theta*; prod is the running
    matrix product (identity unless requested); max_rel_err is the
    largest per-step relative residual of the reconstruction identity.
    trace rows, when requested, are (k, theta, |J(0)|..|J(L)|, |H|,
    |transient|, rel_err).
    """

    level: int
    j: np.ndarray          # (L+1, d)
    h: np.ndarray          # (d,)
    transient: np.ndarray  # (d,)
    theta_err: np.ndarray  # (d,)
    prod: np.ndarray | None
    max_rel_err: float
    trace: np.ndarray | None = None


def expansion_run(
    model: LsaModel,
    cfg: LsaRunConfig,
    level: int,
    *,
    track_prod: bool = False,
    trace_stride: int = 0,
) -> ExpansionState:
    """Advance theta and all expansion terms in lock-step on one path."""
    if not 0 <= level <= 6:
        raise ValueError("level must be in 0..6")
    cfg.validate(model)
    theta0 = cfg.resolved_theta0(model)
    chain = model.chain
    start = chain.start_index(cfg.start)
    width = 1 + model.dim + (level + 1) + 3
    rows = cfg.n // trace_stride if trace_stride > 0 else 0
    trace = np.zeros((rows, width))
    div, theta, j, h, transient, prod, max_rel = _kernels.active.expansion_stream(
        make_rng(cfg.seed), chain.pi_cdf, chain.row_cdf,
        model.a_of, model.a_tilde, model.b_of, model.eps_of, model.a_bar,
        float(cfg.alpha), theta0, model.theta_star,
        int(cfg.n), int(level), start, bool(track_prod), int(trace_stride), trace,
    )
    if div >= 0:
        raise NumericalDivergence(
            f"iterate norm exceeded 1e12 at step {div} (alpha={cfg.alpha})", step=div
        )
    return ExpansionState(
        level=level,
        j=j,
        h=h,
        transient=transient,
        theta_err=theta - model.theta_star,
        prod=prod if track_prod else None,
        max_rel_err=float(max_rel),
        trace=trace if trace_stride > 0 else None,
    )


def matrix_product_gamma(model: LsaModel, states, alpha: float) -> np.ndarray:
    """Product of (I - alpha A(Z_i)) over a path segment, newest factor left.

    An empty segment gives the identity.
    """
    d = model.dim
    prod = np.eye(d)
    for z in np.asarray(states, dtype=np.int64):
        prod = prod - alpha * (model.a_of[z] @ prod)
    return prod


def moment_probe(
    model: LsaModel,
    cfg: LsaRunConfig,
    level: int,
    *,
    n_traj: int,
    p: int = 2,
) -> dict:
    """Monte-Carlo estimates of the expansion-term magnitudes at step n.

    Returns means of J(l) and H with standard errors, plus the moment
    estimates E^(1/p)[|J(l)|^p] for p in {2, 4}.  Trajectory t uses the
    substream (seed, t).
    """
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    if n_traj < 2:
        raise ValueError("n_traj must be >= 2")
    cfg.validate(model)
    theta0 = cfg.resolved_theta0(model)
    chain = model.chain
    start = chain.start_index(cfg.start)
    base = cfg.seed if isinstance(cfg.seed, (int, np.integer)) else tuple(cfg.seed)
    kern = _kernels.active
    dummy = np.zeros((0, 1))

    js = np.empty((n_traj, level + 1, model.dim))
    hs = np.empty((n_traj, model.dim))
    for t in range(n_traj):
        seed = [base, t] if isinstance(base, (int, np.integer)) else [*base, t]
        div, _, j, h, _, _, _ = kern.expansion_stream(
            make_rng(seed), chain.pi_cdf, chain.row_cdf,
            model.a_of, model.a_tilde, model.b_of, model.eps_of, model.a_bar,
            float(cfg.alpha), theta0, model.theta_star,
            int(cfg.n), int(level), start, False, 0, dummy,
        )
        if div >= 0:
            raise NumericalDivergence(
                f"iterate norm exceeded 1e12 at step {div} in trajectory {t}", step=div
            )
        js[t] = j
        hs[t] = h

    norms = np.linalg.norm(js, axis=2)  # (T, L+1)
    powed = norms**p
    moment = np.mean(powed, axis=0) ** (1.0 / p)
    # delta-method standard error for the p-th root of a mean
    mom_se = (
        np.std(powed, axis=0, ddof=1)
        / np.sqrt(n_traj)
        / (p * np.maximum(moment, 1e-300) ** (p - 1))
    )
    return {
        "j_mean": js.mean(axis=0),
        "j_mean_se": js.std(axis=0, ddof=1) / np.sqrt(n_traj),
        "h_mean": hs.mean(axis=0),
        "h_mean_se": hs.std(axis=0, ddof=1) / np.sqrt(n_traj),
        "j_moment": moment,
        "j_moment_se": mom_se,
        "p": p,
        "n_traj": n_traj,
    }
