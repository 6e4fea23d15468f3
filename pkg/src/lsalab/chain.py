"""Finite-state Markov chains: representation, sampling, mixing diagnostics.

A chain is given by a row-stochastic transition matrix P.  Derived
quantities used throughout the package:

- stationary distribution pi with pi P = pi;
- Dobrushin contraction coefficients delta(P^k) and the mixing time
  t_mix = min{k >= 1 : delta(P^k) <= 1/4};
- the deviation matrix D = (I - P + Pi)^-1 - Pi = sum_{k>=0} (P^k - Pi),
  the closed-form evaluator for geometric series of centered powers
  (Pi denotes the rank-one matrix whose rows all equal pi);
- total-variation decay rate rho (modulus of the subdominant eigenvalue)
  with prefactor zeta fitted so that delta(P^k) <= zeta * rho^k.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ConfigError, InconsistentDims, NonErgodicChain, SingularSystem
from .rng import make_rng

_ERGODIC_TOL = 1e-9


def _as_transition(p) -> np.ndarray:
    p = np.ascontiguousarray(np.asarray(p, dtype=np.float64))
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise InconsistentDims(f"transition matrix must be square, got shape {p.shape}")
    if p.shape[0] < 1:
        raise InconsistentDims("transition matrix must have at least one state")
    if np.any(p < 0.0):
        raise ConfigError("transition matrix has negative entries")
    row_err = np.max(np.abs(p.sum(axis=1) - 1.0))
    if row_err > 1e-12:
        raise ConfigError(f"transition rows must sum to 1 (max deviation {row_err:.3e})")
    return p


def _strongly_connected(support: np.ndarray) -> bool:
    n = support.shape[0]

    def reach(adj):
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in np.nonzero(adj[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        return seen.all()

    return reach(support) and reach(support.T)


def check_ergodic(p, tol: float = _ERGODIC_TOL) -> None:
    """Raise NonErgodicChain unless P is irreducible and aperiodic.

    Two complementary tests: strong connectivity of the support graph
    (exact reducibility), and the count of eigenvalues with modulus
    within ``tol`` of 1 (catches periodicity and near-reducibility).
    """
    p = _as_transition(p)
    if not _strongly_connected(p > 0.0):
        raise NonErgodicChain("transition support graph is not strongly connected")
    eigs = np.linalg.eigvals(p)
    n_unit = int(np.sum(np.abs(eigs) >= 1.0 - tol))
    if n_unit > 1:
        raise NonErgodicChain(
            f"{n_unit} eigenvalues on the unit circle (periodic or nearly reducible chain)"
        )


def stationary_distribution(p) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1 for an ergodic transition matrix P."""
    p = _as_transition(p)
    check_ergodic(p)
    n = p.shape[0]
    m = p.T - np.eye(n)
    m[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonErgodicChain(f"stationary system is singular: {exc}") from exc
    if np.any(pi < -1e-10):
        raise NonErgodicChain("stationary solve produced negative mass")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.max(np.abs(pi @ p - pi)) > 1e-10:
        raise NonErgodicChain("stationary residual above tolerance")
    return pi


def dobrushin_coefficient(p, k: int = 1) -> float:
    """Worst-case total-variation distance between k-step rows of P."""
    p = _as_transition(p)
    if k < 1:
        raise ValueError("k must be >= 1")
    pk = np.linalg.matrix_power(p, k)
    diff = pk[:, None, :] - pk[None, :, :]
    return float(0.5 * np.abs(diff).sum(axis=2).max())


def mixing_time(p, cap: int = 10**6) -> int:
    """Smallest k >= 1 with a Dobrushin coefficient of P^k at or below 1/4."""
    p = _as_transition(p)
    pk = p.copy()
    for k in range(1, cap + 1):
        diff = pk[:, None, :] - pk[None, :, :]
        delta = 0.5 * np.abs(diff).sum(axis=2).max()
        if delta <= 0.25:
            return k
        pk = pk @ p
    raise NonErgodicChain(
        f"Dobrushin coefficient stayed above 1/4 for {cap} steps (nearly reducible chain)"
    )


def deviation_matrix(p, pi=None) -> np.ndarray:
    """D = (I - P + Pi)^-1 - Pi, summing the centered powers of P."""
    p = _as_transition(p)
    if pi is None:
        pi = stationary_distribution(p)
    pi = np.asarray(pi, dtype=np.float64)
    n = p.shape[0]
    big_pi = np.tile(pi, (n, 1))
    m = np.eye(n) - p + big_pi
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystem(
            f"fundamental system I - P + Pi is near-singular (cond {cond:.3e})"
        )
    d = np.linalg.solve(m, np.eye(n)) - big_pi
    return d


def series_operator(p, pi=None) -> np.ndarray:
    """S = sum_{k>=1} (P^k - Pi) = D - (I - Pi); annihilates constants."""
    p = _as_transition(p)
    if pi is None:
        pi = stationary_distribution(p)
    pi = np.asarray(pi, dtype=np.float64)
    n = p.shape[0]
    big_pi = np.tile(pi, (n, 1))
    return deviation_matrix(p, pi) - (np.eye(n) - big_pi)


def tv_rate(p) -> float:
    """Modulus of the subdominant eigenvalue of P."""
    p = _as_transition(p)
    mods = np.sort(np.abs(np.linalg.eigvals(p)))[::-1]
    if mods.shape[0] < 2:
        return 0.0
    return float(mods[1])


def _zeta_fit(p, rho: float, t_mix: int) -> float:
    if rho <= 0.0:
        return 1.0
    best = 0.0
    for k in range(1, 4 * t_mix + 1):
        best = max(best, dobrushin_coefficient(p, k) / rho**k)
    return float(best)


class FiniteMarkovChain:
    """Immutable ergodic chain with precomputed sampling tables.

    Attributes:
        transition: S x S row-stochastic matrix.
        num_states: S.
        stationary: stationary distribution pi.
        mixing_time: t_mix.
        tv_rate: subdominant eigenvalue modulus rho.
        zeta: fitted prefactor with delta(P^k) <= zeta * rho^k.
    """

    def __init__(self, transition, *, mixing_cap: int = 10**6):
        p = _as_transition(transition)
        check_ergodic(p)
        self.transition = p
        self.num_states = p.shape[0]
        self.stationary = stationary_distribution(p)
        self.mixing_time = mixing_time(p, cap=mixing_cap)
        self.tv_rate = tv_rate(p)
        self.zeta = _zeta_fit(p, self.tv_rate, self.mixing_time)
        # row-wise CDF tables consumed by the sampling kernels
        self.row_cdf = np.cumsum(p, axis=1)
        self.pi_cdf = np.cumsum(self.stationary)
        for arr in (self.transition, self.stationary, self.row_cdf, self.pi_cdf):
            arr.setflags(write=False)

    def start_index(self, start) -> int:
        """Map a start spec ('stationary' or a state index) to kernel form."""
        if isinstance(start, str):
            if start != "stationary":
                raise ValueError(f"start must be a state index or 'stationary', got {start!r}")
            return -1
        idx = int(start)
        if not 0 <= idx < self.num_states:
            raise ValueError(f"start state {idx} outside 0..{self.num_states - 1}")
        return idx

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"FiniteMarkovChain(S={self.num_states}, t_mix={self.mixing_time}, "
            f"rho={self.tv_rate:.4g})"
        )


def sample_path(chain: FiniteMarkovChain, start, n: int, seed) -> np.ndarray:
    """Sample Z_1..Z_n as a deterministic function of (chain, start, n, seed).

    ``start`` is a state index pinning Z_1, or "stationary" to draw
    Z_1 ~ pi.  One uniform is consumed per step either way, so the
    transition stream is identical across start modes.
    """
    if n < 1:
        raise ValueError("path length must be >= 1")
    rng = make_rng(seed)
    return _kernels.active.markov_path(
        rng, chain.pi_cdf, chain.row_cdf, chain.start_index(start), n
    )
