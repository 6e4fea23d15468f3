"""Closed-form evaluation of asymptotic bias and covariance quantities.

For a finite chain every geometric series over centered transition
powers collapses to an application of S = sum_{k>=1} (P^k - Pi), which
the deviation matrix evaluates exactly.  This yields, with eps the
centered noise at theta*:

- first-order bias coefficient
      delta1 = Abar^-1 sum_z pi(z) (S Atilde)(z) eps(z),
  so that the stationary mean of the averaged iterates satisfies
  theta* + alpha delta1 + O(alpha^2);
- second-order coefficient
      delta2 = - sum_z pi(z) (S W)(z) eps(z),
      W(z) = (S Atilde)(z) Atilde(z),
  where both series were resolved exactly by linearity (the inner
  i-series applies S once, the outer k-series a second time);
- long-run noise covariance
      sigma_eps = pi(eps eps^T) + 2 sym pi(eps (S eps)^T)
  and the optimal covariance sigma_inf = Abar^-1 sigma_eps Abar^-T.

A truncated-series fallback backs the exact path when the fundamental
system is ill-conditioned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chain import series_operator
from .errors import SingularSystem, TruncationFailure
from .model import LsaModel, markov_constants

_TRUNC_MAX_TERMS = 10**5


@dataclass(frozen=True)
class AnalyticReport:
    """Bundle of the closed-form quantities for one model."""

    delta1: np.ndarray
    delta2: np.ndarray
    sigma_eps: np.ndarray
    sigma_inf: np.ndarray
    r_alpha_bound: Callable[[float], float]


def _apply_series(s_op: np.ndarray, table: np.ndarray) -> np.ndarray:
    """(S F)(z) = sum_z' S[z, z'] F(z') for a per-state array F."""
    return np.einsum("zw,w...->z...", s_op, table)


def delta_first_order(model: LsaModel) -> np.ndarray:
    """Exact first-order bias coefficient."""
    chain = model.chain
    s_op = series_operator(chain.transition, chain.stationary)
    s_at = _apply_series(s_op, model.a_tilde)                  # (S, d, d)
    summed = np.einsum("z,zij,zj->i", chain.stationary, s_at, model.eps_of)
    return np.linalg.solve(model.a_bar, summed)


def delta_second_order(model: LsaModel) -> np.ndarray:
    """Exact second-order bias coefficient, with truncated fallback.

    The double series reduces to two nested applications of S; when the
    fundamental system is too ill-conditioned for that, a brute-force
    truncation with a geometric stopping rule is used instead.
    """
    chain = model.chain
    try:
        s_op = series_operator(chain.transition, chain.stationary)
    except SingularSystem:
        return _delta2_truncated(model)
    s_at = _apply_series(s_op, model.a_tilde)                  # (S A~)(z)
    w = np.einsum("zij,zjk->zik", s_at, model.a_tilde)         # W(z)
    s_w = _apply_series(s_op, w)
    return -np.einsum("z,zij,zj->i", chain.stationary, s_w, model.eps_of)


def _delta2_truncated(model: LsaModel, tol: float = 1e-12) -> np.ndarray:
    """Brute-force double series; stops when term norms decay below tol."""
    chain = model.chain
    p = chain.transition
    pi = chain.stationary
    s = chain.num_states
    big_pi = np.tile(pi, (s, 1))
    quiet_needed = 2 * chain.mixing_time

    def centered_power_series(table):
        # sum_{i>=1} (P^i - Pi) applied to a per-state table, truncated
        acc = np.zeros_like(table)
        pk = p.copy()
        quiet = 0
        for _ in range(_TRUNC_MAX_TERMS):
            term = np.einsum("zw,w...->z...", pk - big_pi, table)
            acc += term
            scale = np.max(np.abs(term))
            if scale <= tol * (1.0 + np.max(np.abs(acc))):
                quiet += 1
                if quiet >= quiet_needed:
                    return acc
            else:
                quiet = 0
            pk = pk @ p
        raise TruncationFailure(
            f"series tail above {tol} after {_TRUNC_MAX_TERMS} terms"
        )

    # outer series over k of (P^k - Pi) Atilde, then W_k(z), inner series over i
    acc = np.zeros(model.dim)
    pk = p.copy()
    quiet = 0
    for _ in range(_TRUNC_MAX_TERMS):
        g = np.einsum("zw,wij->zij", pk - big_pi, model.a_tilde)
        w = np.einsum("zij,zjk->zik", g, model.a_tilde)
        s_w = centered_power_series(w)
        term = np.einsum("z,zij,zj->i", pi, s_w, model.eps_of)
        acc += term
        scale = np.max(np.abs(term))
        if scale <= tol * (1.0 + np.max(np.abs(acc))):
            quiet += 1
            if quiet >= quiet_needed:
                return -acc
        else:
            quiet = 0
        pk = pk @ p
    raise TruncationFailure(f"outer series tail above {tol} after {_TRUNC_MAX_TERMS} terms")


def noise_covariance(model: LsaModel) -> np.ndarray:
    """Long-run covariance of the noise sequence eps(Z_k), symmetrized."""
    chain = model.chain
    pi = chain.stationary
    eps = model.eps_of
    s_op = series_operator(chain.transition, pi)
    s_eps = _apply_series(s_op, eps)
    lag0 = np.einsum("z,zi,zj->ij", pi, eps, eps)
    cross = np.einsum("z,zi,zj->ij", pi, eps, s_eps)
    sigma = lag0 + cross + cross.T
    return 0.5 * (sigma + sigma.T)


def asymptotic_covariance(model: LsaModel, sigma_eps: np.ndarray | None = None) -> np.ndarray:
    """Optimal limiting covariance Abar^-1 sigma_eps Abar^-T."""
    if sigma_eps is None:
        sigma_eps = noise_covariance(model)
    try:
        half = np.linalg.solve(model.a_bar, sigma_eps)
        full = np.linalg.solve(model.a_bar, half.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"mean matrix is singular: {exc}") from exc
    return 0.5 * (full + full.T)


def remainder_bound(model: LsaModel, alpha: float) -> float:
    """Numeric bound 12 |Abar^-1| b_A^2 t_mix^2 alpha^2 |eps|_inf on the
    deviation of the stationary bias from alpha * delta1."""
    inv_norm = float(np.linalg.norm(np.linalg.inv(model.a_bar), 2))
    t_mix = model.chain.mixing_time
    return 12.0 * inv_norm * model.b_a**2 * t_mix**2 * alpha**2 * model.eps_sup


def predicted_bias(model: LsaModel, alpha: float, order: int = 1) -> tuple[np.ndarray, float]:
    """Predicted stationary mean of the averaged iterates and its error bound.

    Returns (theta* + alpha delta1 [+ alpha^2 delta2], remainder bound).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if alpha > 0:
        ceiling = markov_constants(model).alpha_p_bias(2.0, model.dim)
        if alpha > ceiling:
            warnings.warn(
                f"alpha={alpha} above the bias-expansion ceiling {ceiling:.4g}; "
                "the expansion may be inaccurate",
                RuntimeWarning,
                stacklevel=2,
            )
    value = model.theta_star + alpha * delta_first_order(model)
    if order == 2:
        value = value + alpha**2 * delta_second_order(model)
    return value, remainder_bound(model, alpha)


def analytic_report(model: LsaModel) -> AnalyticReport:
    sigma_eps = noise_covariance(model)
    return AnalyticReport(
        delta1=delta_first_order(model),
        delta2=delta_second_order(model),
        sigma_eps=sigma_eps,
        sigma_inf=asymptotic_covariance(model, sigma_eps),
        r_alpha_bound=lambda a: remainder_bound(model, a),
    )
