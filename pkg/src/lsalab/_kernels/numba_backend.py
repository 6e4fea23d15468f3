"""Jit-compiled per-step kernels.

All kernels consume exactly one uniform per iteration from the supplied
generator: the first uniform selects the initial state (it is drawn and
discarded when the start state is pinned, keeping the transition stream
aligned across start modes), each later one drives a single inverse-CDF
transition.  No fastmath: results must be bitwise reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)

# squared-norm divergence guard; the negated comparison also trips on NaN
_GUARD_SQ = 1e24


@njit(**_JIT)
def _pick(cdf_row, u, num_states):
    z = 0
    while u >= cdf_row[z] and z < num_states - 1:
        z += 1
    return z


@njit(**_JIT)
def _kahan_add(acc, comp, x):
    for i in range(acc.shape[0]):
        y = x[i] - comp[i]
        t = acc[i] + y
        comp[i] = (t - acc[i]) - y
        acc[i] = t


@njit(**_JIT)
def _theta_step(a_of, b_of, z, alpha, theta, scratch):
    d = theta.shape[0]
    for i in range(d):
        acc = 0.0
        for m in range(d):
            acc += a_of[z, i, m] * theta[m]
        scratch[i] = acc - b_of[z, i]
    for i in range(d):
        theta[i] -= alpha * scratch[i]


@njit(**_JIT)
def _norm_sq(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return s


@njit(**_JIT)
def markov_path(rng, pi_cdf, row_cdf, start, n):
    num_states = row_cdf.shape[0]
    path = np.empty(n, dtype=np.int64)
    u = rng.random()
    if start >= 0:
        z = start
    else:
        z = _pick(pi_cdf, u, num_states)
    path[0] = z
    for k in range(1, n):
        u = rng.random()
        z = _pick(row_cdf[z], u, num_states)
        path[k] = z
    return path


@njit(**_JIT)
def lsa_stream(rng, pi_cdf, row_cdf, a_of, b_of, eps_of, alpha, theta0, n, n0, start):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta = theta0.copy()
    scratch = np.empty(d)
    pr_s = np.zeros(d)
    pr_c = np.zeros(d)
    npr_s = np.zeros(d)
    npr_c = np.zeros(d)
    nfull_s = np.zeros(d)
    nfull_c = np.zeros(d)
    u = rng.random()
    if start >= 0:
        z = start
    else:
        z = _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        if k - 1 >= n0:
            _kahan_add(pr_s, pr_c, theta)
        _theta_step(a_of, b_of, z, alpha, theta, scratch)
        if not (_norm_sq(theta) <= _GUARD_SQ):
            return k, theta, pr_s, npr_s, nfull_s
        _kahan_add(nfull_s, nfull_c, eps_of[z])
        if k >= n0 + 1:
            _kahan_add(npr_s, npr_c, eps_of[z])
    return -1, theta, pr_s, npr_s, nfull_s


@njit(**_JIT)
def rr_stream(rng, pi_cdf, row_cdf, a_of, b_of, eps_of, alpha, theta0, n, n0, start):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta_a = theta0.copy()
    theta_b = theta0.copy()
    alpha2 = 2.0 * alpha
    scratch = np.empty(d)
    pra_s = np.zeros(d)
    pra_c = np.zeros(d)
    prb_s = np.zeros(d)
    prb_c = np.zeros(d)
    npr_s = np.zeros(d)
    npr_c = np.zeros(d)
    nfull_s = np.zeros(d)
    nfull_c = np.zeros(d)
    u = rng.random()
    if start >= 0:
        z = start
    else:
        z = _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        if k - 1 >= n0:
            _kahan_add(pra_s, pra_c, theta_a)
            _kahan_add(prb_s, prb_c, theta_b)
        _theta_step(a_of, b_of, z, alpha, theta_a, scratch)
        _theta_step(a_of, b_of, z, alpha2, theta_b, scratch)
        bad_a = not (_norm_sq(theta_a) <= _GUARD_SQ)
        bad_b = not (_norm_sq(theta_b) <= _GUARD_SQ)
        if bad_a or bad_b:
            return k, theta_a, theta_b, pra_s, prb_s, npr_s, nfull_s
        _kahan_add(nfull_s, nfull_c, eps_of[z])
        if k >= n0 + 1:
            _kahan_add(npr_s, npr_c, eps_of[z])
    return -1, theta_a, theta_b, pra_s, prb_s, npr_s, nfull_s


@njit(**_JIT)
def lsa_trace(rng, pi_cdf, row_cdf, a_of, b_of, alpha, theta0, n, start, stride, trace):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta = theta0.copy()
    scratch = np.empty(d)
    u = rng.random()
    if start >= 0:
        z = start
    else:
        z = _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        _theta_step(a_of, b_of, z, alpha, theta, scratch)
        if not (_norm_sq(theta) <= _GUARD_SQ):
            return k, theta
        if stride > 0 and k % stride == 0:
            row = k // stride - 1
            if row < trace.shape[0]:
                trace[row, 0] = k
                for i in range(d):
                    trace[row, 1 + i] = theta[i]
    return -1, theta


@njit(**_JIT)
def expansion_stream(rng, pi_cdf, row_cdf, a_of, a_tilde, b_of, eps_of, a_bar,
                     alpha, theta0, theta_star, n, level, start, track_prod,
                     stride, trace):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta = theta0.copy()
    j = np.zeros((level + 1, d))
    h = np.zeros(d)
    transient = np.empty(d)
    for i in range(d):
        transient[i] = theta0[i] - theta_star[i]
    prod = np.eye(d)
    prod_new = np.empty((d, d))
    scratch = np.empty(d)
    max_rel = 0.0
    u = rng.random()
    if start >= 0:
        z = start
    else:
        z = _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        # h first: it reads j[level] at the previous step
        for i in range(d):
            acc = 0.0
            for m in range(d):
                acc += a_of[z, i, m] * h[m] + a_tilde[z, i, m] * j[level, m]
            scratch[i] = acc
        for i in range(d):
            h[i] -= alpha * scratch[i]
        # descending levels keep j[l-1] at its previous-step value
        for l in range(level, 0, -1):
            for i in range(d):
                acc = 0.0
                for m in range(d):
                    acc += a_bar[i, m] * j[l, m] + a_tilde[z, i, m] * j[l - 1, m]
                scratch[i] = acc
            for i in range(d):
                j[l, i] -= alpha * scratch[i]
        for i in range(d):
            acc = 0.0
            for m in range(d):
                acc += a_bar[i, m] * j[0, m]
            scratch[i] = acc + eps_of[z, i]
        for i in range(d):
            j[0, i] -= alpha * scratch[i]
        for i in range(d):
            acc = 0.0
            for m in range(d):
                acc += a_of[z, i, m] * transient[m]
            scratch[i] = acc
        for i in range(d):
            transient[i] -= alpha * scratch[i]
        if track_prod:
            # left-multiply by the newest factor: prod <- (I - alpha A(z)) prod
            for i in range(d):
                for c in range(d):
                    acc = 0.0
                    for m in range(d):
                        acc += a_of[z, i, m] * prod[m, c]
                    prod_new[i, c] = prod[i, c] - alpha * acc
            for i in range(d):
                for c in range(d):
                    prod[i, c] = prod_new[i, c]
        _theta_step(a_of, b_of, z, alpha, theta, scratch)
        if not (_norm_sq(theta) <= _GUARD_SQ):
            return k, theta, j, h, transient, prod, max_rel
        num = 0.0
        den = 0.0
        for i in range(d):
            e = theta[i] - theta_star[i]
            r = transient[i] + h[i]
            for l in range(level + 1):
                r += j[l, i]
            diff = e - r
            num += diff * diff
            den += e * e
        rel = np.sqrt(num) / max(np.sqrt(den), 1e-30)
        if rel > max_rel:
            max_rel = rel
        if stride > 0 and k % stride == 0:
            row = k // stride - 1
            if row < trace.shape[0]:
                trace[row, 0] = k
                for i in range(d):
                    trace[row, 1 + i] = theta[i]
                for l in range(level + 1):
                    trace[row, 1 + d + l] = np.sqrt(_norm_sq(j[l]))
                trace[row, 2 + d + level] = np.sqrt(_norm_sq(h))
                trace[row, 3 + d + level] = np.sqrt(_norm_sq(transient))
                trace[row, 4 + d + level] = rel
    return -1, theta, j, h, transient, prod, max_rel
