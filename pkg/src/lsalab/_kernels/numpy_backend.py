"""Pure-numpy fallback kernels.

Signature-compatible with the jit backend.  State selection uses the
same scalar inverse-CDF walk, so both backends visit identical state
paths for a given generator; the float recursions use vectorized numpy
expressions and may differ from the jit backend in the last few ulps.
"""

from __future__ import annotations

import numpy as np

_GUARD_SQ = 1e24


def _pick(cdf_row, u, num_states):
    z = 0
    while u >= cdf_row[z] and z < num_states - 1:
        z += 1
    return z


def _kahan_add(acc, comp, x):
    y = x - comp
    t = acc + y
    comp[:] = (t - acc) - y
    acc[:] = t


def markov_path(rng, pi_cdf, row_cdf, start, n):
    num_states = row_cdf.shape[0]
    path = np.empty(n, dtype=np.int64)
    u = rng.random()
    z = start if start >= 0 else _pick(pi_cdf, u, num_states)
    path[0] = z
    for k in range(1, n):
        u = rng.random()
        z = _pick(row_cdf[z], u, num_states)
        path[k] = z
    return path


def lsa_stream(rng, pi_cdf, row_cdf, a_of, b_of, eps_of, alpha, theta0, n, n0, start):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta = theta0.copy()
    pr_s = np.zeros(d)
    pr_c = np.zeros(d)
    npr_s = np.zeros(d)
    npr_c = np.zeros(d)
    nfull_s = np.zeros(d)
    nfull_c = np.zeros(d)
    u = rng.random()
    z = start if start >= 0 else _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        if k - 1 >= n0:
            _kahan_add(pr_s, pr_c, theta)
        theta -= alpha * (a_of[z] @ theta - b_of[z])
        nsq = float(theta @ theta)
        if not (nsq <= _GUARD_SQ):
            return k, theta, pr_s, npr_s, nfull_s
        _kahan_add(nfull_s, nfull_c, eps_of[z])
        if k >= n0 + 1:
            _kahan_add(npr_s, npr_c, eps_of[z])
    return -1, theta, pr_s, npr_s, nfull_s


def rr_stream(rng, pi_cdf, row_cdf, a_of, b_of, eps_of, alpha, theta0, n, n0, start):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta_a = theta0.copy()
    theta_b = theta0.copy()
    alpha2 = 2.0 * alpha
    pra_s = np.zeros(d)
    pra_c = np.zeros(d)
    prb_s = np.zeros(d)
    prb_c = np.zeros(d)
    npr_s = np.zeros(d)
    npr_c = np.zeros(d)
    nfull_s = np.zeros(d)
    nfull_c = np.zeros(d)
    u = rng.random()
    z = start if start >= 0 else _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        if k - 1 >= n0:
            _kahan_add(pra_s, pra_c, theta_a)
            _kahan_add(prb_s, prb_c, theta_b)
        theta_a -= alpha * (a_of[z] @ theta_a - b_of[z])
        theta_b -= alpha2 * (a_of[z] @ theta_b - b_of[z])
        bad_a = not (float(theta_a @ theta_a) <= _GUARD_SQ)
        bad_b = not (float(theta_b @ theta_b) <= _GUARD_SQ)
        if bad_a or bad_b:
            return k, theta_a, theta_b, pra_s, prb_s, npr_s, nfull_s
        _kahan_add(nfull_s, nfull_c, eps_of[z])
        if k >= n0 + 1:
            _kahan_add(npr_s, npr_c, eps_of[z])
    return -1, theta_a, theta_b, pra_s, prb_s, npr_s, nfull_s


def lsa_trace(rng, pi_cdf, row_cdf, a_of, b_of, alpha, theta0, n, start, stride, trace):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta = theta0.copy()
    u = rng.random()
    z = start if start >= 0 else _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        theta -= alpha * (a_of[z] @ theta - b_of[z])
        if not (float(theta @ theta) <= _GUARD_SQ):
            return k, theta
        if stride > 0 and k % stride == 0:
            row = k // stride - 1
            if row < trace.shape[0]:
                trace[row, 0] = k
                trace[row, 1:1 + d] = theta
    return -1, theta


def expansion_stream(rng, pi_cdf, row_cdf, a_of, a_tilde, b_of, eps_of, a_bar,
                     alpha, theta0, theta_star, n, level, start, track_prod,
                     stride, trace):
    num_states = row_cdf.shape[0]
    d = theta0.shape[0]
    theta = theta0.copy()
    j = np.zeros((level + 1, d))
    h = np.zeros(d)
    transient = theta0 - theta_star
    prod = np.eye(d)
    max_rel = 0.0
    u = rng.random()
    z = start if start >= 0 else _pick(pi_cdf, u, num_states)
    for k in range(1, n + 1):
        if k > 1:
            u = rng.random()
            z = _pick(row_cdf[z], u, num_states)
        # h first: it reads j[level] at the previous step
        h -= alpha * (a_of[z] @ h + a_tilde[z] @ j[level])
        # descending levels keep j[l-1] at its previous-step value
        for l in range(level, 0, -1):
            j[l] -= alpha * (a_bar @ j[l] + a_tilde[z] @ j[l - 1])
        j[0] -= alpha * (a_bar @ j[0] + eps_of[z])
        transient -= alpha * (a_of[z] @ transient)
        if track_prod:
            prod = prod - alpha * (a_of[z] @ prod)
        theta -= alpha * (a_of[z] @ theta - b_of[z])
        if not (float(theta @ theta) <= _GUARD_SQ):
            return k, theta, j, h, transient, prod, max_rel
        err = theta - theta_star
        recon = transient + h + j.sum(axis=0)
        diff = err - recon
        rel = np.sqrt(float(diff @ diff)) / max(np.sqrt(float(err @ err)), 1e-30)
        if rel > max_rel:
            max_rel = rel
        if stride > 0 and k % stride == 0:
            row = k // stride - 1
            if row < trace.shape[0]:
                trace[row, 0] = k
                trace[row, 1:1 + d] = theta
                for l in range(level + 1):
                    trace[row, 1 + d + l] = np.linalg.norm(j[l])
                trace[row, 2 + d + level] = np.linalg.norm(h)
                trace[row, 3 + d + level] = np.linalg.norm(transient)
                trace[row, 4 + d + level] = rel
    return -1, theta, j, h, transient, prod, max_rel
