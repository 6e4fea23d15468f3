"""Backend parity: the jit kernels and the numpy fallback must walk
identical state paths and agree numerically on every accumulator."""

import math

import numpy as np
import pytest

import modelgen
import oracles
from lsalab import build_model
from lsalab._kernels import active_backend_name, numpy_backend, select_backend
from lsalab.rng import make_rng

numba_backend = pytest.importorskip("lsalab._kernels.numba_backend")

BACKENDS = (numba_backend, numpy_backend)


def rr_args(model, alpha, n, theta0=None, start=-1):
    ch = model.chain
    t0 = model.theta_star + 1.0 if theta0 is None else theta0
    return (ch.pi_cdf, ch.row_cdf, model.a_of, model.b_of, model.eps_of,
            alpha, t0, n, n // 2, start)


class TestSelection:
    def test_active_name(self):
        assert active_backend_name() in ("numba", "numpy")

    def test_explicit_selection(self):
        assert select_backend("numpy") is numpy_backend
        assert select_backend("numba") is numba_backend

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            select_backend("cuda")


class TestPathParity:
    def test_identical_integer_paths(self, two_state):
        ch = two_state.chain
        for seed in range(5):
            for start in (-1, 0, 1):
                paths = [
                    be.markov_path(make_rng(seed), ch.pi_cdf, ch.row_cdf, start, 4000)
                    for be in BACKENDS
                ]
                assert np.array_equal(paths[0], paths[1])

    def test_path_matches_python_replay(self):
        m = modelgen.random_model(2, num_states=5)
        ch = m.chain
        for be in BACKENDS:
            got = be.markov_path(make_rng(31), ch.pi_cdf, ch.row_cdf, -1, 800)
            ref = oracles.path_reference(ch, -1, 800, make_rng(31))
            assert np.array_equal(got, ref)


class TestStreamParity:
    def test_rr_stream_bitwise_two_state(self, two_state):
        outs = [be.rr_stream(make_rng(9), *rr_args(two_state, 0.05, 5000))
                for be in BACKENDS]
        assert outs[0][0] == outs[1][0] == -1
        for x, y in zip(outs[0][1:], outs[1][1:]):
            assert np.array_equal(x, y)

    def test_rr_stream_close_random_models(self):
        for seed in (3, 4):
            m = modelgen.random_model(seed, dim=4, num_states=4, noise_scale=0.5)
            outs = [be.rr_stream(make_rng(seed), *rr_args(m, 0.02, 3000))
                    for be in BACKENDS]
            assert outs[0][0] == outs[1][0] == -1
            for x, y in zip(outs[0][1:], outs[1][1:]):
                assert np.allclose(x, y, rtol=1e-9, atol=1e-12)

    def test_lsa_stream_matches_rr_alpha_branch(self, two_state):
        # the coupled runner's alpha branch is the plain runner bit for bit
        for be in BACKENDS:
            args = rr_args(two_state, 0.05, 4000)
            div_l, theta, pr_s, npr_s, nfull_s = be.lsa_stream(make_rng(5), *args)
            div_r, theta_a, _, pra_s, _, npr_r, nfull_r = be.rr_stream(make_rng(5), *args)
            assert div_l == div_r == -1
            assert np.array_equal(theta, theta_a)
            assert np.array_equal(pr_s, pra_s)
            assert np.array_equal(npr_s, npr_r)
            assert np.array_equal(nfull_s, nfull_r)

    def test_expansion_stream_close(self, two_state):
        models = [two_state, modelgen.random_model(5, dim=3, num_states=3)]
        for m in models:
            ch = m.chain
            outs = []
            for be in BACKENDS:
                out = be.expansion_stream(
                    make_rng(2), ch.pi_cdf, ch.row_cdf, m.a_of, m.a_tilde,
                    m.b_of, m.eps_of, m.a_bar, 0.05, m.theta_star + 0.5,
                    m.theta_star, 2000, 2, -1, True, 0, np.zeros((0, 1)),
                )
                outs.append(out)
            assert outs[0][0] == outs[1][0] == -1
            for x, y in zip(outs[0][1:], outs[1][1:]):
                assert np.allclose(np.asarray(x), np.asarray(y), rtol=1e-9, atol=1e-12)


class TestAccumulation:
    def test_noise_sums_integral_two_state(self, two_state):
        # eps values are integer vectors, so compensated window sums must
        # come out exactly integral; any drift would show up here
        for be in BACKENDS:
            _, _, _, _, _, npr_s, nfull_s = be.rr_stream(
                make_rng(13), *rr_args(two_state, 0.01, 200001)
            )
            for v in np.concatenate([npr_s, nfull_s]):
                assert v == round(v)

    def test_window_sum_matches_fsum(self):
        m = modelgen.random_model(6, dim=2, num_states=3)
        n, n0 = 20000, 10000
        for be in BACKENDS:
            path = be.markov_path(make_rng(21), m.chain.pi_cdf, m.chain.row_cdf, -1, n)
            _, _, _, _, _, npr_s, nfull_s = be.rr_stream(
                make_rng(21), *rr_args(m, 0.01, n, theta0=m.theta_star.copy())
            )
            for i in range(m.dim):
                ref_pr = math.fsum(m.eps_of[z, i] for z in path[n0:])
                ref_full = math.fsum(m.eps_of[z, i] for z in path)
                assert abs(npr_s[i] - ref_pr) < 1e-10 * (1.0 + abs(ref_pr))
                assert abs(nfull_s[i] - ref_full) < 1e-10 * (1.0 + abs(ref_full))

    def test_divergence_flag(self, two_state):
        for be in BACKENDS:
            out = be.rr_stream(make_rng(1), *rr_args(two_state, 5.0, 10000))
            assert out[0] >= 1

    def test_lsa_trace_rows(self, two_state):
        ch = two_state.chain
        for be in BACKENDS:
            trace = np.zeros((10, 3))
            div, _ = be.lsa_trace(
                make_rng(3), ch.pi_cdf, ch.row_cdf, two_state.a_of, two_state.b_of,
                0.05, two_state.theta_star + 1.0, 1000, -1, 100, trace,
            )
            assert div == -1
            assert np.array_equal(trace[:, 0], np.arange(100, 1001, 100))
