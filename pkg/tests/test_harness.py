import math

import numpy as np
import pytest

from lsalab import (
    ConfigError,
    ExperimentConfig,
    GridPoint,
    InsufficientGrid,
    NumericalDivergence,
    build_model,
    delta_first_order,
    experiment_from_config,
    jackknife_se,
    leading_term_check,
    remainder_bound,
    remainder_scaling,
    run_experiment,
    write_csv,
)


def zero_noise_model():
    return build_model({"transition": [[1.0]], "a": [[[1.0]]], "b": [[2.0]]})


def small_cfg(model, **kw):
    args = dict(model=model, grid=[GridPoint(n=2000, alpha=0.02)],
                n_traj=32, base_seed=5)
    args.update(kw)
    return ExperimentConfig(**args)


class TestConfig:
    def test_beta_step_rule(self):
        pt = GridPoint(n=10000, beta=0.5, c=2.0)
        assert pt.resolve_alpha() == pytest.approx(0.02, rel=1e-15)

    def test_alpha_takes_precedence(self):
        assert GridPoint(n=100, alpha=0.3, beta=0.5).resolve_alpha() == 0.3

    def test_missing_step_rule(self, two_state):
        cfg = small_cfg(two_state, grid=[GridPoint(n=100)])
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_bad_estimator(self, two_state):
        cfg = small_cfg(two_state, estimators=("pr", "mle"))
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_bad_statistic(self, two_state):
        cfg = small_cfg(two_state, statistics=("bias", "variance"))
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_small_traj_count(self, two_state):
        cfg = small_cfg(two_state, n_traj=1)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_empty_grid(self, two_state):
        cfg = small_cfg(two_state, grid=[])
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_bad_noise_window(self, two_state):
        cfg = small_cfg(two_state, noise_window="half")
        with pytest.raises(ConfigError):
            cfg.validate()


class TestJackknife:
    def test_equals_classical_se_for_means(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(64)
        got = jackknife_se(np.mean, x)
        classical = x.std(ddof=1) / math.sqrt(x.size)
        assert got == pytest.approx(classical, rel=1e-12)

    def test_zero_for_constant_samples(self):
        assert jackknife_se(np.mean, np.full(16, 3.5)) == 0.0


class TestDeterminism:
    def test_thread_count_bitwise(self, two_state):
        runs = []
        for threads in (1, 4):
            cfg = small_cfg(two_state, threads=threads, keep_raw=True)
            runs.append(run_experiment(cfg))
        a, b = runs
        for pa, pb in zip(a.points, b.points):
            assert np.array_equal(pa.raw.pr, pb.raw.pr)
            assert np.array_equal(pa.raw.rr, pb.raw.rr)
            for est in ("pr", "rr"):
                assert np.array_equal(pa.stats[est].mean_err, pb.stats[est].mean_err)
                assert pa.stats[est].mse == pb.stats[est].mse
                assert pa.stats[est].remainder == pb.stats[est].remainder

    def test_csv_bitwise_across_threads(self, two_state, tmp_path):
        blobs = []
        for threads in (1, 3):
            cfg = small_cfg(two_state, threads=threads)
            outdir = tmp_path / f"t{threads}"
            paths = write_csv(run_experiment(cfg), outdir)
            blobs.append({p.name: p.read_bytes() for p in paths if p.suffix == ".csv"})
        assert blobs[0] == blobs[1]

    def test_repeat_run_identical(self, two_state):
        cfg = small_cfg(two_state)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        for pa, pb in zip(a.points, b.points):
            assert np.array_equal(pa.stats["rr"].mean_err, pb.stats["rr"].mean_err)
            assert pa.stats["rr"].mse == pb.stats["rr"].mse


class TestSeedIndependence:
    def test_disjoint_seeds_statistically_compatible(self, two_state):
        cfgs = [
            ExperimentConfig(model=two_state, grid=[GridPoint(n=10**4, alpha=0.02)],
                             n_traj=200, base_seed=seed)
            for seed in (11, 907)
        ]
        ra, rb = (run_experiment(c).points[0] for c in cfgs)
        for est in ("pr", "rr"):
            sa, sb = ra.stats[est], rb.stats[est]
            comb = np.sqrt(sa.mean_err_se**2 + sb.mean_err_se**2)
            assert np.all(np.abs(sa.mean_err - sb.mean_err) <= 4.0 * comb), est
            comb_mse = math.hypot(sa.mse_se, sb.mse_se)
            assert abs(sa.mse - sb.mse) <= 4.0 * comb_mse, est


class TestZeroNoise:
    def test_all_statistics_vanish(self):
        cfg = ExperimentConfig(model=zero_noise_model(),
                               grid=[GridPoint(n=500, alpha=0.1)], n_traj=4)
        res = run_experiment(cfg)
        for est in ("pr", "rr"):
            st = res.points[0].stats[est]
            assert np.array_equal(st.mean_err, [0.0])
            assert st.mse == 0.0
            assert st.remainder == 0.0

    def test_scaling_fit_rejected_cleanly(self):
        grid = [GridPoint(n=n, beta=0.5) for n in (100, 316, 1000, 3163)]
        cfg = ExperimentConfig(model=zero_noise_model(), grid=grid, n_traj=4)
        with pytest.raises(InsufficientGrid):
            remainder_scaling(cfg)

    def test_leading_term_zero(self):
        cfg = ExperimentConfig(model=zero_noise_model(),
                               grid=[GridPoint(n=10**4, beta=0.5)], n_traj=4)
        lt = leading_term_check(cfg)
        assert lt.ratio == 0.0
        assert lt.trace_sigma_eps == 0.0


class TestMoments:
    def test_mse_dominates_squared_bias(self, scaling_result):
        _, res = scaling_result
        for pr in res.points:
            for est, st in pr.stats.items():
                assert st.mse >= float(st.mean_err @ st.mean_err) - 1e-12
                assert st.mse_se >= 0.0
                assert np.all(st.mean_err_se >= 0.0)

    def test_mse_rr_decreasing_and_below_pr(self, scaling_result):
        _, res = scaling_result
        mses = [res.find(n, beta=0.5).stats["rr"].mse for n in (10**3, 10**4, 10**5)]
        assert mses[0] > mses[1] > mses[2]
        top = res.find(10**5, beta=0.5)
        assert top.stats["rr"].mse < top.stats["pr"].mse

    def test_bias_law_at_fixed_alpha(self, two_state, acceptance_bias_result):
        _, res = acceptance_bias_result
        point = res.find(10**5, alpha=0.01)
        st = point.stats["pr"]
        delta = delta_first_order(two_state)
        dev = np.linalg.norm(st.mean_err - 0.01 * delta)
        allowance = 3.0 * np.linalg.norm(st.mean_err_se) + remainder_bound(two_state, 0.01)
        assert dev <= allowance

    def test_rr_bias_below_pr_bias(self, acceptance_bias_result):
        _, res = acceptance_bias_result
        for alpha in (0.02, 0.01):
            st = res.find(10**5, alpha=alpha).stats
            pr_norm = np.linalg.norm(st["pr"].mean_err)
            rr_norm = np.linalg.norm(st["rr"].mean_err)
            margin = 3.0 * (np.linalg.norm(st["pr"].mean_err_se)
                            + np.linalg.norm(st["rr"].mean_err_se))
            assert pr_norm - rr_norm > margin, alpha


class TestScalingFits:
    def test_slope_bands(self, scaling_fits):
        for beta in (0.5, 5.0 / 6.0):
            fit = scaling_fits[beta]
            target = beta - 2.0
            assert target - 0.15 <= fit.slope <= target + 0.15, beta

    def test_rescaled_series_matches_definition(self, scaling_fits):
        fit = scaling_fits[0.75]
        for n, rem, resc in zip(fit.n_values, fit.remainders, fit.rescaled):
            assert resc == pytest.approx(n ** 1.25 * rem, rel=1e-12)

    def test_matches_pilot(self, scaling_fits, pilot):
        for key, rec in pilot["scaling"].items():
            fit = scaling_fits[float(key)]
            assert fit.slope == pytest.approx(rec["slope"], rel=1e-9)
            assert fit.remainders == pytest.approx(rec["remainders"], rel=1e-9)

    def test_too_few_horizons(self, two_state):
        grid = [GridPoint(n=n, beta=0.5) for n in (1000, 2000, 4000)]
        cfg = ExperimentConfig(model=two_state, grid=grid, n_traj=8)
        with pytest.raises(InsufficientGrid):
            remainder_scaling(cfg)

    def test_narrow_span(self, two_state):
        grid = [GridPoint(n=n, beta=0.5) for n in (1000, 1500, 2000, 3000)]
        cfg = ExperimentConfig(model=two_state, grid=grid, n_traj=8)
        with pytest.raises(InsufficientGrid):
            remainder_scaling(cfg)


class TestLeadingTerm:
    def test_raw_ratio_near_root_two(self, leading_result):
        assert abs(leading_result.ratio_raw / math.sqrt(2.0) - 1.0) <= 0.15
        assert leading_result.target_raw == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_matches_pilot(self, leading_result, pilot):
        rec = pilot["leading_term"]
        assert leading_result.ratio == pytest.approx(rec["ratio"], rel=1e-9)
        assert leading_result.ratio_raw == pytest.approx(rec["ratio_raw"], rel=1e-9)

    def test_traj_doubling_stable(self, two_state):
        vals = {}
        for n_traj in (200, 400):
            cfg = ExperimentConfig(model=two_state,
                                   grid=[GridPoint(n=10**4, beta=0.5)],
                                   n_traj=n_traj, base_seed=31)
            vals[n_traj] = leading_term_check(cfg)
        diff = abs(vals[200].ratio - vals[400].ratio)
        comb = math.hypot(vals[200].ratio_se, vals[400].ratio_se)
        assert diff <= 2.0 * comb

    def test_needs_half_power_point(self, two_state):
        cfg = ExperimentConfig(model=two_state,
                               grid=[GridPoint(n=10**5, alpha=0.01)], n_traj=4)
        with pytest.raises(InsufficientGrid):
            leading_term_check(cfg)


class TestDivergenceHandling:
    def test_partial_results_preserved(self, two_state):
        grid = [GridPoint(n=2000, alpha=0.02), GridPoint(n=10**6, alpha=5.0)]
        cfg = ExperimentConfig(model=two_state, grid=grid, n_traj=8,
                               theta0=np.array([10.0, 10.0]))
        with pytest.raises(NumericalDivergence) as exc:
            run_experiment(cfg)
        err = exc.value
        assert err.partial is not None
        assert [p.point.n for p in err.partial.points] == [2000]
        assert err.failed_points and err.failed_points[0].n == 10**6


class TestCsvOutput:
    def test_layout_and_round_trip(self, two_state, tmp_path):
        cfg = small_cfg(two_state, grid=[GridPoint(n=1000, alpha=0.02),
                                         GridPoint(n=1000, beta=0.5)])
        res = run_experiment(cfg)
        paths = write_csv(res, tmp_path)
        names = sorted(p.name for p in paths)
        assert names == ["bias.csv", "mse.csv", "remainder.csv",
                         "rescaled_remainder.csv", "run_meta.json"]
        bias_lines = (tmp_path / "bias.csv").read_text().splitlines()
        assert bias_lines[0] == "n,alpha,beta,c,estimator,component,value,stderr"
        # 2 grid points x 2 estimators x 2 components
        assert len(bias_lines) == 1 + 8
        # repr-formatted floats parse back to the exact binary value
        first = bias_lines[1].split(",")
        assert float(first[6]) == res.points[0].stats["pr"].mean_err[0]
        mse_lines = (tmp_path / "mse.csv").read_text().splitlines()
        assert len(mse_lines) == 1 + 4
        resc_lines = (tmp_path / "rescaled_remainder.csv").read_text().splitlines()
        # only the beta-parameterized point contributes rescaled rows
        assert len(resc_lines) == 1 + 2


class TestConfigParsing:
    def test_inline_model_round_trip(self, two_state):
        raw = {
            "model": {
                "transition": two_state.chain.transition.tolist(),
                "a": two_state.a_of.tolist(),
                "b": two_state.b_of.tolist(),
            },
            "grid": [{"n": 1000, "alpha": 0.02}, {"n": 2000, "beta": 0.5, "c": 2.0}],
            "n_traj": 16,
            "base_seed": 3,
            "theta0": "star",
            "estimators": ["pr", "rr"],
        }
        cfg = experiment_from_config(raw)
        cfg.validate()
        assert cfg.n_traj == 16
        assert cfg.grid[1].resolve_alpha() == pytest.approx(2.0 * 2000**-0.5, rel=1e-15)
        assert cfg.theta0 is None

    def test_unknown_keys_rejected(self, two_state):
        raw = {
            "model": {
                "transition": two_state.chain.transition.tolist(),
                "a": two_state.a_of.tolist(),
                "b": two_state.b_of.tolist(),
            },
            "grid": [{"n": 100, "alpha": 0.1}],
            "n_trajectories": 16,
        }
        with pytest.raises(ConfigError):
            experiment_from_config(raw)

    def test_explicit_theta0_vector(self, two_state):
        raw = {
            "model": {
                "transition": two_state.chain.transition.tolist(),
                "a": two_state.a_of.tolist(),
                "b": two_state.b_of.tolist(),
            },
            "grid": [{"n": 100, "alpha": 0.1}],
            "theta0": [0.0, 5.0],
        }
        cfg = experiment_from_config(raw)
        assert np.array_equal(cfg.theta0, [0.0, 5.0])
