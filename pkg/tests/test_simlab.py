import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from stackd.simlab import (
    EXPERIMENTS,
    NormalPredictiveSpec,
    SeparationParams,
    TruthSpec,
    exact_conjugate_loo,
    experiment_bma_recovery,
    experiment_prior_sensitivity,
    experiment_theorem2,
    lpd_moments,
    local_best_map,
    normal_normal_log_marginal,
    population_stacking,
    run_experiment,
    theorem2_experiment,
)


def point_truth(mu=0.0, sigma=1.0):
    return TruthSpec(
        mu_star=lambda x: mu,
        sigma_star=lambda x: sigma,
        x_grid=np.array([0.0]),
        x_mass=np.array([1.0]),
    )


def const_spec(mu, sigma, label="m"):
    return NormalPredictiveSpec(mu=lambda x: mu, sigma=lambda x: sigma, label=label)


class TestNormalNormalLogMarginal:
    def test_single_observation_closed_form(self):
        got = normal_normal_log_marginal([0.0], 1.0, 10.0)
        assert got == pytest.approx(-0.5 * math.log(2 * math.pi * 101.0), abs=1e-12)

    def test_matches_numeric_integration(self):
        y = np.array([0.4, -0.2, 0.1])
        lik_sd, prior_sd = 0.8, 3.0

        def integrand(mu):
            return np.prod(norm.pdf(y, mu, lik_sd)) * norm.pdf(mu, 0, prior_sd)

        numeric, _ = quad(integrand, -40, 40)
        assert normal_normal_log_marginal(y, lik_sd, prior_sd) == pytest.approx(
            math.log(numeric), abs=1e-9
        )

    def test_wide_prior_divides_marginal_by_ten(self):
        rng = np.random.default_rng(0)
        y = rng.normal(0.0, 0.1, size=50)
        ratio = math.exp(
            normal_normal_log_marginal(y, 1.0, 10.0)
            - normal_normal_log_marginal(y, 1.0, 100.0)
        )
        assert 9.0 < ratio < 11.0

    def test_point_mass_prior_limit(self):
        y = np.array([0.3, -0.5])
        got = normal_normal_log_marginal(y, 1.0, 1e-8)
        lik_at_zero = float(np.sum(norm.logpdf(y, 0.0, 1.0)))
        assert got == pytest.approx(lik_at_zero, abs=1e-6)

    def test_nonpositive_sd_rejected(self):
        with pytest.raises(ValueError):
            normal_normal_log_marginal([0.0], 0.0, 1.0)
        with pytest.raises(ValueError):
            normal_normal_log_marginal([0.0], 1.0, -1.0)


class TestLpdMoments:
    def test_matched_model_values(self):
        mean, sd = lpd_moments(const_spec(0.0, 1.0), point_truth(), 0.0)
        assert mean == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-12)
        assert sd == pytest.approx(math.sqrt(2.0) / 2.0, abs=1e-12)

    def test_mean_shift_quadratic_sd_linear_in_gamma(self):
        base, _ = lpd_moments(const_spec(0.0, 1.0), point_truth(), 0.0)
        shifts, sds = [], []
        gammas = [1.0, 2.0, 4.0]
        for g in gammas:
            mean_g, sd_g = lpd_moments(const_spec(g, 1.0), point_truth(), 0.0)
            shifts.append(base - mean_g)
        for g in (20.0, 40.0):
            sds.append(lpd_moments(const_spec(g, 1.0), point_truth(), 0.0)[1])
        # mean shift is exactly gamma^2 / 2 here
        np.testing.assert_allclose(shifts, [0.5, 2.0, 8.0], rtol=1e-12)
        # sd doubles when gamma doubles, asymptotically
        assert sds[1] / sds[0] == pytest.approx(2.0, rel=1e-3)

    def test_flat_forecast_limit(self):
        means = [
            lpd_moments(const_spec(0.0, s), point_truth(), 0.0)[0] for s in (1e3, 1e6)
        ]
        assert means[1] < means[0]
        assert means[0] - means[1] == pytest.approx(math.log(1e6 / 1e3), abs=1e-3)

    def test_monte_carlo_agreement(self):
        rng = np.random.default_rng(21)
        z = rng.standard_normal(200_000)
        for gamma, sigma_k in ((0.0, 1.0), (1.5, 0.7), (2.5, 1.4)):
            mean_cf, sd_cf = lpd_moments(
                const_spec(gamma, sigma_k), point_truth(), 0.0
            )
            logp = norm.logpdf(z, gamma, sigma_k)
            se_mean = float(np.std(logp, ddof=1)) / math.sqrt(z.size)
            assert abs(mean_cf - float(np.mean(logp))) < 3 * se_mean
            mc_sd = float(np.std(logp, ddof=1))
            centered = logp - logp.mean()
            se_sd = math.sqrt(
                max(float(np.mean(centered**4)) - mc_sd**4, 0.0) / z.size
            ) / (2 * mc_sd)
            assert abs(sd_cf - mc_sd) < 3 * se_sd


class TestLocalBestMap:
    def test_single_model(self):
        lbm = local_best_map([const_spec(0.0, 1.0)], point_truth())
        assert lbm.best.tolist() == [0]
        np.testing.assert_allclose(lbm.proportions, [1.0])

    def test_mirrored_models_tie(self):
        truth = point_truth(0.0, 1.0)
        lbm = local_best_map(
            [const_spec(-1.0, 1.0), const_spec(1.0, 1.0)], truth
        )
        np.testing.assert_allclose(lbm.proportions, [0.5, 0.5])
        assert lbm.margin[0] == 0.0

    def test_regime_design_proportion(self):
        truth = TruthSpec(
            mu_star=lambda x: 0.0,
            sigma_star=lambda x: 0.5,
            x_grid=np.array([0.0, 1.0]),
            x_mass=np.array([0.7, 0.3]),
        )
        spec_a = NormalPredictiveSpec(
            mu=lambda x: 0.0 if x < 0.5 else 5.0, sigma=lambda x: 0.5
        )
        spec_b = NormalPredictiveSpec(
            mu=lambda x: 5.0 if x < 0.5 else 0.0, sigma=lambda x: 0.5
        )
        lbm = local_best_map([spec_a, spec_b], truth)
        np.testing.assert_allclose(lbm.proportions, [0.7, 0.3])


class TestPopulationStacking:
    def test_single_model(self):
        w = population_stacking([const_spec(0.0, 1.0)], point_truth())
        np.testing.assert_allclose(w.w, [1.0])

    def test_truth_equals_one_component(self):
        w = population_stacking(
            [const_spec(0.0, 1.0), const_spec(2.0, 1.0)], point_truth(0.0, 1.0)
        )
        assert w.w[0] > 0.999

    def test_mixture_recovery(self):
        truth = TruthSpec(
            mu_star=lambda x: -2.0 if x < 0.5 else 2.0,
            sigma_star=lambda x: 1.0,
            x_grid=np.array([0.0, 1.0]),
            x_mass=np.array([0.3, 0.7]),
        )
        comps = [const_spec(-2.0, 1.0), const_spec(2.0, 1.0)]
        w = population_stacking(comps, truth)
        np.testing.assert_allclose(w.w, [0.3, 0.7], atol=0.01)

    def test_relabel_invariance(self):
        truth = TruthSpec(
            mu_star=lambda x: -2.0 if x < 0.5 else 2.0,
            sigma_star=lambda x: 1.0,
            x_grid=np.array([0.0, 1.0]),
            x_mass=np.array([0.3, 0.7]),
        )
        comps = [const_spec(-2.0, 1.0), const_spec(2.0, 1.0)]
        w = population_stacking(comps, truth)
        w_swapped = population_stacking(comps[::-1], truth)
        np.testing.assert_allclose(w.w, w_swapped.w[::-1], atol=1e-4)

    def test_low_order_rejected(self):
        with pytest.raises(ValueError):
            population_stacking([const_spec(0, 1)], point_truth(), quadrature_order=8)


def separated_design(margin, masses=(0.6, 0.4), sigma=0.3):
    offset = sigma * math.sqrt(2.0 * margin)
    truth = TruthSpec(
        mu_star=lambda x: 0.0,
        sigma_star=lambda x: sigma,
        x_grid=np.array([0.0, 1.0]),
        x_mass=np.asarray(masses, dtype=float),
    )
    spec_a = NormalPredictiveSpec(
        mu=lambda x: 0.0 if x < 0.5 else offset, sigma=lambda x: sigma
    )
    spec_b = NormalPredictiveSpec(
        mu=lambda x: offset if x < 0.5 else 0.0, sigma=lambda x: sigma
    )
    return [spec_a, spec_b], truth


class TestTheorem2:
    def test_strong_separation_small_distance(self):
        specs, truth = separated_design(margin=50.0, masses=(0.7, 0.3))
        report = theorem2_experiment(specs, truth, SeparationParams(L=10.0, p0=0.99))
        assert report.separated
        assert report.margin_min >= 10.0
        assert report.l1_distance < 0.02
        np.testing.assert_allclose(report.stacking.w, [0.7, 0.3], atol=0.02)

    def test_identical_models_flagged_unseparated(self):
        specs = [const_spec(0.0, 1.0), const_spec(0.0, 1.0)]
        report = theorem2_experiment(
            specs, point_truth(), SeparationParams(L=1.0, p0=0.9)
        )
        assert not report.separated
        assert report.p0_measured == 0.0
        np.testing.assert_allclose(report.proportions, [0.5, 0.5])

    @staticmethod
    def _asymmetric_design(margin):
        # unequal band widths: at low separation, overlap with the wider
        # band biases stacking away from the local-best proportions
        from scipy.optimize import brentq

        sigma, sig_a, sig_b = 0.3, 0.3, 0.45
        truth = TruthSpec(
            mu_star=lambda x: 0.0,
            sigma_star=lambda x: sigma,
            x_grid=np.array([0.0, 1.0]),
            x_mass=np.array([0.6, 0.4]),
        )

        def margin_at0(d):
            a = -0.5 - 0.5 * math.log(2 * math.pi * sig_a**2)
            b = -(d**2 + sigma**2) / (2 * sig_b**2) - 0.5 * math.log(
                2 * math.pi * sig_b**2
            )
            return a - b - margin

        def margin_at1(d):
            b = -(sigma**2) / (2 * sig_b**2) - 0.5 * math.log(2 * math.pi * sig_b**2)
            a = -(d**2 + sigma**2) / (2 * sig_a**2) - 0.5 * math.log(
                2 * math.pi * sig_a**2
            )
            return b - a - margin

        delta_b = brentq(margin_at0, 0, 50)
        delta_a = brentq(margin_at1, 0, 50)
        spec_a = NormalPredictiveSpec(
            mu=lambda x, d=delta_a: 0.0 if x < 0.5 else d, sigma=lambda x: sig_a
        )
        spec_b = NormalPredictiveSpec(
            mu=lambda x, d=delta_b: d if x < 0.5 else 0.0, sigma=lambda x: sig_b
        )
        return [spec_a, spec_b], truth

    def test_distance_decreases_with_margin(self):
        dists = []
        for margin in (1.0, 3.0, 10.0):
            specs, truth = self._asymmetric_design(margin)
            report = theorem2_experiment(
                specs, truth, SeparationParams(L=margin, p0=0.5)
            )
            assert report.margin_min == pytest.approx(margin, abs=1e-6)
            dists.append(report.l1_distance)
        assert dists[0] > dists[1] > dists[2]
        assert dists[2] < 0.01


class TestExactConjugateLoo:
    def test_symmetry(self):
        vals = exact_conjugate_loo(np.array([-1.3, 1.3]), 1.0, 5.0)
        assert vals[0] == pytest.approx(vals[1], abs=1e-12)

    def test_flat_prior_limit_matches_plugin(self):
        rng = np.random.default_rng(14)
        y = rng.normal(0.0, 1.0, size=400)
        got = exact_conjugate_loo(y, 1.0, 1e6)
        n = y.size
        for i in (0, 57, 399):
            rest_mean = (y.sum() - y[i]) / (n - 1)
            pred_sd = math.sqrt(1.0 + 1.0 / (n - 1))
            assert got[i] == pytest.approx(
                norm.logpdf(y[i], rest_mean, pred_sd), abs=1e-4
            )

    def test_brute_force_oracle(self):
        # direct numeric integration of the LOO posterior predictive
        y = np.array([0.5, -0.8, 0.2])
        lik_sd, prior_sd = 1.0, 2.0
        got = exact_conjugate_loo(y, lik_sd, prior_sd)
        for i in range(3):
            rest = np.delete(y, i)

            def joint(mu):
                return np.prod(norm.pdf(rest, mu, lik_sd)) * norm.pdf(mu, 0, prior_sd)

            evidence, _ = quad(joint, -30, 30)

            def pred(mu):
                return norm.pdf(y[i], mu, lik_sd) * joint(mu)

            numer, _ = quad(pred, -30, 30)
            assert got[i] == pytest.approx(math.log(numer / evidence), abs=1e-9)


class TestExperiments:
    def test_registry_names(self):
        assert set(EXPERIMENTS) == {
            "prior_sensitivity",
            "chisq_moments",
            "theorem2",
            "bma_recovery",
        }
        with pytest.raises(KeyError):
            run_experiment("nope")

    def test_prior_sensitivity_ratios(self):
        records = experiment_prior_sensitivity(seed=0)
        ratios = {r["wide_prior_sd"]: r["value"] for r in records if r["kind"] == "marginal_ratio"}
        assert 9.0 < ratios[100.0] < 11.0
        assert 90.0 < ratios[1000.0] < 110.0

    def test_theorem2_records(self):
        records = experiment_theorem2(seed=0)
        by_kind = {r["kind"]: r for r in records}
        sep = by_kind["separated_grid"]
        assert sep["l1_distance"] < 0.02
        assert sep["separated"]
        surrogate = by_kind["two_mode_surrogate"]
        assert surrogate["l1_distance"] < 0.01
        assert max(surrogate["aggregate_elpd_weights"]) > 0.99

    def test_bma_recovery_record(self):
        rec = experiment_bma_recovery(seed=0)[0]
        assert rec["l1_distance"] < 0.02
        np.testing.assert_allclose(rec["stacking_weights"], [0.3, 0.7], atol=0.01)

    def test_determinism(self):
        a = experiment_prior_sensitivity(seed=3)
        b = experiment_prior_sensitivity(seed=3)
        assert a == b
