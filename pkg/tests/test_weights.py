import logging

import numpy as np
import pytest
from conftest import random_spd
from scipy.stats import multivariate_normal

from gmfweights.exceptions import (
    DegenerateWeightsError,
    NegativeSigmaWeightError,
    SingularCovarianceError,
)
from gmfweights.gaussian import GaussianComponent, GaussianMixture
from gmfweights.models import AvocadoModel, LinearModel
from gmfweights.scenarios import (
    ScenarioConfig,
    avocado_mixture,
    avocado_prior,
    run_linear_check,
)
from gmfweights.updaters import (
    UnscentedParams,
    UpdaterKind,
    UpdaterSpec,
    ekf_update,
    sigma_update,
    unscented_sigma_points,
)
from gmfweights.weights import (
    CovarianceForm,
    MixtureUpdate,
    SigmaVariant,
    WeightScheme,
    compute_log_weight,
    gmm_measurement_update,
    innovation_cov_posterior,
    log_weight_improved,
    log_weight_improved_sigma,
    log_weight_traditional,
    log_weight_traditional_sigma,
)

EKF = UpdaterSpec(UpdaterKind.EKF)
CKF = UpdaterSpec(UpdaterKind.CKF)
ORIGIN = [0.0, 0.0]


def avocado_component(rng):
    mean = np.array([rng.uniform(-4.0, -1.0), rng.uniform(-1.0, 1.0)])
    return GaussianComponent(1.0, mean, random_spd(rng, 2, floor=0.1))


def posterior_forms(artifacts, model):
    posterior = artifacts.posterior
    return {
        form: innovation_cov_posterior(
            model.jacobian(posterior.mean),
            artifacts.prior_jacobian,
            posterior.covariance,
            artifacts.prior_innovation_cov,
            artifacts.gain,
            model.noise_cov,
            form,
        )
        for form in CovarianceForm
    }


class TestPosteriorInnovationCov:
    def test_forms_agree_for_consistent_gain(self, rng):
        model = AvocadoModel()
        for _ in range(20):
            artifacts = ekf_update(avocado_component(rng), model, rng.normal(size=2))
            forms = posterior_forms(artifacts, model)

            reference = forms[CovarianceForm.JOSEPH].value
            scale = np.max(np.abs(reference))
            for form in (CovarianceForm.DIRECT, CovarianceForm.INVERSE):
                np.testing.assert_allclose(
                    forms[form].value, reference, rtol=1e-8, atol=1e-8 * scale
                )
                assert forms[form].form == form

    def test_joseph_is_psd_for_any_gain(self, rng):
        for _ in range(50):
            value = innovation_cov_posterior(
                rng.normal(size=(2, 3)),
                rng.normal(size=(2, 3)),
                random_spd(rng, 3),
                random_spd(rng, 2),
                rng.normal(size=(3, 2)),
                random_spd(rng, 2),
            ).value
            np.testing.assert_array_equal(value, value.T)
            assert np.linalg.eigvalsh(value).min() >= -1e-12

    def test_direct_form_without_noise(self, rng):
        post_jac = rng.normal(size=(2, 2))
        post_cov = random_spd(rng, 2)

        result = innovation_cov_posterior(
            post_jac,
            rng.normal(size=(2, 2)),
            post_cov,
            random_spd(rng, 2),
            rng.normal(size=(2, 2)),
            np.zeros((2, 2)),
            CovarianceForm.DIRECT,
        )
        np.testing.assert_allclose(result.value, post_jac @ post_cov @ post_jac.T)

    def test_inverse_form_with_singular_prior_innovation(self):
        with pytest.raises(SingularCovarianceError):
            innovation_cov_posterior(
                np.eye(2),
                np.eye(2),
                np.eye(2),
                np.zeros((2, 2)),
                np.eye(2),
                np.eye(2),
                CovarianceForm.INVERSE,
            )


class TestComponentLogWeights:
    def test_traditional_at_zero_innovation(self, rng):
        matrix = rng.normal(size=(2, 3))
        model = LinearModel(matrix, random_spd(rng, 2))
        comp = GaussianComponent(0.5, rng.normal(size=3), random_spd(rng, 3))
        artifacts = ekf_update(comp, model, matrix @ comp.mean)

        _, log_det = np.linalg.slogdet(2.0 * np.pi * artifacts.prior_innovation_cov)
        result = log_weight_traditional(0.5, artifacts, matrix @ comp.mean)
        assert result == pytest.approx(np.log(0.5) - 0.5 * log_det, rel=1e-12)

    def test_zero_prior_weight(self):
        comp = GaussianComponent(0.0, [-3.0, 0.0], np.eye(2))
        artifacts = ekf_update(comp, AvocadoModel(), ORIGIN)
        assert log_weight_traditional(0.0, artifacts, ORIGIN) == -np.inf

    def test_improved_differs_from_traditional_on_avocado(self, rng):
        model = AvocadoModel()
        artifacts = ekf_update(avocado_component(rng), model, ORIGIN)

        traditional = log_weight_traditional(1.0, artifacts, ORIGIN, model)
        improved = log_weight_improved(1.0, artifacts, model, ORIGIN)
        assert abs(improved - traditional) > 1e-6

    def test_mixture_equals_mean_for_constant_measurement(self, rng):
        model = LinearModel(np.zeros((1, 2)), [[1.0]])
        comp = GaussianComponent(1.0, rng.normal(size=2), random_spd(rng, 2))
        artifacts = sigma_update(comp, model, [0.3], UnscentedParams.ukf())

        mean = log_weight_traditional_sigma(
            1.0, artifacts, model, [0.3], SigmaVariant.MEAN
        )
        mixture = log_weight_traditional_sigma(
            1.0, artifacts, model, [0.3], SigmaVariant.MIXTURE
        )
        assert mixture == pytest.approx(mean, rel=1e-12)

    def test_improved_sigma_tends_to_likelihood_for_weak_measurements(self, rng):
        model = AvocadoModel().with_noise_cov(0.16e12 * np.eye(2))
        comp = avocado_component(rng)
        artifacts = sigma_update(comp, model, ORIGIN, UnscentedParams.ckf())

        improved = log_weight_improved_sigma(1.0, artifacts, model, ORIGIN)
        likelihood = log_weight_traditional_sigma(
            1.0, artifacts, model, ORIGIN, SigmaVariant.LIKELIHOOD
        )
        assert improved == pytest.approx(likelihood, abs=1e-6)

    @pytest.mark.parametrize(
        "weight_fn",
        [
            lambda a, m: log_weight_traditional_sigma(
                1.0, a, m, ORIGIN, params=UnscentedParams(0.5, 2.0, 0.0)
            ),
            lambda a, m: log_weight_improved_sigma(
                1.0, a, m, ORIGIN, params=UnscentedParams(0.5, 2.0, 0.0)
            ),
        ],
    )
    def test_negative_mean_weight_rejected(self, weight_fn):
        model = AvocadoModel()
        comp = GaussianComponent(1.0, [-3.0, 0.0], np.eye(2))
        artifacts = ekf_update(comp, model, ORIGIN)
        with pytest.raises(NegativeSigmaWeightError):
            weight_fn(artifacts, model)

    def test_mean_variant_accepts_negative_mean_weight(self):
        model = AvocadoModel()
        comp = GaussianComponent(1.0, [-3.0, 0.0], np.eye(2))
        artifacts = ekf_update(comp, model, ORIGIN)
        params = UnscentedParams(0.5, 2.0, 0.0)
        sigma = unscented_sigma_points(comp.mean, comp.covariance, params)
        assert sigma.mean_weights[0] < 0.0

        predicted = sigma.mean_weights @ model.measure(sigma.points)
        expected = multivariate_normal(
            predicted, artifacts.prior_innovation_cov
        ).logpdf(ORIGIN)
        value = log_weight_traditional_sigma(
            1.0, artifacts, model, ORIGIN, SigmaVariant.MEAN, params
        )
        assert value == pytest.approx(expected, rel=1e-10)

    def test_sigma_schemes_on_jacobian_updater(self, rng):
        model = AvocadoModel()
        artifacts = ekf_update(avocado_component(rng), model, ORIGIN)

        for scheme in (WeightScheme.TRADITIONAL_SIGMA, WeightScheme.IMPROVED_SIGMA):
            assert np.isfinite(compute_log_weight(scheme, artifacts, model, ORIGIN))

    def test_density_schemes_on_sigma_updater(self, rng):
        model = AvocadoModel()
        artifacts = sigma_update(
            avocado_component(rng), model, ORIGIN, UnscentedParams.ukf()
        )

        for scheme in (WeightScheme.TRADITIONAL, WeightScheme.IMPROVED):
            assert np.isfinite(compute_log_weight(scheme, artifacts, model, ORIGIN))


class TestMixtureUpdate:
    @pytest.fixture
    def mixture(self, rng):
        return avocado_mixture(avocado_prior(), 20, rng)

    def test_single_component_has_unit_weight(self):
        mix = GaussianMixture((avocado_prior(),))
        for scheme in WeightScheme:
            posterior = gmm_measurement_update(mix, AvocadoModel(), ORIGIN, EKF, scheme)
            np.testing.assert_array_equal(posterior.weights, [1.0])

    def test_identical_components_share_weight(self):
        comp = GaussianComponent(0.5, [-3.0, 0.2], np.eye(2))
        mix = GaussianMixture((comp, comp))
        for scheme in WeightScheme:
            posterior = gmm_measurement_update(mix, AvocadoModel(), ORIGIN, CKF, scheme)
            np.testing.assert_allclose(posterior.weights, [0.5, 0.5])

    def test_component_order_is_kept(self, mixture):
        order = np.arange(len(mixture))[::-1]
        reversed_mix = GaussianMixture(tuple(mixture.components[i] for i in order))

        forward = gmm_measurement_update(
            mixture, AvocadoModel(), ORIGIN, EKF, WeightScheme.IMPROVED
        )
        backward = gmm_measurement_update(
            reversed_mix, AvocadoModel(), ORIGIN, EKF, WeightScheme.IMPROVED
        )
        np.testing.assert_allclose(backward.weights, forward.weights[order], rtol=1e-12)
        np.testing.assert_array_equal(backward.means, forward.means[order])

    def test_scheme_never_changes_posterior_moments(self, mixture):
        for spec in (EKF, CKF):
            results = [
                gmm_measurement_update(mixture, AvocadoModel(), ORIGIN, spec, scheme)
                for scheme in WeightScheme
            ]
            for result in results[1:]:
                np.testing.assert_array_equal(result.means, results[0].means)
                np.testing.assert_array_equal(
                    result.covariances, results[0].covariances
                )

    def test_improved_reweights_avocado_mixture(self, rng):
        mix = avocado_mixture(avocado_prior(), 100, rng)
        traditional = gmm_measurement_update(
            mix, AvocadoModel(), ORIGIN, EKF, WeightScheme.TRADITIONAL
        )
        improved = gmm_measurement_update(
            mix, AvocadoModel(), ORIGIN, EKF, WeightScheme.IMPROVED
        )

        assert improved.weights.sum() == pytest.approx(1.0)
        assert np.max(np.abs(improved.weights - traditional.weights)) > 1e-3

    def test_parallel_matches_serial(self, mixture):
        serial = gmm_measurement_update(
            mixture, AvocadoModel(), ORIGIN, EKF, WeightScheme.IMPROVED
        )
        parallel = gmm_measurement_update(
            mixture, AvocadoModel(), ORIGIN, EKF, WeightScheme.IMPROVED, n_jobs=2
        )
        np.testing.assert_allclose(parallel.weights, serial.weights, rtol=1e-12)
        np.testing.assert_allclose(parallel.means, serial.means, rtol=1e-12)

    def test_details(self, mixture):
        details = gmm_measurement_update(
            mixture,
            AvocadoModel(),
            ORIGIN,
            EKF,
            WeightScheme.TRADITIONAL,
            return_details=True,
        )
        assert isinstance(details, MixtureUpdate)
        assert len(details.artifacts) == len(mixture)
        assert details.log_weights.shape == (len(mixture),)

    def test_all_zero_weights_are_degenerate(self, caplog):
        means = [[-3.0, 0.0], [-2.0, 0.5]]
        mix = GaussianMixture.from_arrays([0.0, 0.0], means, np.eye(2))
        with caplog.at_level(logging.WARNING, logger="gmfweights.weights"):
            with pytest.raises(DegenerateWeightsError):
                gmm_measurement_update(
                    mix, AvocadoModel(), ORIGIN, EKF, WeightScheme.TRADITIONAL
                )
        assert "vanished" in caplog.text


class TestLinearEquivalence:
    def test_weights_agree_on_random_linear_models(self):
        report = run_linear_check(
            ScenarioConfig(scenario="linear-check", linear_cases=100, seed=3)
        )
        assert report.passed, report.discrepancies
        assert set(report.discrepancies) >= {"ekf:improved", "ukf:improved-sigma"}

    @pytest.mark.slow
    def test_weights_agree_on_many_linear_models(self):
        cfg = ScenarioConfig(scenario="linear-check", linear_cases=500)
        assert run_linear_check(cfg).max_discrepancy < 1e-8
