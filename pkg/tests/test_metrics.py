import math

import numpy as np
import pytest
from conftest import random_spd
from scipy.stats import multivariate_normal

from gmfweights.exceptions import DimensionMismatchError, GMFError, GridError
from gmfweights.gaussian import GaussianComponent, GridField
from gmfweights.metrics import (
    MetricsReport,
    average,
    grid_mass,
    grid_mean,
    kld_grid,
    position_rmse,
    rmse,
    snees,
    true_posterior_grid,
)
from gmfweights.models import AvocadoModel, LinearModel


@pytest.fixture(scope="module")
def avocado_grid():
    return GridField.linspace((-6.0, -4.0), (2.0, 4.0), 81)


class TestRmse:
    def test_example(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0 / np.sqrt(2.0))

    def test_zero(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_position_only(self):
        truth = np.array([1.0, 2.0, 2.0, 100.0, 100.0, 100.0])
        assert position_rmse(truth, np.zeros(6)) == pytest.approx(np.sqrt(3.0))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            rmse([0.0, 0.0], [0.0, 0.0, 0.0])


class TestSnees:
    def test_examples(self):
        assert snees([1.0, 1.0], [0.0, 0.0], np.eye(2)) == pytest.approx(1.0)
        assert snees([1.0, 1.0], [0.0, 0.0], 2.0 * np.eye(2)) == pytest.approx(0.5)

    def test_consistent_estimator_averages_to_one(self, rng):
        n_x, draws = 4, 20_000
        cov = random_spd(rng, n_x)
        mean = rng.normal(size=n_x)
        truths = multivariate_normal(mean, cov).rvs(size=draws, random_state=rng)

        value = average(snees(x, mean, cov) for x in truths)
        assert value == pytest.approx(1.0, abs=5 * np.sqrt(2.0 / n_x / draws))

    def test_singular_covariance(self):
        with pytest.raises(GMFError):
            snees([1.0, 1.0], [0.0, 0.0], np.zeros((2, 2)))


class TestKldGrid:
    def test_identical_fields(self, avocado_grid, rng):
        field = avocado_grid.with_values(rng.random(avocado_grid.shape))
        assert kld_grid(field, field) == 0.0

    def test_constant_log_ratio(self):
        grid = GridField.linspace((0.0, 0.0), (1.0, 1.0), 11)
        q = grid.with_values(np.full(grid.shape, 0.2))
        p = grid.with_values(np.e * q.values)

        assert kld_grid(p, q) == pytest.approx(11 / 2)
        assert kld_grid(p, q, prefactor=1.0) == pytest.approx(121 / 2)

    def test_floor(self):
        grid = GridField.linspace((0.0, 0.0), (1.0, 1.0), 2)
        p = grid.with_values(np.zeros(grid.shape))
        q = grid.with_values(np.full(grid.shape, np.exp(-2.0)))

        assert kld_grid(p, q, floor=np.exp(-4.0)) == pytest.approx(4.0)

    def test_support_drops_tail_nodes(self):
        grid = GridField.linspace((-8.0, -8.0), (8.0, 8.0), 81)
        nodes = grid.nodes()
        q = grid.with_values(
            multivariate_normal(np.zeros(2), np.eye(2)).pdf(nodes).reshape(grid.shape)
        )
        core = q.values >= 1e-3 * q.values.max()
        p = q.with_values(np.where(core, q.values, 0.0))

        assert kld_grid(p, q) > 1e4
        assert kld_grid(p, q, support=1e-3) == pytest.approx(0.0, abs=1e-12)

    def test_support_floors_missing_mass(self):
        grid = GridField.linspace((0.0, 0.0), (1.0, 1.0), 2)
        q = grid.with_values(np.array([[1.0, 1.0], [1.0, 1e-9]]))
        p = grid.with_values(np.array([[np.exp(-2.0), 1.0], [1.0, 0.0]]))

        # the 1e-9 node lies outside the support
        assert kld_grid(p, q, support=1e-3) == pytest.approx(0.5 * 2.0**2 / 2)
        q_only = grid.with_values(np.array([[1.0, 1.0], [1.0, 1.0]]))
        p_zero = grid.with_values(np.array([[0.0, 1.0], [1.0, 1.0]]))
        assert kld_grid(p_zero, q_only, support=1e-3) == pytest.approx(
            0.5 * np.log(1e-3) ** 2 / 2
        )

    @pytest.mark.parametrize("support", [0.0, 1.0, -0.1])
    def test_invalid_support(self, support):
        grid = GridField.linspace((0.0, 0.0), (1.0, 1.0), 2)
        field = grid.with_values(np.ones(grid.shape))
        with pytest.raises(GridError, match="support"):
            kld_grid(field, field, support=support)

    def test_grid_mismatch(self, avocado_grid):
        other = GridField.linspace((-6.0, -4.0), (2.0, 4.0), 41)
        with pytest.raises(GridError, match="grid mismatch"):
            kld_grid(
                avocado_grid.with_values(np.ones(avocado_grid.shape)),
                other.with_values(np.ones(other.shape)),
            )


class TestTruePosteriorGrid:
    def test_matches_kalman_posterior(self):
        prior = GaussianComponent(1.0, [0.5, -0.3], [[1.0, 0.3], [0.3, 0.5]])
        model = LinearModel(np.eye(2), 0.4 * np.eye(2))
        y = np.array([1.0, 0.2])
        grid = GridField.linspace((-5.0, -5.0), (5.0, 5.0), 301)

        gain = prior.covariance @ np.linalg.inv(prior.covariance + model.noise_cov)
        mean = prior.mean + gain @ (y - prior.mean)
        cov = prior.covariance - gain @ prior.covariance

        field = true_posterior_grid(prior, model, y, grid)
        expected = multivariate_normal(mean, cov).pdf(grid.nodes()).reshape(grid.shape)
        interior = (slice(100, 201), slice(100, 201))
        np.testing.assert_allclose(
            field.values[interior], expected[interior], rtol=1e-6
        )
        np.testing.assert_allclose(grid_mean(field), mean, atol=1e-8)

    def test_unit_mass(self, avocado_grid):
        prior = GaussianComponent(1.0, [-3.5, 0.0], [[1.0, -0.5], [-0.5, 1.0]])
        field = true_posterior_grid(prior, AvocadoModel(), [0.0, 0.0], avocado_grid)

        assert grid_mass(field) == pytest.approx(1.0, abs=1e-8)
        assert np.all(field.values >= 0.0)

    def test_avocado_symmetry(self, avocado_grid):
        prior = GaussianComponent(1.0, [-3.5, 0.0], np.eye(2))
        field = true_posterior_grid(prior, AvocadoModel(), [0.0, 0.0], avocado_grid)

        np.testing.assert_allclose(field.values, field.values[:, ::-1], rtol=1e-12)

    def test_off_grid(self, avocado_grid):
        prior = GaussianComponent(1.0, [100.0, 100.0], np.eye(2))
        with pytest.raises(GridError, match="posterior off-grid"):
            true_posterior_grid(prior, AvocadoModel(), [0.0, 0.0], avocado_grid)

    def test_three_dimensional_prior(self, avocado_grid):
        prior = GaussianComponent(1.0, np.zeros(3), np.eye(3))
        model = LinearModel(np.eye(3), np.eye(3))
        with pytest.raises(GridError, match="2D only"):
            true_posterior_grid(prior, model, np.zeros(3), avocado_grid)


class TestMetricsReport:
    def test_negative_rmse(self):
        with pytest.raises(GMFError):
            MetricsReport("ekf:improved", 100, 10, rmse=-1.0)

    def test_flagged_fraction(self):
        report = MetricsReport("ekf:improved", 25, trials=8, flagged_trials=2, rmse=0.1)
        assert report.flagged_fraction == pytest.approx(0.2)
        assert MetricsReport("ekf:improved", 25, trials=0).flagged_fraction == 0.0

    def test_record(self):
        report = MetricsReport(
            "ukf:traditional-sigma", 100, 100, rmse=0.4, kld=93.4
        )
        record = report.to_record()
        assert record["method"] == "ukf:traditional-sigma"
        assert record["kld"] == 93.4
        assert record["snees"] is None


class TestAverage:
    def test_empty(self):
        assert math.isnan(average([]))

    def test_order_independent(self, rng):
        values = list(rng.normal(size=1000) * 1e8)
        assert average(values) == average(reversed(values))
