from functools import partial

import numpy as np
import pytest
from scipy.linalg import expm

from gmfweights.exceptions import GMFError, IntegrationError, NonFiniteInputError
from gmfweights.models import CR3BPParams, cr3bp_derivative, jacobi_constant
from gmfweights.propagation import IntegratorConfig, propagate

NRHO_STATE = np.array([1.0110350588, 0.0, -0.17315, 0.0, -0.0780141199, 0.0])
NRHO_PERIOD = 1.3632096570
SYMMETRY = np.diag([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])

DAMPED = np.array([[0.0, 1.0, 0.0], [-4.0, -0.3, 0.5], [0.0, 0.0, -1.0]])


def linear_rhs(t, x):
    return x @ DAMPED.T


def cr3bp_rhs(t, x, params):
    return cr3bp_derivative(x, params)


@pytest.fixture(scope="module")
def cr3bp():
    return partial(cr3bp_rhs, params=CR3BPParams.earth_moon())


def relative_error(result, expected):
    return np.linalg.norm(result - expected) / np.linalg.norm(expected)


class TestLinearSystem:
    x0 = np.array([1.0, -0.5, 2.0])

    def test_zero_interval_returns_initial_state(self):
        result = propagate(self.x0, 0.3, 0.3, linear_rhs)
        np.testing.assert_array_equal(result, self.x0)

    def test_matches_matrix_exponential(self):
        result = propagate(self.x0, 0.0, 1.0, linear_rhs)
        assert relative_error(result, expm(DAMPED) @ self.x0) <= 1e-10

    def test_error_does_not_grow_when_tightening(self):
        expected = expm(5.0 * DAMPED) @ self.x0
        errors = [
            relative_error(
                propagate(self.x0, 0.0, 5.0, linear_rhs, IntegratorConfig(tol, tol)),
                expected,
            )
            for tol in (1e-6, 1e-8, 1e-10)
        ]
        assert errors[1] <= errors[0]
        assert errors[2] <= errors[1]

    def test_backward_integration(self):
        forward = propagate(self.x0, 0.0, 2.0, linear_rhs)
        back = propagate(forward, 2.0, 0.0, linear_rhs)

        np.testing.assert_allclose(back, self.x0, rtol=1e-10)
        assert relative_error(
            propagate(self.x0, 0.0, -1.0, linear_rhs), expm(-DAMPED) @ self.x0
        ) <= 1e-10

    def test_batch_matches_individual_states(self, rng):
        states = rng.normal(size=(4, 3))
        batch = propagate(states, 0.0, 1.5, linear_rhs)

        assert batch.shape == (4, 3)
        for state, result in zip(states, batch):
            np.testing.assert_allclose(
                result, propagate(state, 0.0, 1.5, linear_rhs), rtol=1e-9, atol=1e-10
            )

    def test_member_accuracy_does_not_depend_on_batch_size(self):
        cfg = IntegratorConfig(rel_tol=1e-6, abs_tol=1e-6)
        solo = propagate(self.x0, 0.0, 5.0, linear_rhs, cfg)
        for quiet in (1, 50):
            stack = np.vstack([self.x0, np.full((quiet, 3), 1e-14)])
            batch = propagate(stack, 0.0, 5.0, linear_rhs, cfg)
            np.testing.assert_allclose(batch[0], solo, rtol=1e-12, atol=1e-14)

    def test_deterministic(self):
        first = propagate(self.x0, 0.0, 3.0, linear_rhs)
        second = propagate(self.x0, 0.0, 3.0, linear_rhs)
        np.testing.assert_array_equal(first, second)

    def test_budget_exhausted(self):
        cfg = IntegratorConfig(max_steps=3)
        with pytest.raises(IntegrationError, match="integration budget exhausted"):
            propagate(self.x0, 0.0, 100.0, linear_rhs, cfg)

    def test_non_finite_initial_state(self):
        with pytest.raises(NonFiniteInputError):
            propagate([np.nan, 0.0, 0.0], 0.0, 1.0, linear_rhs)

    def test_non_finite_derivative(self):
        with pytest.raises(IntegrationError, match="non-finite step"):
            propagate(self.x0, 0.0, 1.0, lambda t, x: np.full_like(x, np.inf))

    def test_derivative_errors_propagate(self):
        def failing(t, x):
            raise ZeroDivisionError("boom")

        with pytest.raises(ZeroDivisionError):
            propagate(self.x0, 0.0, 1.0, failing)


class TestIntegratorConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rel_tol": 0.0},
            {"abs_tol": -1.0},
            {"safety_factor": 1.5},
            {"initial_step": 0.0},
            {"max_steps": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(GMFError):
            IntegratorConfig(**kwargs)


class TestCR3BPPropagation:
    def test_jacobi_constant_over_one_period(self, cr3bp):
        params = CR3BPParams.earth_moon()
        final = propagate(NRHO_STATE, 0.0, NRHO_PERIOD, cr3bp)

        before = jacobi_constant(NRHO_STATE, params)
        after = jacobi_constant(final, params)
        assert after == pytest.approx(before, rel=1e-9)

    def test_time_reversal_symmetry(self, cr3bp, rng):
        x0 = NRHO_STATE + 1e-4 * rng.normal(size=6)
        dt = NRHO_PERIOD / 3.0

        forward = propagate(x0, 0.0, dt, cr3bp)
        mirrored = SYMMETRY @ propagate(SYMMETRY @ x0, 0.0, -dt, cr3bp)
        np.testing.assert_allclose(mirrored, forward, rtol=1e-8, atol=1e-10)

    def test_tighter_tolerance_does_not_move_result(self, cr3bp):
        loose = propagate(NRHO_STATE, 0.0, 0.5, cr3bp, IntegratorConfig(1e-12, 1e-12))
        tight = propagate(NRHO_STATE, 0.0, 0.5, cr3bp, IntegratorConfig(1e-13, 1e-13))
        np.testing.assert_allclose(loose, tight, rtol=1e-9, atol=1e-11)
