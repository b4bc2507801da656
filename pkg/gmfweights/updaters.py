"""
Per-component measurement updates: EKF, BRUF and sigma-point (UKF / CKF).

Each updater returns the posterior component together with the byproducts
(gain, prior Jacobian, prior innovation covariance, sigma points) that the
weight schemes in :mod:`gmfweights.weights` consume.
"""

from dataclasses import dataclass
from enum import StrEnum
from typing import Self

import numpy as np
import numpy.typing as npt

from gmfweights._linalg import _cholesky, _solve_spd, _symmetrize
from gmfweights.exceptions import DimensionMismatchError, GMFError, InvalidScalingError
from gmfweights.gaussian import GaussianComponent
from gmfweights.models import MeasurementModel

__all__ = [
    "UnscentedParams",
    "SigmaPointSet",
    "UpdateArtifacts",
    "UpdaterKind",
    "UpdaterSpec",
    "innovation_cov_prior",
    "ekf_update",
    "bruf_update",
    "unscented_sigma_points",
    "sigma_update",
]


@dataclass(frozen=True)
class UnscentedParams:
    """
    Three-parameter unscented transform scaling.

    Args:
        alpha: Spread of the sigma points
        beta: Prior distribution knowledge (2 is optimal for Gaussians)
        kappa: Secondary scaling
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 3.0

    @classmethod
    def ukf(cls) -> Self:
        """The UKF tuning used throughout: alpha=1, beta=2, kappa=3."""
        return cls(1.0, 2.0, 3.0)

    @classmethod
    def ckf(cls) -> Self:
        """Cubature rule expressed as a UKF: alpha=1, beta=0, kappa=0."""
        return cls(1.0, 0.0, 0.0)

    def lambda_u(self, n_x: int) -> float:
        return self.alpha**2 * (n_x + self.kappa) - n_x

    def weights(
        self, n_x: int
    ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """
        Mean and covariance weights for ``2 n_x + 1`` sigma points.

        Raises:
            InvalidScalingError: If ``n_x + lambda_u <= 0``
        """
        lambda_u = self.lambda_u(n_x)
        scale = n_x + lambda_u
        if not scale > 0.0:
            raise InvalidScalingError(n_x, lambda_u)

        mean_weights = np.full(2 * n_x + 1, 1.0 / (2.0 * scale))
        mean_weights[0] = lambda_u / scale
        cov_weights = mean_weights.copy()
        cov_weights[0] += 1.0 - self.alpha**2 + self.beta
        return mean_weights, cov_weights


@dataclass(frozen=True)
class SigmaPointSet:
    """
    Sigma points with their mean and covariance weights.

    Args:
        points: Array of shape ``(2 n_x + 1, n_x)``; row 0 is the center
        mean_weights: ``W_m``
        cov_weights: ``W_c``
    """

    points: npt.NDArray[np.float64]
    mean_weights: npt.NDArray[np.float64]
    cov_weights: npt.NDArray[np.float64]

    def mean(self) -> npt.NDArray[np.float64]:
        return self.mean_weights @ self.points

    def covariance(self) -> npt.NDArray[np.float64]:
        spread = self.points - self.mean()
        return _symmetrize((spread.T * self.cov_weights) @ spread)


@dataclass(frozen=True)
class UpdateArtifacts:
    """
    Result of one component update, plus what the weight schemes need.

    Args:
        prior: The prior component (carries the prior weight)
        posterior: Posterior component; its weight is the prior weight
        gain: Kalman gain ``K`` of shape ``(n_x, n_y)``
        prior_innovation_cov: ``P̄_yy`` (prior-linearized or unscented)
        predicted_measurement: ``h(x̄)`` for Jacobian updaters, the unscented
            mean for sigma-point updaters
        prior_jacobian: ``H̄ = H(x̄)``; None for sigma-point updaters
        prior_sigma: Prior sigma points; None for Jacobian updaters
        params: Unscented scaling used by the updater, if any
    """

    prior: GaussianComponent
    posterior: GaussianComponent
    gain: npt.NDArray[np.float64]
    prior_innovation_cov: npt.NDArray[np.float64]
    predicted_measurement: npt.NDArray[np.float64]
    prior_jacobian: npt.NDArray[np.float64] | None = None
    prior_sigma: SigmaPointSet | None = None
    params: UnscentedParams | None = None


def innovation_cov_prior(
    jacobian: npt.ArrayLike, cov: npt.ArrayLike, noise_cov: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """
    Prior-linearized innovation covariance ``H̄ P̄ H̄ᵀ + R``, symmetrized.
    """
    jacobian = np.atleast_2d(jacobian)
    cov = np.atleast_2d(cov)
    noise_cov = np.atleast_2d(noise_cov)
    if jacobian.shape[1] != cov.shape[0] or jacobian.shape[0] != noise_cov.shape[0]:
        raise DimensionMismatchError(
            f"H {jacobian.shape}, P {cov.shape} and R {noise_cov.shape} disagree"
        )
    return _symmetrize(jacobian @ cov @ jacobian.T + noise_cov)


def _check_dimensions(
    comp: GaussianComponent, model: MeasurementModel, y: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    y = np.ravel(np.asarray(y, dtype=np.float64))
    if comp.dimension != model.n_x or y.size != model.n_y:
        raise DimensionMismatchError(
            f"component n_x={comp.dimension}, measurement n_y={y.size}, "
            f"model expects ({model.n_x}, {model.n_y})"
        )
    return y


def _linearized_step(
    mean: npt.NDArray[np.float64],
    cov: npt.NDArray[np.float64],
    model: MeasurementModel,
    y: npt.NDArray[np.float64],
    noise_cov: npt.NDArray[np.float64],
) -> tuple[npt.NDArray[np.float64], ...]:
    jacobian = model.jacobian(mean)
    innovation_cov = innovation_cov_prior(jacobian, cov, noise_cov)
    gain = _solve_spd(innovation_cov, jacobian @ cov, "innovation covariance").T
    new_mean = mean + gain @ model.innovation(y, model.h(mean))
    new_cov = _symmetrize(cov - gain @ jacobian @ cov)
    return new_mean, new_cov, jacobian, innovation_cov, gain


def ekf_update(
    comp: GaussianComponent, model: MeasurementModel, y: npt.ArrayLike
) -> UpdateArtifacts:
    """
    Extended Kalman filter update of one component, linearized at its mean.

    Args:
        comp: Prior component
        model: Measurement model
        y: Measurement

    Returns:
        Posterior and artifacts with ``H̄``, ``P̄_yy``, ``K`` and ``h(x̄)``.
    """
    y = _check_dimensions(comp, model, y)
    mean, cov, jacobian, innovation_cov, gain = _linearized_step(
        comp.mean, comp.covariance, model, y, model.noise_cov
    )
    return UpdateArtifacts(
        prior=comp,
        posterior=GaussianComponent(comp.weight, mean, cov),
        gain=gain,
        prior_innovation_cov=innovation_cov,
        predicted_measurement=model.h(comp.mean),
        prior_jacobian=jacobian,
    )


def bruf_update(
    comp: GaussianComponent,
    model: MeasurementModel,
    y: npt.ArrayLike,
    steps: int = 10,
) -> UpdateArtifacts:
    """
    Bayesian recursive update: ``steps`` relinearized EKF updates with noise
    inflated to ``steps * R``.

    The weight artifacts (``H̄``, ``P̄_yy``, ``K``, ``h(x̄)``) are evaluated at
    the original prior, not at the final iterate.

    Args:
        comp: Prior component
        model: Measurement model
        y: Measurement
        steps: Number of partial updates ``N >= 1``
    """
    if steps < 1:
        raise GMFError(f"BRUF needs at least one step, got {steps}")
    y = _check_dimensions(comp, model, y)

    inflated = steps * model.noise_cov
    mean, cov = comp.mean.copy(), comp.covariance.copy()
    for _ in range(steps):
        mean, cov, *_ = _linearized_step(mean, cov, model, y, inflated)

    jacobian = model.jacobian(comp.mean)
    innovation_cov = innovation_cov_prior(jacobian, comp.covariance, model.noise_cov)
    gain = _solve_spd(
        innovation_cov, jacobian @ comp.covariance, "innovation covariance"
    ).T
    return UpdateArtifacts(
        prior=comp,
        posterior=GaussianComponent(comp.weight, mean, cov),
        gain=gain,
        prior_innovation_cov=innovation_cov,
        predicted_measurement=model.h(comp.mean),
        prior_jacobian=jacobian,
    )


def unscented_sigma_points(
    mean: npt.ArrayLike, cov: npt.ArrayLike, params: UnscentedParams
) -> SigmaPointSet:
    """
    Generate ``2 n_x + 1`` sigma points from a lower-triangular square root.

    Args:
        mean: Center of shape ``(n_x,)``
        cov: Covariance of shape ``(n_x, n_x)``
        params: Unscented scaling

    Returns:
        Points ``[x̄, x̄ + cols(sqrt((n+λ)P)), x̄ - cols(sqrt((n+λ)P))]``.
    """
    mean = np.ravel(np.asarray(mean, dtype=np.float64))
    n_x = mean.size
    mean_weights, cov_weights = params.weights(n_x)

    root = np.sqrt(n_x + params.lambda_u(n_x)) * _cholesky(cov)
    points = np.vstack([mean, mean + root.T, mean - root.T])
    return SigmaPointSet(points, mean_weights, cov_weights)


def _measurement_points(
    sigma: SigmaPointSet, model: MeasurementModel
) -> npt.NDArray[np.float64]:
    return model.measure(sigma.points)


def _unscented_measurement_mean(
    sigma: SigmaPointSet,
    measurements: npt.NDArray[np.float64],
    model: MeasurementModel,
) -> npt.NDArray[np.float64]:
    # Residuals about the central point keep wrapped angles continuous.
    center = measurements[0]
    return center + sigma.mean_weights @ model.innovation(measurements, center)


def sigma_update(
    comp: GaussianComponent,
    model: MeasurementModel,
    y: npt.ArrayLike,
    params: UnscentedParams,
) -> UpdateArtifacts:
    """
    Unscented (sigma-point) update of one component.

    The posterior covariance uses ``P̂ = P̄ - K P̄_yy Kᵀ``.

    Args:
        comp: Prior component
        model: Measurement model
        y: Measurement
        params: Unscented scaling (``UnscentedParams.ckf()`` for the CKF)
    """
    y = _check_dimensions(comp, model, y)
    sigma = unscented_sigma_points(comp.mean, comp.covariance, params)
    measurements = _measurement_points(sigma, model)
    predicted = _unscented_measurement_mean(sigma, measurements, model)

    state_spread = sigma.points - comp.mean
    measurement_spread = model.innovation(measurements, predicted)
    innovation_cov = _symmetrize(
        (measurement_spread.T * sigma.cov_weights) @ measurement_spread
        + model.noise_cov
    )
    cross_cov = (state_spread.T * sigma.cov_weights) @ measurement_spread

    gain = _solve_spd(innovation_cov, cross_cov.T, "innovation covariance").T
    mean = comp.mean + gain @ model.innovation(y, predicted)
    cov = _symmetrize(comp.covariance - gain @ innovation_cov @ gain.T)

    return UpdateArtifacts(
        prior=comp,
        posterior=GaussianComponent(comp.weight, mean, cov),
        gain=gain,
        prior_innovation_cov=innovation_cov,
        predicted_measurement=predicted,
        prior_sigma=sigma,
        params=params,
    )


class UpdaterKind(StrEnum):
    EKF = "ekf"
    BRUF = "bruf"
    UKF = "ukf"
    CKF = "ckf"


@dataclass(frozen=True)
class UpdaterSpec:
    """
    Which component updater to run, with its settings.

    Args:
        kind: Updater family
        bruf_steps: Number of BRUF partial updates
        params: Unscented scaling; defaults to the family's standard tuning
    """

    kind: UpdaterKind = UpdaterKind.EKF
    bruf_steps: int = 10
    params: UnscentedParams | None = None

    @classmethod
    def parse(
        cls,
        name: str,
        bruf_steps: int = 10,
        params: UnscentedParams | None = None,
    ) -> Self:
        try:
            kind = UpdaterKind(name.lower())
        except ValueError as e:
            raise GMFError(f"Invalid updater: {name}") from e
        return cls(kind, bruf_steps, params)

    @property
    def is_sigma(self) -> bool:
        return self.kind in (UpdaterKind.UKF, UpdaterKind.CKF)

    @property
    def sigma_params(self) -> UnscentedParams:
        """Scaling for sigma-point work (updates or sigma weight schemes)."""
        if self.params is not None:
            return self.params
        if self.kind == UpdaterKind.UKF:
            return UnscentedParams.ukf()
        return UnscentedParams.ckf()

    def update(
        self, comp: GaussianComponent, model: MeasurementModel, y: npt.ArrayLike
    ) -> UpdateArtifacts:
        """Run the configured updater on one component."""
        match self.kind:
            case UpdaterKind.EKF:
                return ekf_update(comp, model, y)
            case UpdaterKind.BRUF:
                return bruf_update(comp, model, y, self.bruf_steps)
            case UpdaterKind.UKF | UpdaterKind.CKF:
                return sigma_update(comp, model, y, self.sigma_params)
