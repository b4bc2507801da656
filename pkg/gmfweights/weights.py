"""
GMM weight schemes and the full mixture measurement update.

Traditional weights evaluate each component's measurement marginal with the
model linearized at the prior; improved weights linearize at the component
posterior. Both come in a density (Jacobian) and a sigma-point flavour.
"""

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from scipy.special import logsumexp

from gmfweights._linalg import _solve_spd, _symmetrize
from gmfweights.exceptions import (
    DegenerateWeightsError,
    DimensionMismatchError,
    GMFError,
    NegativeSigmaWeightError,
)
from gmfweights.gaussian import GaussianMixture, log_gaussian_pdf, normalize_log_weights
from gmfweights.models import MeasurementModel
from gmfweights.updaters import (
    SigmaPointSet,
    UnscentedParams,
    UpdateArtifacts,
    UpdaterSpec,
    innovation_cov_prior,
    unscented_sigma_points,
)

__all__ = [
    "WeightScheme",
    "CovarianceForm",
    "SigmaVariant",
    "PosteriorInnovationCov",
    "innovation_cov_prior",
    "innovation_cov_posterior",
    "log_weight_traditional",
    "log_weight_improved",
    "log_weight_traditional_sigma",
    "log_weight_improved_sigma",
    "compute_log_weight",
    "gmm_measurement_update",
    "MixtureUpdate",
]

logger = logging.getLogger(__name__)


class WeightScheme(StrEnum):
    TRADITIONAL = "traditional"
    IMPROVED = "improved"
    TRADITIONAL_SIGMA = "traditional-sigma"
    IMPROVED_SIGMA = "improved-sigma"

    @property
    def is_improved(self) -> bool:
        return self in (WeightScheme.IMPROVED, WeightScheme.IMPROVED_SIGMA)

    @property
    def is_sigma(self) -> bool:
        return self in (WeightScheme.TRADITIONAL_SIGMA, WeightScheme.IMPROVED_SIGMA)


class CovarianceForm(StrEnum):
    """Algebraically equivalent forms of the posterior innovation covariance."""

    DIRECT = "direct"
    INVERSE = "inverse"
    JOSEPH = "joseph"


class SigmaVariant(StrEnum):
    """How traditional sigma-point weights combine the prior sigma points."""

    MEAN = "mean"
    MIXTURE = "mixture"
    LIKELIHOOD = "likelihood"


@dataclass(frozen=True)
class PosteriorInnovationCov:
    """
    Posterior-linearized innovation covariance ``P̂_yy``.

    Args:
        value: The covariance matrix
        form: Which expression produced it
    """

    value: npt.NDArray[np.float64]
    form: CovarianceForm


def innovation_cov_posterior(
    posterior_jacobian: npt.ArrayLike,
    prior_jacobian: npt.ArrayLike,
    posterior_cov: npt.ArrayLike,
    prior_innovation_cov: npt.ArrayLike,
    gain: npt.ArrayLike,
    noise_cov: npt.ArrayLike,
    form: CovarianceForm = CovarianceForm.JOSEPH,
) -> PosteriorInnovationCov:
    """
    Innovation covariance with the measurement linearized at the posterior.

    With ``D = Ĥ - H̄``:

    - ``DIRECT``:  ``Ĥ P̂ Ĥᵀ + R - Ĥ K R - (Ĥ K R)ᵀ``
    - ``INVERSE``: ``D P̂ Dᵀ + R P̄_yy⁻¹ Rᵀ``
    - ``JOSEPH``:  ``D P̂ Dᵀ + (I - H̄ K) P̄_yy (I - H̄ K)ᵀ`` (PSD by construction)

    Args:
        posterior_jacobian: ``Ĥ = H(x̂)``
        prior_jacobian: ``H̄ = H(x̄)``
        posterior_cov: ``P̂_xx``
        prior_innovation_cov: ``P̄_yy``
        gain: ``K``
        noise_cov: ``R``
        form: Expression to evaluate

    Returns:
        The symmetrized covariance tagged with its form.
    """
    post_jac = np.atleast_2d(posterior_jacobian)
    prior_jac = np.atleast_2d(prior_jacobian)
    post_cov = np.atleast_2d(posterior_cov)
    prior_innov = np.atleast_2d(prior_innovation_cov)
    gain = np.atleast_2d(gain)
    noise_cov = np.atleast_2d(noise_cov)
    if post_jac.shape != prior_jac.shape or gain.shape != post_jac.T.shape:
        raise DimensionMismatchError("Jacobians and gain disagree in shape")

    delta = post_jac - prior_jac
    match form:
        case CovarianceForm.DIRECT:
            cross = post_jac @ gain @ noise_cov
            value = post_jac @ post_cov @ post_jac.T + noise_cov - cross - cross.T
        case CovarianceForm.INVERSE:
            value = delta @ post_cov @ delta.T + noise_cov @ _solve_spd(
                prior_innov, noise_cov.T, "prior innovation covariance"
            )
        case CovarianceForm.JOSEPH:
            contraction = np.eye(noise_cov.shape[0]) - prior_jac @ gain
            value = (
                delta @ post_cov @ delta.T
                + contraction @ prior_innov @ contraction.T
            )
        case _:
            raise GMFError(f"Invalid covariance form: {form}")

    return PosteriorInnovationCov(_symmetrize(value), CovarianceForm(form))


def _log(weight: float) -> float:
    return float(np.log(weight)) if weight > 0.0 else -np.inf


def _log_density_of_residual(
    residual: npt.NDArray[np.float64], cov: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64] | float:
    return log_gaussian_pdf(residual, np.zeros(cov.shape[0]), cov)


def _residual(
    model: MeasurementModel | None, y: npt.ArrayLike, predicted: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    if model is None:
        return np.asarray(y, dtype=np.float64) - np.asarray(predicted, dtype=np.float64)
    return model.innovation(y, predicted)


def log_weight_traditional(
    prior_weight: float,
    artifacts: UpdateArtifacts,
    y: npt.ArrayLike,
    model: MeasurementModel | None = None,
) -> float:
    """
    Traditional weight ``ln w⁻ + ln N(y; h(x̄), P̄_yy)``.

    For BRUF artifacts ``h(x̄)`` and ``P̄_yy`` belong to the original prior.

    Args:
        prior_weight: ``w⁻``
        artifacts: Output of a component updater
        y: Measurement
        model: If given, its residual (angle wrapping) is used
    """
    residual = _residual(model, y, artifacts.predicted_measurement)
    return _log(prior_weight) + float(
        _log_density_of_residual(residual, artifacts.prior_innovation_cov)
    )


def _prior_jacobian(
    artifacts: UpdateArtifacts, model: MeasurementModel
) -> npt.NDArray[np.float64]:
    if artifacts.prior_jacobian is not None:
        return artifacts.prior_jacobian
    return model.jacobian(artifacts.prior.mean)


def log_weight_improved(
    prior_weight: float,
    artifacts: UpdateArtifacts,
    model: MeasurementModel,
    y: npt.ArrayLike,
    form: CovarianceForm = CovarianceForm.JOSEPH,
) -> float:
    """
    Improved weight ``ln w⁻ + ln N(y; h(x̂), P̂_yy)``, linearized at the posterior.

    Args:
        prior_weight: ``w⁻``
        artifacts: Output of a component updater
        model: Measurement model supplying ``h`` and ``H``
        y: Measurement
        form: Expression used for ``P̂_yy``
    """
    posterior = artifacts.posterior
    innovation_cov = innovation_cov_posterior(
        model.jacobian(posterior.mean),
        _prior_jacobian(artifacts, model),
        posterior.covariance,
        artifacts.prior_innovation_cov,
        artifacts.gain,
        model.noise_cov,
        form,
    )
    residual = model.innovation(y, model.h(posterior.mean))
    return _log(prior_weight) + float(
        _log_density_of_residual(residual, innovation_cov.value)
    )


def _check_sigma_weights(sigma: SigmaPointSet) -> None:
    if np.any(sigma.mean_weights < 0.0):
        raise NegativeSigmaWeightError()


def _prior_sigma(
    artifacts: UpdateArtifacts, params: UnscentedParams | None
) -> SigmaPointSet:
    if artifacts.prior_sigma is not None:
        return artifacts.prior_sigma
    params = params or artifacts.params or UnscentedParams.ckf()
    return unscented_sigma_points(
        artifacts.prior.mean, artifacts.prior.covariance, params
    )


def log_weight_traditional_sigma(
    prior_weight: float,
    artifacts: UpdateArtifacts,
    model: MeasurementModel,
    y: npt.ArrayLike,
    variant: SigmaVariant = SigmaVariant.MIXTURE,
    params: UnscentedParams | None = None,
) -> float:
    """
    Traditional weight from prior sigma points.

    - ``MEAN``:       ``N(y; Σ W_m h(χ̄_l), P̄_yy)``
    - ``MIXTURE``:    ``Σ W_m N(y; h(χ̄_l), P̄_yy)``
    - ``LIKELIHOOD``: ``Σ W_m N(y; h(χ̄_l), R)``

    Sums over sigma points are taken in the log domain, so the ``MIXTURE`` and
    ``LIKELIHOOD`` variants need non-negative mean weights; ``MEAN`` accepts
    any. Sigma points are generated with ``params`` when the updater did not
    produce any.

    Raises:
        NegativeSigmaWeightError: For a negative mean weight in a summed variant
    """
    sigma = _prior_sigma(artifacts, params)
    if variant != SigmaVariant.MEAN:
        _check_sigma_weights(sigma)
    measurements = model.measure(sigma.points)

    match variant:
        case SigmaVariant.MEAN:
            center = measurements[0]
            offsets = model.innovation(measurements, center)
            predicted = center + sigma.mean_weights @ offsets
            log_likelihood = float(
                _log_density_of_residual(
                    model.innovation(y, predicted), artifacts.prior_innovation_cov
                )
            )
        case SigmaVariant.MIXTURE | SigmaVariant.LIKELIHOOD:
            cov = (
                artifacts.prior_innovation_cov
                if variant == SigmaVariant.MIXTURE
                else model.noise_cov
            )
            terms = np.atleast_1d(
                _log_density_of_residual(model.innovation(y, measurements), cov)
            )
            log_likelihood = float(logsumexp(terms, b=sigma.mean_weights))
        case _:
            raise GMFError(f"Invalid sigma variant: {variant}")

    return _log(prior_weight) + log_likelihood


def log_weight_improved_sigma(
    prior_weight: float,
    artifacts: UpdateArtifacts,
    model: MeasurementModel,
    y: npt.ArrayLike,
    params: UnscentedParams | None = None,
) -> float:
    """
    Improved weight by importance sampling around the component posterior.

    Each posterior sigma point ``χ̂_l`` contributes
    ``N(χ̂_l; x̄, P̄) N(y; h(χ̂_l), R) / N(χ̂_l; x̂, P̂)``; the ratio is formed in
    the log domain and the points are combined with the mean weights.
    """
    params = params or artifacts.params or UnscentedParams.ckf()
    prior, posterior = artifacts.prior, artifacts.posterior
    sigma = unscented_sigma_points(posterior.mean, posterior.covariance, params)
    _check_sigma_weights(sigma)

    measurements = model.measure(sigma.points)
    log_likelihood = np.atleast_1d(
        _log_density_of_residual(model.innovation(y, measurements), model.noise_cov)
    )
    log_ratio = (
        np.atleast_1d(prior.log_pdf(sigma.points))
        + log_likelihood
        - np.atleast_1d(posterior.log_pdf(sigma.points))
    )
    return _log(prior_weight) + float(logsumexp(log_ratio, b=sigma.mean_weights))


def compute_log_weight(
    scheme: WeightScheme,
    artifacts: UpdateArtifacts,
    model: MeasurementModel,
    y: npt.ArrayLike,
    *,
    form: CovarianceForm = CovarianceForm.JOSEPH,
    variant: SigmaVariant = SigmaVariant.MIXTURE,
    params: UnscentedParams | None = None,
) -> float:
    """Unnormalized log-weight of one updated component under ``scheme``."""
    prior_weight = artifacts.prior.weight
    match scheme:
        case WeightScheme.TRADITIONAL:
            return log_weight_traditional(prior_weight, artifacts, y, model)
        case WeightScheme.IMPROVED:
            return log_weight_improved(prior_weight, artifacts, model, y, form)
        case WeightScheme.TRADITIONAL_SIGMA:
            return log_weight_traditional_sigma(
                prior_weight, artifacts, model, y, variant, params
            )
        case WeightScheme.IMPROVED_SIGMA:
            return log_weight_improved_sigma(prior_weight, artifacts, model, y, params)
        case _:
            raise GMFError(f"Invalid weight scheme: {scheme}")


@dataclass(frozen=True)
class MixtureUpdate:
    """
    A mixture measurement update with its per-component byproducts.

    Args:
        mixture: Posterior mixture with normalized weights
        artifacts: Per-component updater output, in component order
        log_weights: Unnormalized log-weights, in component order
    """

    mixture: GaussianMixture
    artifacts: tuple[UpdateArtifacts, ...]
    log_weights: npt.NDArray[np.float64]


def _update_component(component, model, y, updater, scheme, form, variant):
    artifacts = updater.update(component, model, y)
    log_weight = compute_log_weight(
        scheme,
        artifacts,
        model,
        y,
        form=form,
        variant=variant,
        params=updater.sigma_params,
    )
    return artifacts, log_weight


def gmm_measurement_update(
    mix: GaussianMixture,
    model: MeasurementModel,
    y: npt.ArrayLike,
    updater: UpdaterSpec,
    scheme: WeightScheme,
    *,
    form: CovarianceForm = CovarianceForm.JOSEPH,
    variant: SigmaVariant = SigmaVariant.MIXTURE,
    n_jobs: int = 1,
    return_details: bool = False,
) -> GaussianMixture | MixtureUpdate:
    """
    Update every component of a mixture and reweight it.

    Components are updated independently with ``updater``, weighted with
    ``scheme`` and normalized. The weight scheme never changes the posterior
    component moments.

    Args:
        mix: Normalized prior mixture
        model: Measurement model
        y: Measurement
        updater: Component updater
        scheme: Weight scheme
        form: ``P̂_yy`` expression for the improved density weights
        variant: Combination rule for the traditional sigma-point weights
        n_jobs: Number of joblib workers for the component updates
        return_details: Return a :class:`MixtureUpdate` instead of the mixture

    Raises:
        DegenerateWeightsError: If every component likelihood vanishes
    """
    args = (model, y, updater, WeightScheme(scheme), form, variant)
    if n_jobs == 1:
        results = [_update_component(c, *args) for c in mix.components]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_update_component)(c, *args) for c in mix.components
        )

    artifacts = tuple(a for a, _ in results)
    log_weights = np.array([lw for _, lw in results])
    try:
        weights = normalize_log_weights(log_weights)
    except DegenerateWeightsError:
        logger.warning(
            "All %d component likelihoods vanished (%s/%s)",
            len(mix),
            updater.kind,
            scheme,
        )
        raise

    posterior = GaussianMixture(
        tuple(a.posterior.with_weight(w) for a, w in zip(artifacts, weights))
    )
    logger.debug("Updated %d components with %s/%s", len(mix), updater.kind, scheme)

    if return_details:
        return MixtureUpdate(posterior, artifacts, log_weights)
    return posterior
