"""
Ensemble Gaussian mixture filter (EnGMF).

Particles carry the state between measurements. At each measurement epoch the
ensemble is turned into a kernel-density mixture with a Silverman bandwidth,
updated with any updater / weight scheme pair, and resampled.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gmfweights._linalg import _cholesky
from gmfweights.exceptions import EpochError, GMFError
from gmfweights.gaussian import GaussianComponent, GaussianMixture, mixture_moments
from gmfweights.models import MeasurementModel
from gmfweights.propagation import Derivative, IntegratorConfig, propagate
from gmfweights.updaters import UpdaterSpec
from gmfweights.weights import (
    CovarianceForm,
    SigmaVariant,
    WeightScheme,
    gmm_measurement_update,
)

__all__ = [
    "Ensemble",
    "EpochSnapshot",
    "silverman_bandwidth",
    "sample_ensemble",
    "ensemble_to_mixture",
    "resample_mixture",
    "systematic_indices",
    "engmf_step",
]

logger = logging.getLogger(__name__)

SeedLike = int | np.random.SeedSequence


def _seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    # fresh copy: spawning from it never advances the caller's sequence
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size
        )
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class Ensemble:
    """
    Equally weighted particles at a common time.

    Args:
        members: Array of shape ``(M, n_x)`` with ``M >= n_x + 2``
        seed_sequence: Lineage from which the next random streams are derived;
            deriving them leaves it untouched, so one ensemble always yields
            the same streams
        time: Scaled time of the members
    """

    members: npt.NDArray[np.float64]
    seed_sequence: np.random.SeedSequence
    time: float = 0.0

    def __post_init__(self) -> None:
        members = np.array(self.members, dtype=np.float64, ndmin=2)
        if members.ndim != 2:
            raise GMFError(f"ensemble members must be 2D, got shape {members.shape}")
        size, n_x = members.shape
        if size < n_x + 2:
            raise GMFError(f"ensemble of {size} members is too small for n_x={n_x}")
        members.flags.writeable = False
        object.__setattr__(self, "members", members)

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dimension(self) -> int:
        return self.members.shape[1]

    def with_members(self, members: npt.ArrayLike, time: float) -> "Ensemble":
        return Ensemble(members, self.seed_sequence, time)


@dataclass(frozen=True)
class EpochSnapshot:
    """
    Filter state retained after one measurement epoch.

    Args:
        epoch: Index into the epoch list
        time: Scaled time of the epoch
        mixture: Posterior mixture, or the kernel mixture if no measurement
        mean: Mixture mean
        covariance: Mixture covariance
    """

    epoch: int
    time: float
    mixture: GaussianMixture
    mean: npt.NDArray[np.float64]
    covariance: npt.NDArray[np.float64]


def silverman_bandwidth(n_x: int, size: int) -> float:
    """
    Silverman's rule of thumb for the squared kernel bandwidth.

    ``β² = (4 / (n_x + 2))^(2 / (n_x + 4)) * M^(-2 / (n_x + 4))``
    """
    if n_x < 1 or size < 1:
        raise GMFError(f"bandwidth needs n_x >= 1 and M >= 1, got {n_x}, {size}")
    exponent = 2.0 / (n_x + 4.0)
    return float((4.0 / (n_x + 2.0)) ** exponent * size ** (-exponent))


def sample_ensemble(
    mean: npt.ArrayLike,
    cov: npt.ArrayLike,
    size: int,
    seed: SeedLike,
    time: float = 0.0,
) -> Ensemble:
    """Draw an ensemble of ``size`` members from ``N(mean, cov)``."""
    draw_seed, lineage = _seed_sequence(seed).spawn(2)
    members = GaussianComponent(1.0, mean, cov).sample(
        np.random.default_rng(draw_seed), size
    )
    return Ensemble(members, lineage, time)


def ensemble_to_mixture(ens: Ensemble) -> GaussianMixture:
    """
    Kernel-density mixture of an ensemble.

    Every member becomes a component mean with weight ``1/M``; all components
    share the covariance ``β² Ĉ`` with ``Ĉ`` the unbiased sample covariance.

    Raises:
        SingularCovarianceError: If the sample covariance cannot be factored
    """
    sample_cov = np.atleast_2d(np.cov(ens.members, rowvar=False))
    kernel = silverman_bandwidth(ens.dimension, ens.size) * sample_cov
    _cholesky(kernel, "ensemble covariance")
    return GaussianMixture.from_arrays(
        np.full(ens.size, 1.0 / ens.size), ens.members, kernel
    )


def systematic_indices(
    weights: npt.ArrayLike, size: int, rng: np.random.Generator
) -> npt.NDArray[np.intp]:
    """
    Systematic resampling: ``size`` evenly spaced positions with one random
    offset, mapped through the cumulative weights.
    """
    weights = np.asarray(weights, dtype=np.float64)
    positions = (rng.random() + np.arange(size)) / size
    cumulative = np.cumsum(weights)
    cumulative /= cumulative[-1]
    indices = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(indices, weights.size - 1)


def resample_mixture(
    mix: GaussianMixture, size: int, seed: SeedLike, time: float = 0.0
) -> Ensemble:
    """
    Draw a new ensemble from a normalized mixture.

    Components are chosen by systematic selection, then each member is drawn
    through its component's Cholesky factor.

    Args:
        mix: Normalized mixture
        size: Number of members ``M``
        seed: Seed or seed sequence; identical seeds give identical ensembles
        time: Time stamp of the new ensemble
    """
    draw_seed, lineage = _seed_sequence(seed).spawn(2)
    rng = np.random.default_rng(draw_seed)

    indices = systematic_indices(mix.weights, size, rng)
    noise = rng.standard_normal((size, mix.dimension))
    members = np.empty((size, mix.dimension))
    for index in np.unique(indices):
        selected = indices == index
        component = mix.components[index]
        members[selected] = component.mean + noise[selected] @ _cholesky(
            component.covariance
        ).T

    return Ensemble(members, lineage, time)


def _snapshot(epoch: int, time: float, mix: GaussianMixture) -> EpochSnapshot:
    mean, cov = mixture_moments(mix)
    return EpochSnapshot(epoch, time, mix, mean, cov)


def engmf_step(
    ens: Ensemble,
    dynamics: Derivative,
    epochs: Sequence[float],
    model: MeasurementModel,
    measurements: Sequence[npt.ArrayLike | None],
    updater: UpdaterSpec,
    scheme: WeightScheme,
    cfg: IntegratorConfig | None = None,
    *,
    form: CovarianceForm = CovarianceForm.JOSEPH,
    variant: SigmaVariant = SigmaVariant.MIXTURE,
    n_jobs: int = 1,
) -> tuple[Ensemble, list[EpochSnapshot]]:
    """
    Run the EnGMF propagate / update / resample cycle over a list of epochs.

    At every epoch the members are propagated (as one batch), the kernel
    mixture is built and, if a measurement is present, updated and resampled
    back to ``M`` members. An epoch whose measurement is None only propagates.

    Args:
        ens: Initial ensemble
        dynamics: Right-hand side of the dynamics
        epochs: Increasing measurement times, none before ``ens.time``
        model: Measurement model
        measurements: One measurement (or None) per epoch
        updater: Component updater
        scheme: Weight scheme
        cfg: Integrator settings

    Returns:
        The final ensemble and one snapshot per epoch.

    Raises:
        EpochError: Wrapping any GMFError, with the failing epoch index
    """
    if len(epochs) != len(measurements):
        raise GMFError("one measurement (or None) is required per epoch")
    if np.any(np.diff(np.concatenate([[ens.time], epochs])) < 0.0):
        raise GMFError("epochs must be increasing")

    snapshots = []
    for k, (time, y) in enumerate(zip(epochs, measurements)):
        try:
            members = propagate(ens.members, ens.time, time, dynamics, cfg)
            ens = ens.with_members(members, time)
            prior = ensemble_to_mixture(ens)
            if y is None:
                snapshots.append(_snapshot(k, time, prior))
                continue

            posterior = gmm_measurement_update(
                prior,
                model,
                y,
                updater,
                scheme,
                form=form,
                variant=variant,
                n_jobs=n_jobs,
            )
            snapshots.append(_snapshot(k, time, posterior))
            ens = resample_mixture(posterior, ens.size, ens.seed_sequence, time)
        except GMFError as e:
            raise EpochError(k, e) from e

        logger.debug("EnGMF epoch %d at t=%.6f", k, time)

    return ens, snapshots
