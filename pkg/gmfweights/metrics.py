"""
Accuracy and consistency metrics: RMSE, the grid score used for density
comparisons, SNEES and the grid-based true posterior.
"""

import math
from collections.abc import Iterable
from dataclasses import asdict, dataclass

import numpy as np
import numpy.typing as npt
from scipy.integrate import trapezoid

from gmfweights._linalg import _solve_spd
from gmfweights.exceptions import DimensionMismatchError, GMFError, GridError
from gmfweights.gaussian import (
    GaussianComponent,
    GaussianMixture,
    GridField,
    as_mixture,
    log_gaussian_pdf,
    mixture_log_pdf,
)
from gmfweights.models import MeasurementModel

__all__ = [
    "MetricsReport",
    "rmse",
    "position_rmse",
    "kld_grid",
    "snees",
    "true_posterior_grid",
    "grid_mass",
    "grid_mean",
    "average",
    "DENSITY_FLOOR",
    "KLD_SUPPORT",
]

DENSITY_FLOOR = 1e-300
KLD_SUPPORT = 1e-3


@dataclass(frozen=True)
class MetricsReport:
    """
    Aggregated metrics of one method at one component count.

    Args:
        method: Method label, e.g. ``"ekf:improved"``
        components: Number of mixture components ``M``
        trials: Monte Carlo trials that entered the aggregates
        flagged_trials: Trials excluded because of divergence or weight collapse
        rmse: Mean RMSE (full state)
        rmse_position: Mean RMSE of the position sub-state, if applicable
        kld: Mean grid score against the true posterior, if computed
        snees: Mean SNEES, if computed
    """

    method: str
    components: int
    trials: int
    flagged_trials: int = 0
    rmse: float = math.nan
    rmse_position: float | None = None
    kld: float | None = None
    snees: float | None = None

    def __post_init__(self) -> None:
        for name in ("rmse", "rmse_position", "snees"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise GMFError(f"{name} must be non-negative, got {value}")

    @property
    def flagged_fraction(self) -> float:
        total = self.trials + self.flagged_trials
        return self.flagged_trials / total if total else 0.0

    def to_record(self) -> dict[str, object]:
        return asdict(self)


def _check_pair(truth: npt.ArrayLike, estimate: npt.ArrayLike):
    truth = np.ravel(np.asarray(truth, dtype=np.float64))
    estimate = np.ravel(np.asarray(estimate, dtype=np.float64))
    if truth.shape != estimate.shape:
        raise DimensionMismatchError(
            f"truth {truth.shape} and estimate {estimate.shape} differ"
        )
    return truth, estimate


def rmse(truth: npt.ArrayLike, estimate: npt.ArrayLike) -> float:
    """``sqrt((x - x̂)ᵀ(x - x̂) / n_x)``."""
    truth, estimate = _check_pair(truth, estimate)
    error = truth - estimate
    return float(np.sqrt(error @ error / error.size))


def position_rmse(truth: npt.ArrayLike, estimate: npt.ArrayLike) -> float:
    """RMSE restricted to the first three (position) coordinates."""
    truth, estimate = _check_pair(truth, estimate)
    return rmse(truth[:3], estimate[:3])


def kld_grid(
    p: GridField,
    q: GridField,
    *,
    floor: float = DENSITY_FLOOR,
    prefactor: float | None = None,
    support: float | None = None,
) -> float:
    """
    Squared log-density difference score between two fields on one grid.

    ``(1/s_x) Σ ½ (log P - log Q)²`` with ``s_x`` the number of nodes per
    axis. This is the score reported in the Avocado tables, not the
    Kullback-Leibler integral. Both fields are floored before the logs.

    Without ``support`` every node enters the sum, and far tail nodes where
    one density underflows to the floor dominate it. With ``support`` only
    nodes where ``Q >= support * max(Q)`` are summed, and ``P`` is floored at
    that same level there.

    Args:
        p: First field
        q: Second field (usually the true posterior)
        floor: Lower bound applied to both densities
        prefactor: Replaces ``1/s_x`` if given
        support: Relative level of ``Q`` that delimits the scored region

    Raises:
        GridError: If the fields live on different grids or hold no values
    """
    if p.values is None or q.values is None:
        raise GridError("both fields need values")
    if not p.same_grid(q):
        raise GridError("grid mismatch")

    if prefactor is None:
        prefactor = 1.0 / p.shape[0]
    p_values, q_values = p.values, q.values
    if support is not None:
        if not 0.0 < support < 1.0:
            raise GridError(f"support must lie in (0, 1), got {support}")
        level = support * np.max(q_values)
        mask = q_values >= level
        floor = max(floor, level)
        p_values, q_values = p_values[mask], q_values[mask]

    log_p = np.log(np.maximum(p_values, floor))
    log_q = np.log(np.maximum(q_values, floor))
    return float(prefactor * np.sum(0.5 * (log_p - log_q) ** 2))


def snees(truth: npt.ArrayLike, mean: npt.ArrayLike, cov: npt.ArrayLike) -> float:
    """
    Scaled normalized estimation error squared ``(x - x̂)ᵀ P⁻¹ (x - x̂) / n_x``.

    Raises:
        SingularCovarianceError: If ``cov`` cannot be factored
    """
    truth, mean = _check_pair(truth, mean)
    error = truth - mean
    return float(error @ _solve_spd(cov, error, "estimate covariance") / error.size)


def grid_mass(field: GridField) -> float:
    """Trapezoid-rule integral of a field over its grid."""
    if field.values is None:
        raise GridError("field has no values")
    inner = trapezoid(field.values, field.axes[1], axis=1)
    return float(trapezoid(inner, field.axes[0]))


def grid_mean(field: GridField) -> npt.NDArray[np.float64]:
    """Mean ``(E[x1], E[x2])`` of a density field (trapezoid rule)."""
    mass = grid_mass(field)
    if field.values is None or not mass > 0.0:
        raise GridError("field carries no mass")
    values = field.values
    x1, x2 = np.meshgrid(*field.axes, indexing="ij")
    return np.array(
        [grid_mass(field.with_values(values * x)) / mass for x in (x1, x2)]
    )


def true_posterior_grid(
    prior: GaussianMixture | GaussianComponent,
    model: MeasurementModel,
    y: npt.ArrayLike,
    grid: GridField,
) -> GridField:
    """
    Exact posterior ``p(x) N(y; h(x), R)`` sampled on a 2D grid.

    The product is formed in the log domain, shifted by its maximum and
    normalized to unit trapezoid mass.

    Raises:
        GridError: ``"posterior off-grid"`` if no node carries mass
    """
    mix = as_mixture(prior)
    if mix.dimension != 2:
        raise GridError("grid evaluation supports 2D only")

    nodes = grid.nodes()
    measurements = model.measure(nodes)
    log_values = np.atleast_1d(mixture_log_pdf(mix, nodes)) + log_gaussian_pdf(
        model.innovation(y, measurements),
        np.zeros(model.n_y),
        model.noise_cov,
    )

    peak = np.max(log_values)
    if not np.isfinite(peak) or np.exp(peak) == 0.0:
        raise GridError("posterior off-grid")
    field = grid.with_values(np.exp(log_values - peak))

    mass = grid_mass(field)
    if not mass > 0.0:
        raise GridError("posterior off-grid")
    return field.with_values(field.values / mass)


def average(values: Iterable[float]) -> float:
    """Order-independent mean (compensated summation); NaN for no values."""
    values = list(values)
    if not values:
        return math.nan
    return math.fsum(values) / len(values)
