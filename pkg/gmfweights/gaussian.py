"""
Gaussian components, mixtures and numerically stable density evaluation.

All weight arithmetic happens in the log domain; linear weights only appear
on the public types. Every covariance produced here is symmetrized.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Self

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.special import logsumexp

from gmfweights._linalg import _cholesky, _symmetrize
from gmfweights.exceptions import (
    DegenerateWeightsError,
    DimensionMismatchError,
    GMFError,
    GridError,
    NonFiniteInputError,
)

__all__ = [
    "GaussianComponent",
    "GaussianMixture",
    "GridField",
    "log_gaussian_pdf",
    "normalize_log_weights",
    "mixture_moments",
    "mixture_log_pdf",
    "mixture_pdf_on_grid",
    "as_mixture",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def _frozen(array: npt.ArrayLike, ndim: int) -> npt.NDArray[np.float64]:
    array = np.array(array, dtype=np.float64, ndmin=ndim)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class GaussianComponent:
    """
    A weighted Gaussian density, the building block of every mixture.

    Args:
        weight: Probability mass carried by the component
        mean: Mean vector of shape ``(n_x,)``
        covariance: Symmetric positive-semidefinite matrix of shape ``(n_x, n_x)``
    """

    weight: float
    mean: npt.NDArray[np.float64]
    covariance: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        mean = _frozen(np.ravel(self.mean), 1)
        covariance = _frozen(_symmetrize(np.atleast_2d(self.covariance)), 2)
        if covariance.shape != (mean.size, mean.size):
            raise DimensionMismatchError(
                f"covariance shape {covariance.shape} does not match "
                f"mean size {mean.size}"
            )
        if not self.weight >= 0.0:
            raise GMFError(f"component weight must be non-negative, got {self.weight}")

        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dimension(self) -> int:
        """State dimension ``n_x``."""
        return self.mean.size

    def with_weight(self, weight: float) -> "GaussianComponent":
        """Copy of this component carrying a different weight."""
        return GaussianComponent(weight, self.mean, self.covariance)

    def log_pdf(self, x: npt.ArrayLike) -> npt.NDArray[np.float64] | float:
        """Log-density of the (unweighted) Gaussian at ``x``."""
        return log_gaussian_pdf(x, self.mean, self.covariance)

    def sample(
        self, rng: np.random.Generator, size: int
    ) -> npt.NDArray[np.float64]:
        """
        Draw samples from the Gaussian.

        Args:
            rng: Random generator
            size: Number of samples

        Returns:
            Array of shape ``(size, n_x)``
        """
        chol = _cholesky(self.covariance)
        return self.mean + rng.standard_normal((size, self.dimension)) @ chol.T


@dataclass(frozen=True)
class GaussianMixture:
    """
    Ordered collection of Gaussian components sharing one dimension.

    Args:
        components: The mixture components, in order
    """

    components: tuple[GaussianComponent, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        components = tuple(self.components)
        if len({c.dimension for c in components}) > 1:
            raise DimensionMismatchError("mixture components differ in dimension")
        object.__setattr__(self, "components", components)

    @classmethod
    def from_arrays(
        cls,
        weights: npt.ArrayLike,
        means: npt.ArrayLike,
        covariances: npt.ArrayLike,
    ) -> Self:
        """
        Build a mixture from stacked arrays.

        Args:
            weights: Shape ``(M,)``
            means: Shape ``(M, n_x)``
            covariances: Shape ``(M, n_x, n_x)``, or a single ``(n_x, n_x)``
                matrix shared by every component
        """
        weights = np.asarray(weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        covariances = np.asarray(covariances, dtype=np.float64)
        if covariances.ndim == 2:
            covariances = np.broadcast_to(covariances, (len(means), *covariances.shape))

        return cls(
            tuple(
                GaussianComponent(w, m, p)
                for w, m, p in zip(weights, means, covariances, strict=True)
            )
        )

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def dimension(self) -> int:
        """State dimension ``n_x``; raises for an empty mixture."""
        if not self.components:
            raise GMFError("empty mixture has no dimension")
        return self.components[0].dimension

    @property
    def weights(self) -> npt.NDArray[np.float64]:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> npt.NDArray[np.float64]:
        return np.array([c.mean for c in self.components])

    @property
    def covariances(self) -> npt.NDArray[np.float64]:
        return np.array([c.covariance for c in self.components])

    def normalize(self) -> "GaussianMixture":
        """Copy of the mixture whose weights sum to one."""
        with np.errstate(divide="ignore"):
            log_weights = np.log(self.weights)
        return self.with_weights(normalize_log_weights(log_weights))

    def with_weights(self, weights: npt.ArrayLike) -> "GaussianMixture":
        """Copy of the mixture with the given weights, in component order."""
        return GaussianMixture(
            tuple(
                c.with_weight(w)
                for c, w in zip(self.components, np.asarray(weights), strict=True)
            )
        )


@dataclass(frozen=True)
class GridField:
    """
    Density samples on a rectilinear 2D grid.

    ``values[i, j]`` is the density at ``(axes[0][i], axes[1][j])``.

    Args:
        axes: Strictly increasing sample coordinates per dimension
        values: Non-negative density samples, or None for a bare grid
    """

    axes: tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]
    values: npt.NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        if len(self.axes) != 2:
            raise GridError("grid evaluation supports 2D only")
        axes = tuple(_frozen(axis, 1) for axis in self.axes)
        for axis in axes:
            if axis.size < 2 or np.any(np.diff(axis) <= 0.0):
                raise GridError("grid axes must be strictly increasing")
        object.__setattr__(self, "axes", axes)

        if self.values is not None:
            values = _frozen(self.values, 2)
            if values.shape != self.shape:
                raise GridError(f"grid values shape {values.shape} != {self.shape}")
            if np.any(values < 0.0) or not np.all(np.isfinite(values)):
                raise GridError("grid values must be finite and non-negative")
            object.__setattr__(self, "values", values)

    @classmethod
    def linspace(
        cls,
        lower: Sequence[float],
        upper: Sequence[float],
        nodes: int,
    ) -> Self:
        """Square grid with ``nodes`` samples per axis between the bounds."""
        return cls(
            (
                np.linspace(lower[0], upper[0], nodes),
                np.linspace(lower[1], upper[1], nodes),
            )
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.axes[0].size, self.axes[1].size)

    def nodes(self) -> npt.NDArray[np.float64]:
        """All grid nodes as an array of shape ``(n_0 * n_1, 2)``."""
        x1, x2 = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])

    def with_values(self, values: npt.ArrayLike) -> "GridField":
        return GridField(self.axes, np.reshape(values, self.shape))

    def same_grid(self, other: "GridField") -> bool:
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.axes, other.axes)
        )


def log_gaussian_pdf(
    x: npt.ArrayLike, mean: npt.ArrayLike, cov: npt.ArrayLike
) -> npt.NDArray[np.float64] | float:
    """
    Log-density of a multivariate normal, evaluated through a Cholesky factor.

    Args:
        x: Evaluation point of shape ``(n,)``, or a stack of shape ``(K, n)``
        mean: Mean vector of shape ``(n,)``
        cov: Covariance of shape ``(n, n)``; repaired once with jitter if the
            factorization fails

    Returns:
        ``ln N(x; mean, cov)``, a float for a single point or an array of
        shape ``(K,)`` for a stack.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.ravel(np.asarray(mean, dtype=np.float64))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mean))):
        raise NonFiniteInputError("density argument")

    n = mean.size
    if x.shape[-1:] != (n,) and not (x.ndim == 0 and n == 1):
        raise DimensionMismatchError(f"point dimension {x.shape} != mean dimension {n}")

    chol = _cholesky(cov)
    if chol.shape != (n, n):
        raise DimensionMismatchError(f"covariance shape {chol.shape} != ({n}, {n})")

    diff = np.atleast_2d(np.reshape(x, (-1, n)) - mean)
    z = scipy.linalg.solve_triangular(chol, diff.T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    result = -0.5 * (n * _LOG_2PI + log_det + np.sum(z * z, axis=0))

    if x.ndim <= 1:
        return float(result[0])
    return result


def normalize_log_weights(log_weights: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """
    Turn unnormalized log-weights into probabilities (max-shifted softmax).

    Args:
        log_weights: Unnormalized log-weights; ``-inf`` entries become zero

    Returns:
        Weights summing to one.

    Raises:
        DegenerateWeightsError: If every entry is ``-inf``
    """
    log_weights = np.asarray(log_weights, dtype=np.float64)
    if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
        raise NonFiniteInputError("log-weights")
    if log_weights.size == 0 or not np.any(np.isfinite(log_weights)):
        raise DegenerateWeightsError()

    weights = np.exp(log_weights - logsumexp(log_weights))
    return weights / weights.sum()


def mixture_moments(
    mix: GaussianMixture,
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Mean and covariance of a mixture (law of total variance).

    Args:
        mix: Normalized mixture

    Returns:
        Tuple of the mixture mean and the symmetrized mixture covariance.
    """
    if len(mix) == 0:
        raise GMFError("moments of an empty mixture are undefined")

    weights = mix.weights
    means = mix.means
    mean = weights @ means
    spread = means - mean
    within = np.einsum("i,ijk->jk", weights, mix.covariances)
    cov = within + (spread.T * weights) @ spread
    return mean, _symmetrize(cov)


def mixture_log_pdf(
    mix: GaussianMixture, x: npt.ArrayLike
) -> npt.NDArray[np.float64] | float:
    """Log-density of a mixture at one point or a stack of points."""
    with np.errstate(divide="ignore"):
        log_weights = np.log(mix.weights)
    per_component = np.array(
        [
            lw + np.atleast_1d(c.log_pdf(x))
            for lw, c in zip(log_weights, mix.components)
        ]
    )
    result = logsumexp(per_component, axis=0)
    return float(result[0]) if np.ndim(x) <= 1 else result


def mixture_pdf_on_grid(mix: GaussianMixture, grid: GridField) -> GridField:
    """
    Evaluate a 2D mixture density on every node of a grid.

    Args:
        mix: Two-dimensional mixture
        grid: Grid whose axes are used; its values, if any, are ignored

    Returns:
        New GridField holding ``sum_i w_i N(node; mu_i, P_i)``.
    """
    if mix.dimension != 2:
        raise GridError("grid evaluation supports 2D only")

    return grid.with_values(np.exp(mixture_log_pdf(mix, grid.nodes())))


def as_mixture(prior: "GaussianMixture | GaussianComponent") -> GaussianMixture:
    """Wrap a single component as a one-component mixture; mixtures pass through."""
    if isinstance(prior, GaussianComponent):
        return GaussianMixture((prior.with_weight(1.0),))
    return prior
