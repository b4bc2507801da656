"""
Dynamics and measurement models: the quadratic Avocado measurement, linear
measurements, Earth-Moon CR3BP dynamics and right ascension / declination
angles from a ground sensor.
"""

from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass
from typing import Self, override

import numpy as np
import numpy.typing as npt

from gmfweights._linalg import _symmetrize
from gmfweights.exceptions import DimensionMismatchError, GMFError, SingularityError

__all__ = [
    "MeasurementModel",
    "LinearModel",
    "AvocadoModel",
    "RaDecModel",
    "CR3BPParams",
    "GroundSensor",
    "avocado_h",
    "avocado_jacobian",
    "cr3bp_derivative",
    "jacobi_constant",
    "radec_h",
    "radec_jacobian",
    "wrap_angle",
    "finite_difference_jacobian",
    "GRAVITATIONAL_CONSTANT",
    "EARTH_MASS",
    "MOON_MASS",
    "EARTH_MOON_DISTANCE",
    "ARCSEC",
]

GRAVITATIONAL_CONSTANT = 6.6743e-11  # m^3 s^-2 kg^-1
EARTH_MASS = 5.972e24  # kg
MOON_MASS = 7.342e22  # kg
EARTH_MOON_DISTANCE = 384400e3  # m
ARCSEC = np.pi / (180.0 * 3600.0)  # rad

_COLLISION_DISTANCE = 1e-9


class MeasurementModel(ABC):
    """
    Additive-noise measurement model ``y = h(x) + eta`` with ``eta ~ N(0, R)``.

    Args:
        noise_cov: Measurement noise covariance ``R``
        n_x: State dimension
    """

    def __init__(self, noise_cov: npt.ArrayLike, n_x: int) -> None:
        self.noise_cov: npt.NDArray[np.float64] = _symmetrize(np.atleast_2d(noise_cov))
        self.n_x: int = n_x

    @property
    def n_y(self) -> int:
        """Measurement dimension."""
        return self.noise_cov.shape[0]

    @abstractmethod
    def h(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]: ...

    @abstractmethod
    def jacobian(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]: ...

    def measure(self, xs: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Apply :meth:`h` to every row of a stack of states ``(K, n_x)``."""
        return np.array([self.h(x) for x in np.atleast_2d(xs)])

    def innovation(
        self, y: npt.ArrayLike, predicted: npt.ArrayLike
    ) -> npt.NDArray[np.float64]:
        """Residual ``y - predicted`` in measurement space."""
        return np.asarray(y, dtype=np.float64) - np.asarray(predicted, dtype=np.float64)

    def with_noise_cov(self, noise_cov: npt.ArrayLike) -> Self:
        """Copy of the model with a different noise covariance."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.noise_cov = _symmetrize(np.atleast_2d(noise_cov))
        return clone


class LinearModel(MeasurementModel):
    """
    Linear measurement ``h(x) = H x``.

    Args:
        matrix: Measurement matrix ``H`` of shape ``(n_y, n_x)``
        noise_cov: Noise covariance ``R`` of shape ``(n_y, n_y)``
    """

    def __init__(self, matrix: npt.ArrayLike, noise_cov: npt.ArrayLike) -> None:
        self.matrix: npt.NDArray[np.float64] = np.atleast_2d(
            np.asarray(matrix, dtype=np.float64)
        )
        super().__init__(noise_cov, self.matrix.shape[1])
        if self.noise_cov.shape[0] != self.matrix.shape[0]:
            raise DimensionMismatchError("H and R disagree on measurement dimension")

    @override
    def h(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self.matrix @ np.asarray(x, dtype=np.float64)

    @override
    def jacobian(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self.matrix.copy()

    @override
    def measure(self, xs: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return np.atleast_2d(xs) @ self.matrix.T


def avocado_h(x: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Quadratic measurement ``(x1^2, x2^2)``."""
    x = np.asarray(x, dtype=np.float64)
    return x * x


def avocado_jacobian(x: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Jacobian ``diag(2 x1, 2 x2)`` of :func:`avocado_h`."""
    return np.diag(2.0 * np.asarray(x, dtype=np.float64))


class AvocadoModel(MeasurementModel):
    """
    The two dimensional quadratic measurement of the Avocado example.

    Args:
        noise_std: Per-axis standard deviation of the measurement noise
    """

    def __init__(self, noise_std: float = 0.4) -> None:
        super().__init__(noise_std**2 * np.eye(2), 2)

    @override
    def h(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return avocado_h(x)

    @override
    def jacobian(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return avocado_jacobian(x)

    @override
    def measure(self, xs: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return avocado_h(np.atleast_2d(xs))


@dataclass(frozen=True)
class CR3BPParams:
    """
    Nondimensional Earth-Moon circular restricted three-body parameters.

    Args:
        mu: Moon mass ratio ``mu_moon / (mu_earth + mu_moon)``
        length_unit: Length unit LU in meters
        time_unit: Time unit TU in seconds
    """

    mu: float
    length_unit: float
    time_unit: float

    def __post_init__(self) -> None:
        if not 0.0 < self.mu < 0.5:
            raise GMFError(f"mass ratio must lie in (0, 0.5), got {self.mu}")

    @classmethod
    def earth_moon(
        cls,
        gravitational_constant: float = GRAVITATIONAL_CONSTANT,
        earth_mass: float = EARTH_MASS,
        moon_mass: float = MOON_MASS,
        length_unit: float = EARTH_MOON_DISTANCE,
    ) -> Self:
        """Derive mu and TU from G, the primary masses and LU."""
        mu_earth = gravitational_constant * earth_mass
        mu_moon = gravitational_constant * moon_mass
        return cls(
            mu=mu_moon / (mu_earth + mu_moon),
            length_unit=length_unit,
            time_unit=float(np.sqrt(length_unit**3 / (mu_earth + mu_moon))),
        )

    @property
    def earth_position(self) -> npt.NDArray[np.float64]:
        return np.array([-self.mu, 0.0, 0.0])

    @property
    def moon_position(self) -> npt.NDArray[np.float64]:
        return np.array([1.0 - self.mu, 0.0, 0.0])

    def hours(self, hours: float) -> float:
        """Convert hours to scaled time."""
        return hours * 3600.0 / self.time_unit


def _primary_distances(
    x: npt.NDArray[np.float64], mu: float
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    r1, r2, r3 = x[..., 0], x[..., 1], x[..., 2]
    r_earth = np.sqrt((r1 + mu) ** 2 + r2**2 + r3**2)
    r_moon = np.sqrt((r1 - 1.0 + mu) ** 2 + r2**2 + r3**2)
    if np.any(r_earth < _COLLISION_DISTANCE) or np.any(r_moon < _COLLISION_DISTANCE):
        raise SingularityError("singular primary distance")
    return r_earth, r_moon


def cr3bp_derivative(x: npt.ArrayLike, params: CR3BPParams) -> npt.NDArray[np.float64]:
    """
    Time derivative of a CR3BP state in the rotating barycentric frame.

    Args:
        x: State ``[r1, r2, r3, v1, v2, v3]``, or a stack of shape ``(..., 6)``
        params: System parameters

    Returns:
        Derivative with the same shape as ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = params.mu
    r_earth, r_moon = _primary_distances(x, mu)
    r1, r2, r3 = x[..., 0], x[..., 1], x[..., 2]
    v1, v2, v3 = x[..., 3], x[..., 4], x[..., 5]

    earth_term = (1.0 - mu) / r_earth**3
    moon_term = mu / r_moon**3
    a1 = r1 + 2.0 * v2 - earth_term * (r1 + mu) - moon_term * (r1 - 1.0 + mu)
    a2 = r2 - 2.0 * v1 - earth_term * r2 - moon_term * r2
    a3 = -earth_term * r3 - moon_term * r3

    return np.stack([v1, v2, v3, a1, a2, a3], axis=-1)


def jacobi_constant(
    x: npt.ArrayLike, params: CR3BPParams
) -> npt.NDArray[np.float64] | float:
    """Jacobi integral ``r1^2 + r2^2 + 2(1-mu)/r_E + 2mu/r_M - |v|^2``."""
    x = np.asarray(x, dtype=np.float64)
    mu = params.mu
    r_earth, r_moon = _primary_distances(x, mu)
    speed2 = np.sum(x[..., 3:6] ** 2, axis=-1)
    c = (
        x[..., 0] ** 2
        + x[..., 1] ** 2
        + 2.0 * (1.0 - mu) / r_earth
        + 2.0 * mu / r_moon
        - speed2
    )
    return float(c) if np.ndim(c) == 0 else c


@dataclass(frozen=True)
class GroundSensor:
    """
    Angles-only optical sensor at a fixed position in the rotating frame.

    Args:
        position: Scaled sensor position ``r_S``
        noise_std: Angle noise standard deviation in radians (both angles)
    """

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_std: float = 16.1 * ARCSEC

    def __post_init__(self) -> None:
        if not self.noise_std > 0.0:
            raise GMFError(f"sensor noise must be positive, got {self.noise_std}")


def wrap_angle(angle: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Wrap angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), 2.0 * np.pi)


def _line_of_sight(
    x: npt.ArrayLike, sensor: GroundSensor
) -> tuple[npt.NDArray[np.float64], float, float]:
    d = np.asarray(x, dtype=np.float64)[:3] - np.asarray(sensor.position)
    horizontal = float(np.hypot(d[0], d[1]))
    distance = float(np.linalg.norm(d))
    if distance == 0.0:
        raise SingularityError("target at sensor")
    if horizontal <= 1e-14 * distance:
        raise SingularityError("declination singularity")
    return d, horizontal, distance


def radec_h(x: npt.ArrayLike, sensor: GroundSensor) -> npt.NDArray[np.float64]:
    """Right ascension and declination (radians) of the target."""
    d, _, distance = _line_of_sight(x, sensor)
    return np.array([np.arctan2(d[1], d[0]), np.arcsin(d[2] / distance)])


def radec_jacobian(x: npt.ArrayLike, sensor: GroundSensor) -> npt.NDArray[np.float64]:
    """2x6 Jacobian of :func:`radec_h`; velocity columns are zero."""
    d, horizontal, distance = _line_of_sight(x, sensor)
    jac = np.zeros((2, np.size(x)))
    jac[0, 0] = -d[1] / horizontal**2
    jac[0, 1] = d[0] / horizontal**2
    jac[1, 0] = -d[0] * d[2] / (distance**2 * horizontal)
    jac[1, 1] = -d[1] * d[2] / (distance**2 * horizontal)
    jac[1, 2] = horizontal / distance**2
    return jac


class RaDecModel(MeasurementModel):
    """
    Right ascension / declination of a CR3BP state seen from a ground sensor.

    Right ascension residuals are wrapped into ``(-pi, pi]``.

    Args:
        sensor: The observing sensor
    """

    def __init__(self, sensor: GroundSensor | None = None) -> None:
        self.sensor: GroundSensor = sensor or GroundSensor()
        super().__init__(self.sensor.noise_std**2 * np.eye(2), 6)

    @override
    def h(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return radec_h(x, self.sensor)

    @override
    def jacobian(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return radec_jacobian(x, self.sensor)

    @override
    def innovation(
        self, y: npt.ArrayLike, predicted: npt.ArrayLike
    ) -> npt.NDArray[np.float64]:
        residual = super().innovation(y, predicted)
        residual[..., 0] = wrap_angle(residual[..., 0])
        return residual


def finite_difference_jacobian(
    h: Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
    x: npt.ArrayLike,
    relative_step: float = 1e-6,
) -> npt.NDArray[np.float64]:
    """
    Central finite-difference Jacobian, step ``relative_step * (1 + |x_j|)``.

    Only meant for validating analytic Jacobians.
    """
    x = np.asarray(x, dtype=np.float64)
    columns = []
    for j in range(x.size):
        step = relative_step * (1.0 + abs(x[j]))
        offset = np.zeros_like(x)
        offset[j] = step
        columns.append((h(x + offset) - h(x - offset)) / (2.0 * step))
    return np.column_stack(columns)
