"""
Adaptive embedded Runge-Kutta 8(7) propagation (Prince-Dormand RK8(7)-13M).

States may be a single vector or a stack of shape ``(M, n)``; a stack is
integrated with one shared step sequence, controlled by its worst member.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gmfweights.exceptions import GMFError, IntegrationError, NonFiniteInputError

__all__ = ["IntegratorConfig", "propagate", "Derivative"]

logger = logging.getLogger(__name__)

Derivative = Callable[[float, npt.NDArray[np.float64]], npt.NDArray[np.float64]]

# fmt: off
_C = np.array([
    0.0, 1 / 18, 1 / 12, 1 / 8, 5 / 16, 3 / 8, 59 / 400, 93 / 200,
    5490023248 / 9719169821, 13 / 20, 1201146811 / 1299019798, 1.0, 1.0,
])

_A = [
    [],
    [1 / 18],
    [1 / 48, 1 / 16],
    [1 / 32, 0.0, 3 / 32],
    [5 / 16, 0.0, -75 / 64, 75 / 64],
    [3 / 80, 0.0, 0.0, 3 / 16, 3 / 20],
    [29443841 / 614563906, 0.0, 0.0, 77736538 / 692538347,
     -28693883 / 1125000000, 23124283 / 1800000000],
    [16016141 / 946692911, 0.0, 0.0, 61564180 / 158732637,
     22789713 / 633445777, 545815736 / 2771057229, -180193667 / 1043307555],
    [39632708 / 573591083, 0.0, 0.0, -433636366 / 683701615,
     -421739975 / 2616292301, 100302831 / 723423059, 790204164 / 839813087,
     800635310 / 3783071287],
    [246121993 / 1340847787, 0.0, 0.0, -37695042795 / 15268766246,
     -309121744 / 1061227803, -12992083 / 490766935, 6005943493 / 2108947869,
     393006217 / 1396673457, 123872331 / 1001029789],
    [-1028468189 / 846180014, 0.0, 0.0, 8478235783 / 508512852,
     1311729495 / 1432422823, -10304129995 / 1701304382,
     -48777925059 / 3047939560, 15336726248 / 1032824649,
     -45442868181 / 3398467696, 3065993473 / 597172653],
    [185892177 / 718116043, 0.0, 0.0, -3185094517 / 667107341,
     -477755414 / 1098053517, -703635378 / 230739211, 5731566787 / 1027545527,
     5232866602 / 850066563, -4093664535 / 808688257,
     3962137247 / 1805957418, 65686358 / 487910083],
    [403863854 / 491063109, 0.0, 0.0, -5068492393 / 434740067,
     -411421997 / 543043805, 652783627 / 914296604, 11173962825 / 925320556,
     -13158990841 / 6184727034, 3936647629 / 1978049680,
     -160528059 / 685178525, 248638103 / 1413531060, 0.0],
]

# 8th-order propagating weights
_B = np.array([
    14005451 / 335480064, 0.0, 0.0, 0.0, 0.0, -59238493 / 1068277825,
    181606767 / 758867731, 561292985 / 797845732, -1041891430 / 1371343529,
    760417239 / 1151165299, 118820643 / 751138087, -528747749 / 2220607170,
    1 / 4,
])

# 7th-order embedded weights
_B_HAT = np.array([
    13451932 / 455176623, 0.0, 0.0, 0.0, 0.0, -808719846 / 976000145,
    1757004468 / 5645159321, 656045339 / 265891186, -3867574721 / 1518517206,
    465885868 / 322736535, 53011238 / 667516719, 2 / 45, 0.0,
])
# fmt: on

_ORDER = 8
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass(frozen=True)
class IntegratorConfig:
    """
    Step-size control settings of the RK8(7) integrator.

    Args:
        rel_tol: Relative tolerance
        abs_tol: Absolute tolerance
        initial_step: First trial step in scaled time
        max_steps: Budget of attempted steps (accepted and rejected)
        safety_factor: Step-size safety factor in ``(0, 1)``
    """

    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    initial_step: float = 1e-3
    max_steps: int = 1_000_000
    safety_factor: float = 0.9

    def __post_init__(self) -> None:
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise GMFError("integrator tolerances must be positive")
        if not 0.0 < self.safety_factor < 1.0:
            raise GMFError("safety factor must lie in (0, 1)")
        if not self.initial_step > 0.0 or self.max_steps < 1:
            raise GMFError("initial step and step budget must be positive")


def _attempt(
    derivative: Derivative,
    t: float,
    x: npt.NDArray[np.float64],
    h: float,
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    stages = np.empty((_C.size, *x.shape))
    for i, (c, row) in enumerate(zip(_C, _A)):
        increment = sum(
            (a * stages[j] for j, a in enumerate(row) if a != 0.0),
            start=np.zeros_like(x),
        )
        stages[i] = derivative(t + c * h, x + h * increment)

    high = x + h * np.tensordot(_B, stages, axes=1)
    low = x + h * np.tensordot(_B_HAT, stages, axes=1)
    return high, low


def _error_norm(
    high: npt.NDArray[np.float64],
    low: npt.NDArray[np.float64],
    cfg: IntegratorConfig,
) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(high), np.abs(low))
    per_member = np.mean(((high - low) / scale) ** 2, axis=-1)
    return float(np.sqrt(np.max(per_member)))


def propagate(
    x0: npt.ArrayLike,
    t0: float,
    t1: float,
    derivative: Derivative,
    cfg: IntegratorConfig | None = None,
) -> npt.NDArray[np.float64]:
    """
    Integrate ``dx/dt = derivative(t, x)`` from ``t0`` to ``t1``.

    Steps are accepted when the scaled error norm
    ``err_i / (abs_tol + rel_tol * max(|x_i|, |x̂_i|))`` is at most one. The
    norm is the root mean square over one state, and the largest such value
    over a stack, so each member meets the tolerance on its own. The last
    step is clipped to land on ``t1``.
    Integration backwards in time (``t1 < t0``) is supported.

    Args:
        x0: Initial state ``(n,)`` or stack of states ``(M, n)``
        t0: Initial time
        t1: Final time
        derivative: Right-hand side, called with the full state array
        cfg: Step-size control settings

    Returns:
        State at ``t1`` with the shape of ``x0``.

    Raises:
        IntegrationError: If ``cfg.max_steps`` attempts do not reach ``t1``
    """
    cfg = cfg or IntegratorConfig()
    x = np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("initial state")
    if t1 == t0:
        return x

    direction = 1.0 if t1 > t0 else -1.0
    t = t0
    h = min(cfg.initial_step, abs(t1 - t0))
    accepted = rejected = 0

    for _ in range(cfg.max_steps):
        remaining = abs(t1 - t)
        last = h >= remaining
        if last:
            h = remaining

        high, low = _attempt(derivative, t, x, direction * h)
        err = _error_norm(high, low, cfg)
        if not np.isfinite(err):
            raise IntegrationError(f"non-finite step at t={t:.6g}")

        if err <= 1.0:
            t = t1 if last else t + direction * h
            x = high
            accepted += 1
            if last:
                logger.debug(
                    "Propagated %.6g -> %.6g in %d steps (%d rejected)",
                    t0, t1, accepted, rejected,
                )
                return x
        else:
            rejected += 1

        factor = (
            _MAX_FACTOR
            if err == 0.0
            else cfg.safety_factor * err ** (-1.0 / _ORDER)
        )
        h *= min(_MAX_FACTOR, max(_MIN_FACTOR, factor))

    raise IntegrationError("integration budget exhausted")
