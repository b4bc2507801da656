"""
Exception types raised by gmfweights.

All errors derive from :class:`GMFError`, which is a :class:`ValueError`, so
callers that only care about bad input can keep catching ``ValueError``.
"""

__all__ = [
    "GMFError",
    "NonFiniteInputError",
    "SingularCovarianceError",
    "DegenerateWeightsError",
    "DimensionMismatchError",
    "InvalidScalingError",
    "NegativeSigmaWeightError",
    "SingularityError",
    "IntegrationError",
    "GridError",
    "ConfigError",
    "EpochError",
]


class GMFError(ValueError):
    """Base class for all gmfweights errors."""


class NonFiniteInputError(GMFError):
    def __init__(self, what: str = "input") -> None:
        super().__init__(f"non-finite input: {what}")


class SingularCovarianceError(GMFError):
    def __init__(self, what: str = "covariance") -> None:
        super().__init__(f"singular covariance: {what}")


class DegenerateWeightsError(GMFError):
    """Raised when every component likelihood vanishes."""

    def __init__(self) -> None:
        super().__init__("degenerate weights")


class DimensionMismatchError(GMFError):
    pass


class InvalidScalingError(GMFError):
    def __init__(self, n_x: int, lambda_u: float) -> None:
        super().__init__(
            f"invalid unscented scaling: n_x + lambda_u = {n_x + lambda_u} <= 0"
        )


class NegativeSigmaWeightError(GMFError):
    def __init__(self) -> None:
        super().__init__("negative UT weight in probabilistic sum")


class SingularityError(GMFError):
    pass


class IntegrationError(GMFError):
    pass


class GridError(GMFError):
    pass


class ConfigError(GMFError):
    pass


class EpochError(GMFError):
    """
    Error raised inside an EnGMF epoch, tagged with the epoch index.

    Args:
        epoch: Index of the measurement epoch that failed
        cause: The original error
    """

    def __init__(self, epoch: int, cause: Exception) -> None:
        super().__init__(f"epoch {epoch}: {cause}")
        self.epoch = epoch
        self.cause = cause
