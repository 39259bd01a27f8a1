"""Exception hierarchy shared by all dcpsim modules."""

from __future__ import annotations


class DcpSimError(Exception):
    """Base class for every error raised by dcpsim."""


class NonStochasticMatrix(DcpSimError, ValueError):
    pass


class Reducible(DcpSimError, ValueError):
    pass


class DimensionMismatch(DcpSimError, ValueError):
    pass


class PowerOutOfRange(DcpSimError, ValueError):
    pass


class TargetOutOfBracket(DcpSimError, ValueError):
    pass


class ClockRegression(DcpSimError, ValueError):
    pass


class RateExceedsBound(DcpSimError, ValueError):
    pass


class TooFewSamples(DcpSimError, ValueError):
    pass


class TruncationInsufficient(DcpSimError, ValueError):
    pass


class SideConditionViolated(DcpSimError, ValueError):
    pass


class ConfigInvalid(DcpSimError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)
