"""Exception types shared across the package."""


class HpmriError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HpmriError, ValueError):
    """An argument violates a documented precondition."""


class InvalidSpecError(HpmriError, ValueError):
    """A phantom or experiment specification cannot be realized."""


class NumericalError(HpmriError, RuntimeError):
    """An iterative numerical procedure failed to converge.

    Carries enough context (interval, iteration count) to reproduce the
    failure.
    """


class BandShortageError(HpmriError, RuntimeError):
    """A vascular-peak band has fewer candidate cells than required."""

    def __init__(self, band, needed, available):
        self.band = band
        self.needed = needed
        self.available = available
        super().__init__(
            f"band {band}: need {needed} cells, only {available} available"
        )


class UnusableCellError(HpmriError, ValueError):
    """A cell has no usable signal (zero peak) for the per-cell noise rule."""


class ConfigError(HpmriError, ValueError):
    """A configuration file could not be parsed or validated."""
