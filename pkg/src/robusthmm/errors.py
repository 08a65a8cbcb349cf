"""Exception types shared across the package."""


class RobustHMMError(Exception):
    """Base class for package errors."""


class DegenerateObservation(RobustHMMError):
    """The observed symbol has zero probability under the model, so the
    belief update is undefined."""


class InfeasibleSurface(RobustHMMError):
    """Every cell of a penalty surface is infinite: the observation history
    is impossible under every non-excluded model."""


class CapExceeded(RobustHMMError):
    """An enumeration grew past its configured cap."""


class ConfigError(RobustHMMError):
    """A run configuration failed validation."""
