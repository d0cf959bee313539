"""Exception hierarchy shared across the package."""


class SkefiError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SkefiError, ValueError):
    """Tensor or matrix shapes are incompatible with the requested operation."""


class ContractError(SkefiError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigurationError(SkefiError, ValueError):
    """A configuration value is invalid or inconsistent."""


class FormatError(SkefiError, ValueError):
    """A binary file does not conform to its documented layout."""


class CheckpointError(SkefiError, ValueError):
    """A checkpoint cannot be applied to the target network."""
