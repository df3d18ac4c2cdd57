"""Exception types shared across the package."""


class TreefuseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDataError(TreefuseError):
    """Input data violates a documented precondition (shape, finiteness, size)."""


class InvalidProblemError(TreefuseError):
    """An optimization problem is ill-posed (e.g. non-positive node weights)."""


class InvalidStateError(TreefuseError):
    """A cluster-state transition is inconsistent (e.g. a non-coarsening partition)."""


class ConfigurationError(TreefuseError):
    """A configuration value or combination is unsupported."""


class NumericError(TreefuseError):
    """A numeric computation failed to produce a usable result."""
