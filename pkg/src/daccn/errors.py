"""Exception hierarchy shared by every module in the package."""


class DaccnError(Exception):
    """Base class for all package errors."""


class DimensionError(DaccnError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigurationError(DaccnError, ValueError):
    """A configuration value or operator setting is invalid."""


class DomainError(DaccnError, ArithmeticError):
    """An input lies outside the mathematical domain of an operation."""


class ContractError(DaccnError, RuntimeError):
    """A call violates an API precondition (e.g. backward on a non-scalar)."""


class TapeError(ContractError):
    """The recorded graph was already consumed by a previous backward pass."""


class DegenerateError(DaccnError, ValueError):
    """A reduction has nothing to reduce over (empty mask, no valid pixel)."""


class NumericError(DaccnError, FloatingPointError):
    """A non-finite value appeared during training."""


class GenerationError(DaccnError, RuntimeError):
    """The synthetic scene generator could not satisfy its invariants."""


class CheckpointError(DaccnError, ValueError):
    """A checkpoint file is unreadable or does not match the configuration."""
