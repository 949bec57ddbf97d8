"""Shared exception types."""


class DimensionError(ValueError):
    """Operand shapes incompatible with an array operation."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class ContractError(RuntimeError):
    """An internal contract between modules was violated."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
