"""Exception types shared across the pipeline and mapped to CLI error classes."""


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration entry."""


class NumericError(ArithmeticError):
    """A numeric operation produced NaN or Inf; the message names the operation."""


class StageError(RuntimeError):
    """A pipeline stage precondition is unmet (e.g. a missing artifact)."""


class ContractViolation(RuntimeError):
    """An internal call contract was broken by the caller."""
