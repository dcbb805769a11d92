"""Exception types shared across the package."""


class UdalabError(Exception):
    """Base class for all package errors."""


class ValidationError(UdalabError, ValueError):
    """An argument or configuration value violates a documented precondition."""


class ShapeError(UdalabError, ValueError):
    """Operand dimensions are incompatible."""


class NumericDomainError(UdalabError, ValueError):
    """An input lies outside the mathematical domain of an operation (e.g. log of <= 0)."""


class TapeError(UdalabError, RuntimeError):
    """A tensor was used with a tape it is not attached to, or a loss is detached."""


class OptimStateError(UdalabError, RuntimeError):
    """Optimizer state is inconsistent with the parameters (e.g. a missing gradient)."""


class DegenerateSampleError(UdalabError, ValueError):
    """A statistical test received a sample it cannot rank (e.g. all-zero differences)."""


class NanLossError(UdalabError, RuntimeError):
    """A training loss term became non-finite; the message names the offending term."""


class ConfigError(UdalabError, ValueError):
    """An experiment config file failed validation; the message names the field path."""
