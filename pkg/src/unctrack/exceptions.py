"""Exception hierarchy shared by every module."""


class UncTrackError(Exception):
    """Base class for all package errors."""


class DimensionError(UncTrackError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateMaskError(UncTrackError, ValueError):
    """Every position along a softmax slice is masked out."""


class ConfigurationError(UncTrackError, ValueError):
    """A configuration value or key is invalid."""


class ContractError(UncTrackError, ValueError):
    """An input violates an operation's precondition."""


class DomainError(UncTrackError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class EmptyBankError(UncTrackError):
    """A memory read was attempted against an empty prototype bank."""


class NumericalError(UncTrackError, ArithmeticError):
    """A computation produced non-finite values or an invalid numerical state."""

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage


class EvaluationError(NumericalError):
    """A function evaluated during gradient checking was not finite."""


class InputError(UncTrackError, ValueError):
    """User-supplied data (frames, boxes, corpora) is invalid."""


class SpecError(InputError):
    """A synthetic sequence specification cannot be realised."""
