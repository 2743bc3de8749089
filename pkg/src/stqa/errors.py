"""Exception hierarchy shared by every stqa module."""


class STQAError(Exception):
    """Base class for all errors raised by stqa."""


class DimensionError(STQAError, ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(STQAError, ValueError):
    """A precondition of an operation was violated."""


class DegenerateSliceError(ContractError):
    """A softmax slice has no unmasked entries."""


class NumericError(STQAError, FloatingPointError):
    """A non-finite value appeared where finite values are required."""


class ValidationError(STQAError, ValueError):
    """On-disk data failed a structural or invariant check."""


class ConfigError(STQAError, ValueError):
    """Configurations of interacting components disagree."""


class TrainingDiverged(NumericError):
    """Loss became non-finite during training.

    ``checkpoint`` holds the last parameters that produced a finite loss.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
