from typing import Optional


class EyedentError(Exception):
    """Base class for every error raised by eyedentify."""


class ConfigError(EyedentError, ValueError):
    pass


class GazeParseError(EyedentError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GazeValidationError(EyedentError, ValueError):
    pass


class EmptySequenceError(EyedentError, ValueError):
    pass


class ZScoreUndefinedError(EyedentError, ValueError):
    pass


class ShapeError(EyedentError, ValueError):
    pass


class BatchNormBatchError(EyedentError, ValueError):
    pass


class NonFiniteGradientError(EyedentError, RuntimeError):
    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"Non-finite gradient for parameter '{parameter}'")


class TrainingDivergedError(EyedentError, RuntimeError):
    def __init__(self, stage: str, epoch: int, batch: int, loss: float):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"Training diverged in stage '{stage}' at epoch {epoch}, batch {batch} (loss={loss})"
        )


class UntrainedModelError(EyedentError, RuntimeError):
    pass


class FrozenParameterError(EyedentError, RuntimeError):
    pass


class CheckpointError(EyedentError, RuntimeError):
    code = 1


class CheckpointFormatError(CheckpointError):
    code = 10


class CheckpointVersionError(CheckpointError):
    code = 11


class CheckpointTruncatedError(CheckpointError):
    code = 12


class CheckpointChecksumError(CheckpointError):
    code = 13


class UndefinedSimilarityError(EyedentError, ValueError):
    pass


class EnrollmentError(EyedentError, ValueError):
    pass


class ProtocolError(EyedentError, ValueError):
    pass


class EvaluationError(EyedentError, ValueError):
    pass


class TemplateMismatchError(EyedentError, RuntimeError):
    pass
