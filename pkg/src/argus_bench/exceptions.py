"""Exception hierarchy shared by all modules."""


class ArgusError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(ArgusError, ValueError):
    """An input violates an operation's precondition."""


class NonFiniteError(ValidationError):
    """A voxel, token or activation is NaN or infinite."""

    def __init__(self, message, index=None, layer=None):
        super().__init__(message)
        self.index = index
        self.layer = layer


class StageError(ArgusError):
    """Wraps an error raised inside one stage of a composed pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class FormatError(ArgusError, OSError):
    """A binary or text file does not follow its declared layout."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class PayloadMismatchError(FormatError):
    pass


class TraceError(ArgusError):
    """backward() received a trace that cannot be differentiated."""


class TrainingError(ArgusError):
    """Training diverged (NaN/Inf loss)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
