"""Exception hierarchy shared by every flarebench module."""


class FlareBenchError(Exception):
    """Base class for all library errors."""


class ConfigError(FlareBenchError, ValueError):
    """A configuration value failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InvalidImage(FlareBenchError):
    pass


class DegenerateInput(FlareBenchError):
    pass


class EmptyDataset(FlareBenchError):
    pass


class InvalidScene(FlareBenchError):
    pass


class InvalidRegion(FlareBenchError):
    pass


class NoTarget(FlareBenchError):
    pass


class EmptySignal(FlareBenchError):
    pass


class InsufficientSamples(FlareBenchError):
    pass


class EmptyInput(FlareBenchError):
    pass


class BackendError(FlareBenchError):
    """Failure talking to or inside a detector/denoiser backend."""


class ProtocolError(BackendError):
    pass


class WorkerTimeout(BackendError):
    pass


class WorkerCrashed(BackendError):
    pass


class StageError(BackendError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
