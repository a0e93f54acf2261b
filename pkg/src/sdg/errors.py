class SdgError(Exception):
    """Base class for every error raised by this package."""


class CancelledRun(SdgError):
    """A pipeline run was cancelled before it completed."""

    def __init__(self, step: str = ""):
        self.step = step
        super().__init__(f"run cancelled{' during step ' + step if step else ''}")


class StepFailure(SdgError):
    """Wraps an error raised inside a named pipeline step."""

    def __init__(self, step: str, cause: BaseException):
        self.step = step
        self.cause = cause
        super().__init__(f"step '{step}' failed: {cause}")
