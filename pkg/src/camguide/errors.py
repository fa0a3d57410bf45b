"""Exception hierarchy shared by all camguide modules."""

from __future__ import annotations


class CamguideError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CamguideError, ValueError):
    pass


class MissingParameterError(CamguideError, ValueError):
    pass


class InvalidPoseError(CamguideError, ValueError):
    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"pose {index}: {message}"
        super().__init__(message)
        self.index = index


class InvalidDepthError(CamguideError, ValueError):
    pass


class EmptyCloudError(CamguideError, ValueError):
    pass


class NoOverlapError(CamguideError):
    """Raised when a view shares no known pixels with the existing cloud."""


class ScheduleError(CamguideError, ValueError):
    pass


class DegeneracyError(CamguideError, ValueError):
    pass


class ParseError(CamguideError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class StageError(CamguideError):
    """Wraps a failure inside an iterative stage with the index it happened at."""

    def __init__(self, stage: str, index: int, cause: BaseException):
        super().__init__(f"{stage} failed at index {index}: {cause}")
        self.stage = stage
        self.index = index
        self.cause = cause
