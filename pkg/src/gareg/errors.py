"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class RegistrationError(Exception):
    """Base class for all errors raised by gareg."""


class ImageFileError(RegistrationError):
    """Problem reading or writing an image file."""


class MissingFileError(ImageFileError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageFileError):
    pass


class CorruptHeaderError(ImageFileError):
    pass


class SingularTransformError(RegistrationError, ValueError):
    pass


class PointFileError(RegistrationError, ValueError):
    """Base for point CSV problems."""


class MalformedRowError(PointFileError):
    def __init__(self, line: int, text: str):
        self.line = line
        super().__init__(f"line {line}: malformed row {text!r}")


class NonNumericFieldError(MalformedRowError):
    def __init__(self, line: int, text: str):
        self.line = line
        PointFileError.__init__(self, f"line {line}: non-numeric field in {text!r}")


class EmptyPointFileError(PointFileError):
    pass


class InsufficientFeaturesError(RegistrationError):
    pass


class EmptySetError(RegistrationError, ValueError):
    pass


class InsufficientOverlapError(RegistrationError):
    pass


class DegenerateSignalError(RegistrationError):
    pass


class ControlPointMismatchError(RegistrationError, ValueError):
    pass


class RegistrationFailedError(RegistrationError):
    pass


class CaseRejectedError(RegistrationError):
    pass
