"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: argument errors exit with 2, data and
format problems with 3, evaluation-hook failures with 4.
"""


class OSDError(Exception):
    exit_code = 3


class ArgumentError(OSDError, ValueError):
    exit_code = 2


class FormatError(OSDError):
    """Malformed header, bad magic, or non-canonical encoding."""


class IntegrityError(OSDError):
    """Payload length or index range does not match the declared shape."""


class DataError(OSDError):
    """Non-finite or otherwise invalid numeric content."""


class StructuralError(OSDError):
    """Layer ids or shapes disagree between inputs that must line up."""


class NumericError(OSDError):
    """A numerical routine failed to reach its accuracy target."""


class EvaluationError(OSDError):
    exit_code = 4

    def __init__(self, message, c=None, partial=None):
        super().__init__(message)
        self.c = c
        self.partial = partial
