"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures to process status without inspecting messages.
"""


class AnovaChebError(Exception):
    exit_code = 1


class UsageError(AnovaChebError, ValueError):
    exit_code = 2


class InvalidThresholdError(UsageError):
    pass


class DomainError(AnovaChebError, ValueError):
    exit_code = 3


class ShapeError(AnovaChebError, ValueError):
    exit_code = 3


class UnknownTermError(AnovaChebError, KeyError):
    exit_code = 3

    def __str__(self):
        return Exception.__str__(self)


class FormatError(AnovaChebError, ValueError):
    exit_code = 3


class VersionError(FormatError):
    pass


class NumericError(AnovaChebError, ArithmeticError):
    exit_code = 4


class DegenerateModelError(NumericError):
    pass


class ResourceError(AnovaChebError, MemoryError):
    exit_code = 5
