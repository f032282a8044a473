"""Exception hierarchy.

Every error carries a distinct ``exit_code`` so the CLI can map failures
one-to-one onto process exit statuses.
"""


class EventailError(Exception):
    exit_code = 10


class InsufficientEvents(EventailError):
    exit_code = 11


class DegenerateLine(EventailError):
    exit_code = 12


class DegenerateFlow(EventailError):
    exit_code = 13


class DegenerateEigenvalue(EventailError):
    exit_code = 14


class AmbiguousDirection(EventailError):
    exit_code = 15


class RankDeficient(EventailError):
    exit_code = 16


class PureRotationDetected(EventailError):
    exit_code = 17


class DegenerateConfiguration(EventailError):
    exit_code = 18


class RejectionExhausted(EventailError):
    exit_code = 19


class BehindCamera(EventailError):
    exit_code = 20


class DegenerateProjection(EventailError):
    exit_code = 21


class UndefinedMetric(EventailError):
    exit_code = 22


class EmptyInput(EventailError):
    exit_code = 23


class NoConsensus(EventailError):
    exit_code = 24


class ConfigParseError(EventailError):
    exit_code = 4

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class SceneFormatError(EventailError):
    exit_code = 5
