"""Exception hierarchy. Every error raised by the package derives from PscoError."""


class PscoError(Exception):
    pass


class ConfigError(PscoError, ValueError):
    pass


class ShapeError(PscoError, ValueError):
    pass


class NormalizeError(PscoError, ValueError):
    pass


class NumericError(PscoError, ArithmeticError):
    pass


class TapeError(PscoError, RuntimeError):
    pass


class FeasibilityError(PscoError, ValueError):
    pass


class SizeError(PscoError, ValueError):
    pass


class AssignmentError(PscoError, ValueError):
    pass


class CapacityError(PscoError, ValueError):
    pass


class DiagnosticsError(PscoError, ValueError):
    pass


class DataError(PscoError, ValueError):
    pass


class EpisodeError(PscoError, ValueError):
    pass


class IoError(PscoError, OSError):
    pass


class IntegrityError(PscoError, ValueError):
    pass


class FormatError(PscoError, ValueError):
    pass


class SnapshotError(PscoError, ValueError):
    pass


class UsageError(PscoError, ValueError):
    pass
