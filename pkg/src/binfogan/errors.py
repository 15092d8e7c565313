"""Exception hierarchy. Each CLI-visible class carries the exit code it maps to."""


class BInfoGANError(Exception):
    exit_code = 1


class ShapeError(BInfoGANError, ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, message, *shapes):
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class TapeError(BInfoGANError, RuntimeError):
    pass


class ConfigError(BInfoGANError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None, column=None, key=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column
        self.key = key


class NumericError(BInfoGANError, FloatingPointError):
    """A loss term became non-finite; ``term`` names it."""

    exit_code = 3

    def __init__(self, term, value):
        super().__init__(f"non-finite value in loss term '{term}': {value!r}")
        self.term = term
        self.value = value


class CompatibilityError(BInfoGANError, ValueError):
    exit_code = 4


class DataAvailabilityError(BInfoGANError, LookupError):
    exit_code = 5


class FormatError(BInfoGANError, ValueError):
    """Malformed binary input. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        suffix = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(message + suffix)
        self.offset = offset


class VersionError(FormatError):
    pass
