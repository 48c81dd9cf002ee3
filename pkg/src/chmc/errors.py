"""Exception hierarchy shared by every module.

Errors fall in three families which the CLI maps to exit codes:
configuration problems, data problems and runtime failures.
"""


class ChmcError(Exception):
    """Base class for all package errors."""


class ConfigError(ChmcError, ValueError):
    pass


class DataError(ChmcError, ValueError):
    pass


# hierarchy
class CycleDetected(DataError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle in class hierarchy: " + " -> ".join(map(str, self.cycle)))


class UnknownClass(DataError):
    pass


class DuplicateClassName(DataError):
    pass


class MalformedPath(DataError):
    pass


class MalformedPair(DataError):
    pass


class InconsistentLabels(DataError):
    pass


# numerics
class ShapeMismatch(ChmcError, ValueError):
    pass


class NonFiniteValue(ChmcError, ValueError):
    pass


class InvalidRate(ConfigError):
    pass


class InvalidConfig(ConfigError):
    pass


# data
class EmptyDataset(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyList(DataError):
    pass


class InvalidRectangle(ConfigError):
    pass


class InvalidStep(ConfigError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaMismatch(DataError):
    pass


class MissingDataset(DataError):
    pass


class NonPlanarInput(ConfigError):
    pass
