"""Exception hierarchy.

Everything a caller can trigger with bad input derives from ``DataError``;
the CLI maps those to exit code 2.
"""

from __future__ import annotations


class TaskSegError(Exception):
    """Base class for all taskseg errors."""


class DataError(TaskSegError):
    """Invalid input data (recordings, plans, annotations, parameters)."""


class DuplicateNode(DataError, ValueError):
    pass


class EmptyRegistry(DataError, ValueError):
    pass


class TimeOrder(DataError, ValueError):
    pass


class MatrixShape(DataError, ValueError):
    pass


class IndexRange(DataError, IndexError):
    pass


class DegenerateGraph(DataError, ValueError):
    pass


class UnknownNode(DataError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class StrictConnectivity(DataError):
    """Final part graph is disconnected and strict mode was requested."""


class DisassemblyError(DataError):
    """A part-part edge disappeared and strict mode was requested."""


class RegistryMismatch(DataError, ValueError):
    pass


class NestingError(DataError, ValueError):
    """Coarse boundaries do not nest inside fine boundaries."""


class LevelMix(DataError, ValueError):
    pass


class PlanError(DataError, ValueError):
    pass


class VersionError(DataError):
    pass


class IoError(DataError, OSError):
    pass


class ParseError(DataError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(DataError):
    """Well-formed input that breaks a model invariant."""

    def __init__(self, reason: str, frame: int | None = None, line: int | None = None):
        self.reason = reason
        self.frame = frame
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if frame is not None:
            where.append(f"frame {frame}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {reason}" if prefix else reason)


class DisassemblyWarning(UserWarning):
    """A part-part connection was removed (ignored under monotone assembly)."""


class DisconnectedAssemblyWarning(UserWarning):
    """The final part graph has more than one component."""
