"""Exception hierarchy for diffgan_tts.

Library code raises these; only the command-line entry point turns them
into log lines and process exit codes (see ``exit_code``).
"""
from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_IO = 3


class DiffGanError(Exception):
    exit_code = EXIT_VALIDATION


class ShapeError(DiffGanError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes) -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class ScheduleError(DiffGanError, ValueError):
    pass


class ConfigError(DiffGanError, ValueError):
    exit_code = EXIT_USAGE

    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class CorpusError(DiffGanError):
    exit_code = EXIT_IO


class CheckpointError(DiffGanError):
    exit_code = EXIT_IO


def exit_code(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, DiffGanError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


__all__ = [
    "DiffGanError",
    "ShapeError",
    "ScheduleError",
    "ConfigError",
    "CorpusError",
    "CheckpointError",
    "exit_code",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "EXIT_USAGE",
    "EXIT_IO",
]
