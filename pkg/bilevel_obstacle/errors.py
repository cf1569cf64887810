from __future__ import annotations

from typing import Any, Dict, Optional


__all__ = (
    'BilevelObstacleError',
    'InputError',
    'ContractError',
    'UnsupportedOperationError',
    'ParseError',
    'DivergenceError',
    'SolverError',
)


class BilevelObstacleError(Exception):
    """Base class of every error raised by this library."""


class InputError(BilevelObstacleError, ValueError):
    """An argument has the right type but an invalid value (shape, bound, id, hyperparameter)."""


class ContractError(BilevelObstacleError, ValueError):
    """A precondition between two objects does not hold, e.g. a jet without second partials."""


class UnsupportedOperationError(BilevelObstacleError, TypeError):
    """An operation outside the supported primitive set entered an expression graph."""


class ParseError(BilevelObstacleError, ValueError):
    """
    A file could not be parsed.

    Parameters
    ----------
    message: :class:`str`
        What went wrong.
    path: Optional[:class:`str`]
        The file being read.
    line: Optional[:class:`int`]
        1-based line number.
    column: Optional[:class:`int`]
        1-based column number.
    """

    def __init__(
        self,
        message: str,
        *,
        path: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.path = path
        self.line = line
        self.column = column

        location = ''
        if path is not None:
            location += f'{path}:'
        if line is not None:
            location += f'{line}:'
            if column is not None:
                location += f'{column}:'
        super().__init__(f'{location} {message}' if location else message)


class DivergenceError(BilevelObstacleError, RuntimeError):
    """
    Training produced a non-finite or exploding iterate.

    Attributes
    ----------
    snapshot: :class:`dict`
        Iteration counter and parameter norms at the moment of the abort.
    """

    def __init__(self, message: str, snapshot: Dict[str, Any]):
        self.snapshot = snapshot
        details = ', '.join(f'{key}={value}' for key, value in snapshot.items())
        super().__init__(f'{message} ({details})')


class SolverError(BilevelObstacleError, RuntimeError):
    """A numerical routine failed: linear-solve breakdown, PDAS non-termination, sampler collapse."""
