from __future__ import annotations

import time
from typing import TYPE_CHECKING, Any, Optional, Type

if TYPE_CHECKING:
    from types import TracebackType

    from typing_extensions import Self


__all__ = ('Timer',)


MISSING: Any = object()


class Timer:
    """
    Wall-clock stopwatch on :func:`time.perf_counter`, usable with ``with`` and ``async with``.

    Example
    -------
    .. code:: py

        with Timer() as timer:
            train_stage1(objective, hp)

        print(timer.get_time_ms())
    """

    def __init__(self):
        self._start_time: float = MISSING
        self._end_time: float = MISSING

    def start_timer(self) -> None:
        self._start_time = time.perf_counter()
        self._end_time = MISSING

    def end_timer(self) -> None:
        if self._start_time is MISSING:
            raise RuntimeError('Timer has not started yet.')
        self._end_time = time.perf_counter()

    def get_time(self) -> float:
        """Seconds between start and end."""
        if self._start_time is MISSING or self._end_time is MISSING:
            raise RuntimeError('Timer has not ended yet.')
        return self._end_time - self._start_time

    def get_time_ms(self) -> float:
        return 1000.0 * self.get_time()

    def elapsed_ms(self) -> float:
        """Milliseconds since start, while still running."""
        if self._start_time is MISSING:
            raise RuntimeError('Timer has not started yet.')
        return 1000.0 * (time.perf_counter() - self._start_time)

    def __enter__(self) -> Self:
        self.start_timer()
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        self.end_timer()

    async def __aenter__(self) -> Self:
        self.start_timer()
        return self

    async def __aexit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        self.end_timer()
