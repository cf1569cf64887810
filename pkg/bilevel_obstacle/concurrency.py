from __future__ import annotations

import asyncio
import functools
import inspect
from typing import TYPE_CHECKING, Any, Callable, Iterable, List, TypeVar

if TYPE_CHECKING:
    from typing_extensions import ParamSpec

    from ._types import Coro


__all__ = ('run_in_thread', 'gather_in_threads')


T = TypeVar('T')

if TYPE_CHECKING:
    P = ParamSpec('P')
else:
    P = TypeVar('P')


def run_in_thread(func: Callable[P, T]) -> Callable[P, Coro[T]]:
    """|deco|

    Turn a blocking numeric function into a coroutine function that runs it in the
    default loop executor.

    Example
    -------
    .. code:: py

        from bilevel_obstacle import recovered_objective, run_in_thread

        solve = run_in_thread(recovered_objective)

        async def main():
            coarse, fine = await asyncio.gather(solve(problem, control, 64), solve(problem, control, 128))

    Raises
    ------
    TypeError
        The object passed in was not a function.
    """
    if not callable(func) or inspect.iscoroutinefunction(func):
        raise TypeError(f'Expected a callable function, got {type(func).__name__!r}')

    @functools.wraps(func)
    async def threaded(*args: P.args, **kwargs: P.kwargs) -> T:
        new_func = functools.partial(func, *args, **kwargs)

        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(None, new_func)

    return threaded


def gather_in_threads(func: Callable[[Any], T], items: Iterable[Any]) -> List[T]:
    """
    Call ``func`` on every item concurrently and return the results in input order.

    Used for resolution sweeps. The order of the results never depends on which thread
    finishes first, so any reduction over them is reproducible.

    .. warning::
        Starts its own event loop, so it cannot be called from a running one.

    Parameters
    ----------
    func: Callable
        A blocking function of one argument.
    items: Iterable
        The arguments.

    Returns
    -------
    List
        ``[func(item) for item in items]``.
    """
    threaded = run_in_thread(func)
    items = list(items)

    async def runner() -> List[T]:
        return list(await asyncio.gather(*(threaded(item) for item in items)))

    if not items:
        return []
    return asyncio.run(runner())
