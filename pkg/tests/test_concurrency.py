import asyncio
import threading
import time

import pytest

from bilevel_obstacle import gather_in_threads, run_in_thread


def test_rejects_non_functions():
    with pytest.raises(TypeError):
        run_in_thread(42)

    async def already_async():
        return 1

    with pytest.raises(TypeError):
        run_in_thread(already_async)


def test_runs_off_the_event_loop_thread():
    def whoami(tag):
        return tag, threading.get_ident()

    async def main():
        return await run_in_thread(whoami)('x')

    tag, ident = asyncio.run(main())
    assert tag == 'x'
    assert ident != threading.get_ident()


def test_keeps_metadata():
    def solve(N):
        """Solve at resolution N."""
        return N

    wrapped = run_in_thread(solve)
    assert wrapped.__name__ == 'solve'
    assert wrapped.__doc__ == 'Solve at resolution N.'


def test_gather_keeps_input_order():
    def slow_square(n):
        time.sleep(0.01 * (4 - n))
        return n * n

    assert gather_in_threads(slow_square, [1, 2, 3]) == [1, 4, 9]
    assert gather_in_threads(slow_square, []) == []
