"""
Deterministic discrete-event kernel.

Actors are plain `async def` coroutines driven by the simulator instead of an
asyncio loop: awaiting a `SimFuture` suspends the coroutine until the
simulator resolves it at some virtual time. Events are ordered by
(time, insertion sequence), so a run is fully determined by its inputs.
"""
import heapq
import logging
from typing import Any, Awaitable, Callable, Coroutine, List, Optional, Tuple

from guardnet.exceptions import TransportTimeout

logger = logging.getLogger(__name__)


class TimerHandle:
    __slots__ = ("when_us", "callback", "args", "cancelled")

    def __init__(self, when_us: int, callback: Callable, args: tuple) -> None:
        self.when_us = when_us
        self.callback = callback
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualClock:
    """Virtual microsecond clock plus the event queue ordered by (time, seq)."""

    def __init__(self, start_us: int = 0) -> None:
        if start_us < 0:
            raise ValueError("start_us must be non-negative")
        self._now_us = start_us
        self._seq = 0
        self._queue: List[Tuple[int, int, TimerHandle]] = []

    @property
    def now_us(self) -> int:
        return self._now_us

    def schedule(self, at_us: int, callback: Callable, *args) -> TimerHandle:
        if at_us < self._now_us:
            raise ValueError(f"cannot schedule at {at_us} before now ({self._now_us})")
        self._seq += 1
        handle = TimerHandle(at_us, callback, args)
        heapq.heappush(self._queue, (at_us, self._seq, handle))
        return handle

    def _drop_cancelled(self) -> None:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)

    def pending(self) -> bool:
        self._drop_cancelled()
        return bool(self._queue)

    def peek_time(self) -> Optional[int]:
        self._drop_cancelled()
        return self._queue[0][0] if self._queue else None

    def pop(self) -> TimerHandle:
        self._drop_cancelled()
        at_us, _, handle = heapq.heappop(self._queue)
        self._now_us = at_us
        return handle

    def advance_to(self, at_us: int) -> None:
        if at_us < self._now_us:
            raise ValueError(f"cannot move clock back from {self._now_us} to {at_us}")
        self._now_us = at_us


class SimFuture:
    """A value that becomes available at some virtual time."""

    def __init__(self, sim: "Simulator") -> None:
        self._sim = sim
        self._done = False
        self._result: Any = None
        self._exception: Optional[BaseException] = None
        self._callbacks: List[Callable[["SimFuture"], None]] = []

    def done(self) -> bool:
        return self._done

    def result(self) -> Any:
        if not self._done:
            raise RuntimeError("future is not done")
        if self._exception is not None:
            raise self._exception
        return self._result

    def exception(self) -> Optional[BaseException]:
        return self._exception

    def set_result(self, value: Any) -> None:
        if self._done:
            return
        self._done, self._result = True, value
        self._fire()

    def set_exception(self, exc: BaseException) -> None:
        if self._done:
            return
        self._done, self._exception = True, exc
        self._fire()

    def add_done_callback(self, callback: Callable[["SimFuture"], None]) -> None:
        if self._done:
            self._sim.call_soon(callback, self)
        else:
            self._callbacks.append(callback)

    def _fire(self) -> None:
        callbacks, self._callbacks = self._callbacks, []
        for callback in callbacks:
            self._sim.call_soon(callback, self)

    def __await__(self):
        if not self._done:
            yield self
        return self.result()


class SimTask(SimFuture):
    """Drives one coroutine; resolves with its return value."""

    def __init__(self, sim: "Simulator", coro: Coroutine, name: str) -> None:
        super().__init__(sim)
        self._coro = coro
        self.name = name
        sim.call_soon(self._step, None, None)

    def _step(self, value: Any, exc: Optional[BaseException]) -> None:
        try:
            if exc is not None:
                awaited = self._coro.throw(exc)
            else:
                awaited = self._coro.send(value)
        except StopIteration as stop:
            self.set_result(stop.value)
            return
        except Exception as error:
            self.set_exception(error)
            return
        if not isinstance(awaited, SimFuture):
            self._coro.close()
            self.set_exception(TypeError(f"task {self.name} awaited a non-simulator object: {awaited!r}"))
            return
        awaited.add_done_callback(self._wakeup)

    def _wakeup(self, future: SimFuture) -> None:
        if future._exception is not None:
            self._step(None, future._exception)
        else:
            self._step(future._result, None)


class Simulator:
    """Single-threaded event loop over a VirtualClock."""

    def __init__(self, start_us: int = 0) -> None:
        self.clock = VirtualClock(start_us)
        self.failures: List[Tuple[str, BaseException]] = []

    @property
    def now_us(self) -> int:
        return self.clock.now_us

    def call_at(self, at_us: int, callback: Callable, *args) -> TimerHandle:
        return self.clock.schedule(at_us, callback, *args)

    def call_later(self, delay_us: int, callback: Callable, *args) -> TimerHandle:
        return self.clock.schedule(self.now_us + max(0, int(delay_us)), callback, *args)

    def call_soon(self, callback: Callable, *args) -> TimerHandle:
        return self.clock.schedule(self.now_us, callback, *args)

    def create_future(self) -> SimFuture:
        return SimFuture(self)

    def spawn(self, coro: Coroutine, name: str = "task", background: bool = True) -> SimTask:
        """Start a coroutine; background task failures are logged and kept in `failures`."""
        task = SimTask(self, coro, name)
        if background:
            task.add_done_callback(self._report_failure)
        return task

    def _report_failure(self, task: SimTask) -> None:
        error = task.exception()
        if error is not None:
            logger.error(f"Task {task.name} crashed: {error}", exc_info=error)
            self.failures.append((task.name, error))

    def sleep(self, delay_us: int) -> SimFuture:
        future = self.create_future()
        self.call_later(delay_us, future.set_result, None)
        return future

    def _as_future(self, awaitable: Awaitable, name: str) -> SimFuture:
        if isinstance(awaitable, SimFuture):
            return awaitable
        return self.spawn(awaitable, name, background=False)

    def wait_for(self, awaitable: Awaitable, timeout_us: int) -> SimFuture:
        """Resolve like `awaitable`, or fail with TransportTimeout after `timeout_us`."""
        inner = self._as_future(awaitable, "wait_for")
        outer = self.create_future()

        def expire() -> None:
            outer.set_exception(TransportTimeout(f"timed out after {timeout_us} us"))

        timer = self.call_later(timeout_us, expire)

        def relay(done: SimFuture) -> None:
            timer.cancel()
            if done.exception() is not None:
                outer.set_exception(done.exception())
            else:
                outer.set_result(done._result)

        inner.add_done_callback(relay)
        return outer

    def gather(self, *awaitables: Awaitable) -> SimFuture:
        """Resolve with every result in order once all finish; the first failure by position wins."""
        futures = [self._as_future(a, "gather") for a in awaitables]
        outer = self.create_future()
        remaining = [len(futures)]

        def settle(_: SimFuture) -> None:
            remaining[0] -= 1
            if remaining[0]:
                return
            for future in futures:
                if future.exception() is not None:
                    outer.set_exception(future.exception())
                    return
            outer.set_result([future._result for future in futures])

        if not futures:
            outer.set_result([])
        for future in futures:
            future.add_done_callback(settle)
        return outer

    def _run_one(self) -> None:
        handle = self.clock.pop()
        handle.callback(*handle.args)

    def run_until_idle(self) -> None:
        while self.clock.pending():
            self._run_one()

    def run_for(self, duration_us: int) -> None:
        deadline = self.now_us + duration_us
        while self.clock.pending() and self.clock.peek_time() <= deadline:
            self._run_one()
        self.clock.advance_to(deadline)

    def run_until_complete(self, coro: Coroutine, name: str = "main") -> Any:
        """Run until `coro` finishes and return its result (or raise its error)."""
        task = self.spawn(coro, name, background=False)
        while not task.done():
            if not self.clock.pending():
                raise RuntimeError(f"simulation went idle before {name} finished")
            self._run_one()
        return task.result()


class ComputeMeter:
    """Charges virtual compute time and keeps the running total for one unit of work."""

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self.total_us = 0

    async def charge(self, cost_us: int) -> None:
        if cost_us <= 0:
            return
        self.total_us += cost_us
        await self.sim.sleep(cost_us)
