#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from collections.abc import Iterator
from contextlib import contextmanager
from time import perf_counter_ns


def now_micros() -> float:
    """Monotonic clock reading in microseconds."""
    return perf_counter_ns() / 1000


class ComponentTimer:
    """Accumulates elapsed microseconds per named latency component.

    Between `start` and the last `stop` the timer also keeps an independently measured wall time. Idle periods
    (see `idle`) are booked to a component or, if none is named, to `waiting`. Whatever is neither booked nor
    waited is left over in `unaccounted`.
    """

    def __init__(self) -> None:
        self.components: dict[str, float] = {}
        self.waiting = 0.0
        self.started: float | None = None
        self.finished: float | None = None
        self._idle_since: float | None = None
        self._idle_as: str | None = None

    @contextmanager
    def measure(self, component: str) -> Iterator[None]:
        start = perf_counter_ns()
        try:
            yield
        finally:
            self.add(component, (perf_counter_ns() - start) / 1000)

    def add(self, component: str, micros: float) -> None:
        self.components[component] = self.components.get(component, 0.0) + micros

    def total(self) -> float:
        return sum(self.components.values())

    def start(self, *, earlier: float = 0.0) -> None:
        """Starts the wall clock, back-dated by `earlier` microseconds of work done before the timer existed."""
        now = now_micros()
        self.started, self.finished = now - earlier, now

    def stop(self) -> None:
        self.resume()
        self.finished = now_micros()

    def idle(self, component: str | None = None) -> None:
        """Begins a period in which nothing runs locally, booked to `component` or to `waiting` on `resume`."""
        self.resume()
        self._idle_since = now_micros()
        self._idle_as = component

    def resume(self) -> None:
        if self._idle_since is None:
            return
        elapsed = now_micros() - self._idle_since
        if self._idle_as is None:
            self.waiting += elapsed
        else:
            self.add(self._idle_as, elapsed)
        self._idle_since = self._idle_as = None

    @property
    def idling(self) -> bool:
        return self._idle_since is not None

    @property
    def wall(self) -> float:
        if self.started is None or self.finished is None:
            return 0.0
        return self.finished - self.started

    def unaccounted(self) -> float:
        return self.wall - self.total() - self.waiting
