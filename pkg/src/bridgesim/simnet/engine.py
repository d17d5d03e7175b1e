"""
Discrete-event core: a heap of events ordered by (time, seq).

``seq`` is assigned when an event is scheduled, so events at the same
simulated time run in scheduling order.  Times are rounded to the
nanosecond to keep float accumulation from reordering periodic events.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List

TIME_QUANTUM = 1e-9


class EventKind(Enum):
    FRAME_ARRIVAL = "FrameArrival"
    TIMER = "Timer"
    LINK_CHANGE = "LinkChange"
    CONTROL_OP = "ControlOp"
    SCENARIO_ACTION = "ScenarioAction"


def quantize(t: float) -> float:
    return round(round(t / TIME_QUANTUM) * TIME_QUANTUM, 9)


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    action: Callable[[], None] = field(compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)


class Simulator:
    def __init__(self):
        self.now = 0.0
        self._seq = 0
        self._queue: List[SimEvent] = []
        self.executed = 0

    def schedule(self, time, kind: EventKind, action) -> SimEvent:
        time = quantize(time)
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        self._seq += 1
        ev = SimEvent(time, self._seq, kind, action)
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay, kind: EventKind, action) -> SimEvent:
        return self.schedule(self.now + delay, kind, action)

    @staticmethod
    def cancel(event: SimEvent):
        if event is not None:
            event.cancelled = True

    @property
    def pending(self):
        return sum(1 for e in self._queue if not e.cancelled)

    def next_time(self):
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].time if self._queue else None

    def run_until(self, t_end) -> int:
        """Run every event with time <= t_end; returns how many ran."""
        t_end = quantize(t_end)
        if t_end < self.now:
            raise ValueError(f"t_end {t_end} is before now={self.now}")
        count = 0
        while self._queue and self._queue[0].time <= t_end:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            ev.action()
            count += 1
        self.now = t_end
        self.executed += count
        return count
