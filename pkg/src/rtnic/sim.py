"""Virtual clock and event queue.

Time is an integer number of microseconds since the start of the run.
Events are totally ordered by ``(time, kind, seq)``; ``kind`` doubles as the
tie-break rank, so a packet arriving in the same microsecond as a queue timer
expiry is handled first and ends up in that interrupt's batch.

Besides the heap there are keyed slots: a slot holds at most one pending
event and setting it again replaces the old one. The CPU model keeps its
single "current segment ends" event in a slot so that preempted segments
do not leave dead entries behind.
"""

from __future__ import annotations

import heapq
from enum import IntEnum
from typing import Any, Callable, NamedTuple


class EventKind(IntEnum):
    PACKET_ARRIVAL = 0
    QUEUE_TIMER_EXPIRY = 1
    ISR_START = 2
    ISR_END = 3
    DRIVER_STEP = 4
    JOB_COMPLETION = 5
    MEASUREMENT_TICK = 6


class Event(NamedTuple):
    time: int
    kind: EventKind
    seq: int
    payload: Any = None


class SimulationError(RuntimeError):
    """Raised when a caller breaks the event queue contract."""


class EventQueue:
    def __init__(self, start: int = 0):
        self.now = start
        self._heap: list[Event] = []
        self._slots: dict[Any, Event] = {}
        self._slot_min: Event | None = None
        self._seq = 0

    def __len__(self):
        return len(self._heap) + len(self._slots)

    def _check(self, time, kind):
        if time < self.now:
            raise SimulationError(
                f"cannot schedule {kind.name} at t={time}, clock is at {self.now}"
            )

    def schedule(self, time: int, kind: EventKind, payload=None) -> Event:
        if time < self.now:
            self._check(time, kind)
        ev = Event(time, kind, self._seq, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def set_slot(self, key, time: int, kind: EventKind, payload=None) -> Event:
        """Schedule into slot ``key``, dropping whatever it held."""
        if time < self.now:
            self._check(time, kind)
        ev = Event(time, kind, self._seq, payload)
        self._seq += 1
        slots = self._slots
        old = slots.get(key)
        slots[key] = ev
        m = self._slot_min
        if m is None or ev < m:
            self._slot_min = ev
        elif old is m:
            self._slot_min = min(slots.values())
        return ev

    def clear_slot(self, key) -> None:
        old = self._slots.pop(key, None)
        if old is not None and old is self._slot_min:
            self._slot_min = min(self._slots.values()) if self._slots else None

    def _take_slot_min(self) -> Event:
        ev = self._slot_min
        slots = self._slots
        for k, v in slots.items():
            if v is ev:
                del slots[k]
                break
        self._slot_min = min(slots.values()) if slots else None
        return ev

    def peek_time(self) -> int | None:
        ev = self._peek()
        return None if ev is None else ev.time

    def _peek(self) -> Event | None:
        h, s = self._heap[0] if self._heap else None, self._slot_min
        if h is None:
            return s
        if s is None or h < s:
            return h
        return s

    def pop_next(self) -> Event | None:
        ev = self._peek()
        if ev is None:
            return None
        if ev is self._slot_min:
            self._take_slot_min()
        else:
            heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def run_until(self, horizon: int, handler: Callable[[Event], Any]) -> None:
        """Process every event with ``time <= horizon`` in order.

        Events scheduled by ``handler`` are picked up in the same pass. The
        clock ends at ``horizon`` even if the queue drained earlier.
        """
        self.run_with_arrivals(horizon, (), None, handler)

    def run_with_arrivals(self, horizon: int, arrival_times, on_arrival,
                          handler: Callable[[Event], Any]) -> None:
        """``run_until`` with a pre-sorted stream of packet arrivals.

        Equivalent to scheduling one PACKET_ARRIVAL per entry of
        ``arrival_times`` before the run (they would hold the lowest sequence
        numbers and win every tie), but the stream is merged lazily instead
        of going through the heap. ``on_arrival`` gets the stream index.
        """
        if horizon < self.now:
            raise SimulationError(f"horizon {horizon} is before clock {self.now}")
        heap = self._heap
        pop = heapq.heappop
        times = list(arrival_times)
        n = len(times)
        i = 0
        if n and times[0] < self.now:
            raise SimulationError(f"arrival at t={times[0]} predates clock {self.now}")
        while True:
            s = self._slot_min
            if heap:
                h = heap[0]
                nxt = h if s is None or h < s else s
            else:
                nxt = s
            if i < n and times[i] <= horizon and (nxt is None or times[i] <= nxt.time):
                self.now = times[i]
                on_arrival(i)
                i += 1
            elif nxt is not None and nxt.time <= horizon:
                if nxt is s:
                    self._take_slot_min()
                else:
                    pop(heap)
                self.now = nxt.time
                handler(nxt)
            else:
                break
        self.now = horizon
