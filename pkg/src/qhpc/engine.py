"""Discrete-event core: an integer-microsecond clock and a (time, seq) ordered queue."""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

SimTime = int


@dataclass(frozen=True, order=True)
class Event:
    fire_at: SimTime
    seq: int
    payload: Any = field(compare=False)


class EventQueue:
    """Min-heap of events keyed by ``(fire_at, seq)``.

    ``seq`` is the insertion counter, so simultaneous events pop in the order
    they were scheduled regardless of payload.
    """

    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self.now: SimTime = 0

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def schedule(self, delay: SimTime, payload: Any) -> int:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        return self.schedule_at(self.now + int(delay), payload)

    def schedule_at(self, at: SimTime, payload: Any) -> int:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        seq = next(self._seq)
        heapq.heappush(self._heap, Event(int(at), seq, payload))
        return seq

    def advance(self) -> Optional[Tuple[SimTime, Any]]:
        """Pop the earliest event and move the clock to it; ``None`` when drained."""
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.fire_at
        return ev.fire_at, ev.payload

    def peek_time(self) -> Optional[SimTime]:
        return self._heap[0].fire_at if self._heap else None


def schedule(q: EventQueue, delay: SimTime, payload: Any) -> int:
    return q.schedule(delay, payload)


def advance(q: EventQueue) -> Optional[Tuple[SimTime, Any]]:
    return q.advance()
