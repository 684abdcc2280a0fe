"""Deterministic discrete-event core: a (time, seq)-ordered heap.

seq is assigned at scheduling time, so same-timestamp events run in the
order they were scheduled — the only tiebreak the harness ever needs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .model import SimTime


class EventKind(str, Enum):
    SESSION_START = "session_start"
    SESSION_END = "session_end"
    REQUEST_ARRIVAL = "request_arrival"
    SERVICE_DONE = "service_done"
    ADMISSION_REPLY = "admission_reply"
    LEASE_EXPIRY = "lease_expiry"
    RENEWAL_DUE = "renewal_due"
    DRAIN_DEADLINE = "drain_deadline"
    REPAGE_DUE = "repage_due"
    SWITCH_DONE = "switch_done"
    PATH_CHANGE = "path_change"
    HEALTH_CHANGE = "health_change"
    CAPACITY_CHANGE = "capacity_change"
    ANCHOR_FAIL = "anchor_fail"
    ANCHOR_RECOVER = "anchor_recover"


@dataclass(frozen=True)
class SimEvent:
    kind: EventKind
    payload: dict = field(default_factory=dict)


class Engine:
    def __init__(self):
        self._heap: list[tuple[SimTime, int, SimEvent]] = []
        self._seq = 0
        self.now: SimTime = 0

    def schedule(self, time_us: SimTime, event: SimEvent) -> None:
        if time_us < self.now:
            raise AssertionError(f"cannot schedule into the past: {time_us} < {self.now}")
        heapq.heappush(self._heap, (time_us, self._seq, event))
        self._seq += 1

    def run(self, dispatch: Callable[[SimEvent], None], horizon_us: SimTime) -> None:
        """Process events strictly before the horizon, in (time, seq) order."""
        while self._heap:
            time_us, _, event = self._heap[0]
            if time_us >= horizon_us:
                break
            heapq.heappop(self._heap)
            self.now = time_us
            dispatch(event)
        self.now = horizon_us
