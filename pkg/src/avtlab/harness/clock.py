"""Logical simulation clock and domain-separated randomness.

Ticks are the only time unit anywhere in simulation. Events scheduled for
the same tick replay in schedule order (a global sequence number breaks
ties), which makes whole runs a pure function of configuration and seeds.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from ..payload import derive_seed


def domain_rng(root_seed: int, domain: str) -> random.Random:
    """One PRNG per subsystem so reseeding one never shifts another."""
    return random.Random(derive_seed(root_seed, domain))


@dataclass(order=True)
class _Entry:
    tick: int
    seq: int
    item: object = field(compare=False)


class SimClock:
    """Monotonic tick counter with a (tick, seq)-ordered pending queue."""

    def __init__(self) -> None:
        self.tick = 0
        self._seq = 0
        self._queue: list[_Entry] = []

    def schedule(self, at_tick: int, item) -> int:
        if at_tick <= self.tick:
            at_tick = self.tick + 1  # nothing lands in the past or the present
        entry = _Entry(tick=at_tick, seq=self._seq, item=item)
        self._seq += 1
        heapq.heappush(self._queue, entry)
        return entry.seq

    def due(self) -> list:
        """Pop every item scheduled for the current tick, in schedule order."""
        out = []
        while self._queue and self._queue[0].tick <= self.tick:
            out.append(heapq.heappop(self._queue).item)
        return out

    def advance(self) -> int:
        self.tick += 1
        return self.tick

    @property
    def pending(self) -> int:
        return len(self._queue)

    def next_tick(self) -> int | None:
        return self._queue[0].tick if self._queue else None
