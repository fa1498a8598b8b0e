"""Deterministic event queue and named random-number substreams.

Events dispatch in (time, insertion-order) priority: FIFO among equal
timestamps.  Random substreams are independently keyed off the master seed so
that, e.g., switching the channel model cannot perturb the vehicle-arrival or
content-request draws (which enables paired comparisons across models).
"""

from __future__ import annotations

import enum
import heapq

import numpy as np


class EventKind(enum.IntEnum):
    VEHICLE_ARRIVAL = 0
    REQUEST = 1
    CONTENT_TIMEOUT = 2
    CI_TICK = 3


class SchedulingError(RuntimeError):
    """An event was scheduled in the past: a logic error, never recoverable."""


class EventQueue:
    """Min-heap of (time, seq, kind, payload) with a monotone clock."""

    def __init__(self, start_time: float = 0.0):
        self._heap = []
        self._seq = 0
        self.now = start_time

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: EventKind, payload=None) -> None:
        if time < self.now:
            raise SchedulingError(f"event at t={time} scheduled in the past (clock={self.now})")
        heapq.heappush(self._heap, (time, self._seq, int(kind), payload))
        self._seq += 1

    def pop(self):
        time, _, kind, payload = heapq.heappop(self._heap)
        assert time >= self.now, "event queue went backward in time"
        self.now = time
        return time, EventKind(kind), payload


# Substream indices off the master seed.
_STREAMS = ("arrivals", "speeds", "requests", "shadowing", "fading", "scheduler_tiebreak")

# Key salts for counter-based per-entity streams.
_SALT_FADING = 0xFAD0
_SALT_DELAY_SPREAD = 0xD51A

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


class RngStreams:
    """Named independent generators plus keyed per-(link, interval) streams.

    The per-pair streams use a counter-based generator keyed on
    (seed, purpose, interval index, endpoint ids), so a draw for one link pair
    never consumes state from any other stream regardless of evaluation order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        for idx, name in enumerate(_STREAMS):
            gen = np.random.Generator(np.random.Philox(np.random.SeedSequence((self.seed, idx))))
            setattr(self, name, gen)

    def _keyed(self, salt: int, c1: int, c2: int, c3: int) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, salt & _MASK64], dtype=_U64)
        counter = np.array([0, c1 & _MASK64, c2 & _MASK64, c3 & _MASK64], dtype=_U64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def fading_stream(self, ci_index: int, tx_key: int, rx_key: int) -> np.random.Generator:
        return self._keyed(_SALT_FADING, ci_index, tx_key, rx_key)

    def delay_spread_stream(self, tx_key: int, rx_key: int) -> np.random.Generator:
        return self._keyed(_SALT_DELAY_SPREAD, 0, tx_key, rx_key)
