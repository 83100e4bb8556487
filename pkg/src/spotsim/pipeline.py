"""Two-slot tile handshake between the Im2Col unit and the GEMM unit."""
from __future__ import annotations

from collections import deque

import numpy as np


class BufferFull(RuntimeError):
    pass


class BufferEmpty(RuntimeError):
    pass


class DoubleBuffer:
    """Bounded FIFO of (tile, bitmap) pairs; the producer must wait when
    both slots are occupied."""

    def __init__(self, capacity: int = 2):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._slots: deque = deque()
        self.puts = 0
        self.gets = 0
        self.peak = 0

    def __len__(self):
        return len(self._slots)

    @property
    def full(self) -> bool:
        return len(self._slots) >= self.capacity

    def put(self, item) -> None:
        if self.full:
            raise BufferFull("both tile slots are occupied")
        self._slots.append(item)
        self.puts += 1
        self.peak = max(self.peak, len(self._slots))

    def get(self):
        if not self._slots:
            raise BufferEmpty("no tile ready")
        self.gets += 1
        return self._slots.popleft()


def handshake(producer, capacity: int = 2):
    """Drain ``producer`` through a :class:`DoubleBuffer`, yielding items in
    order. The producer only runs ahead while a slot is free."""
    buf = DoubleBuffer(capacity)
    it = iter(producer)
    done = False
    while True:
        while not done and not buf.full:
            try:
                buf.put(next(it))
            except StopIteration:
                done = True
        if not len(buf):
            return
        yield buf.get()


def pipelined_cycles(produce, consume, capacity: int = 2) -> int:
    """Finish time of a two-stage pipeline joined by ``capacity`` slots.

    ``produce[i]`` / ``consume[i]`` are per-tile stage times. Tile ``i`` may
    only start production once tile ``i - capacity`` has been taken.
    """
    produce = np.asarray(produce, dtype=np.int64)
    consume = np.asarray(consume, dtype=np.int64)
    if produce.shape != consume.shape:
        raise ValueError("stage time arrays differ in length")
    p_end = 0
    c_end = 0
    c_start = []
    for i in range(len(produce)):
        start = p_end
        if i >= capacity:
            start = max(start, c_start[i - capacity])
        p_end = start + int(produce[i])
        cs = max(p_end, c_end)
        c_start.append(cs)
        c_end = cs + int(consume[i])
    return c_end
