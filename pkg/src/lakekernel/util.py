"""Small shared helpers: atomic file writes, clocks and id sources.

Clocks and id sources are injectable so scripted scenarios and the
concurrency harness can reproduce identical commit ids and run ids across
executions; production code uses the system clock and random UUIDs.
"""
from __future__ import annotations

import os
import threading
import time
import uuid
from pathlib import Path

MASK64 = (1 << 64) - 1


def atomic_write(path: Path, data: bytes) -> None:
    """Write data to path via a temp file and atomic rename."""
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def splitmix64(state: int) -> tuple[int, int]:
    """One step of splitmix64: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class SplitMix64:
    """Tiny deterministic PRNG; the stated generator for workload op selection."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def next_float(self) -> float:
        # 53 high bits, uniform in [0, 1)
        return (self.next_u64() >> 11) / float(1 << 53)

    def randrange(self, n: int) -> int:
        return self.next_u64() % n

    def choice_weighted(self, items, weights) -> object:
        total = float(sum(weights))
        x = self.next_float() * total
        acc = 0.0
        for item, w in zip(items, weights):
            acc += w
            if x < acc:
                return item
        return items[-1]


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class FixedClock:
    """Always returns the same timestamp; keeps commit ids reproducible."""

    def __init__(self, at: int = 0):
        self.at = at

    def now(self) -> int:
        return self.at


class StepClock:
    """Monotonic logical clock, thread-safe."""

    def __init__(self, start: int = 0):
        self._t = start
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            self._t += 1
            return self._t


class RandomIds:
    def new_run_id(self) -> str:
        return str(uuid.uuid4())


class DeterministicIds:
    """UUIDv4-shaped ids drawn from splitmix64; for reproducible traces."""

    def __init__(self, seed: int):
        self._rng = SplitMix64(seed)
        self._lock = threading.Lock()

    def new_run_id(self) -> str:
        with self._lock:
            hi = self._rng.next_u64()
            lo = self._rng.next_u64()
        raw = (hi << 64) | lo
        # stamp version 4 / variant 10 bits so the string is a valid UUIDv4
        raw &= ~(0xF << 76) & (1 << 128) - 1
        raw |= 0x4 << 76
        raw &= ~(0x3 << 62) & (1 << 128) - 1
        raw |= 0x2 << 62
        return str(uuid.UUID(int=raw))
