"""Deterministic discrete-event core.

The event calendar is a binary heap keyed on ``(time, seq)`` so that events
scheduled for the same instant fire in insertion order.  Cancellation is lazy:
a cancelled event stays in the heap and is skipped when popped.

Events may be flagged ``daemon``.  Daemon events (control loops, idle
eviction timers, ...) never keep a run alive on their own: the run loop stops
as soon as only daemon events remain, mirroring "run until all messages have
been processed".
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

EVENT_KINDS = ("arrival", "exec_progress", "transfer_done", "setup_done", "timer", "shutdown")

GENERATOR_ID = "python-random-MT19937/sha256-stream-seeding"
HASH_ID = "fnv1a-64"

_PACK = struct.Struct("<dq").pack


class SimulationError(RuntimeError):
    """Fatal logic error inside a run (scheduling in the past, livelock, ...)."""


@dataclass(eq=False, slots=True)
class SimEvent:
    time: float
    seq: int
    kind: str
    handler: Optional[Callable[["SimEvent"], None]] = None
    payload: Any = None
    daemon: bool = False
    cancelled: bool = False

    def __lt__(self, other: "SimEvent") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class TraceDigest:
    """Running SHA-256 over processed events; identical digests mean identical traces."""

    def __init__(self):
        self._h = hashlib.sha256()
        self.count = 0

    def update(self, ev: SimEvent, subject: str = "") -> None:
        self._h.update(_PACK(ev.time, ev.seq) + f"{ev.kind}|{subject}".encode())
        self.count += 1
    def hexdigest(self) -> str:
        return self._h.hexdigest()


class Engine:
    """Virtual clock plus event calendar.

    ``schedule`` enforces the precondition that nothing is scheduled before
    the current clock; ``run_until_drained`` processes events until only
    daemon events (or nothing) remain, or a ``shutdown`` event fires.
    """

    def __init__(self, max_stall: int = 10**7, trace_sink: Optional[Callable[[SimEvent], None]] = None):
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._live = 0  # pending, non-cancelled, non-daemon events
        self.max_stall = max_stall
        self.processed = 0
        self.digest = TraceDigest()
        self.trace_sink = trace_sink
        self._stopped = False

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def pending(self) -> int:
        return self._live

    def schedule(self, time: float, kind: str, handler=None, payload=None, daemon: bool = False) -> SimEvent:
        if not time >= self.now:  # also rejects NaN
            raise SimulationError(f"event {kind!r} scheduled at {time!r} before clock {self.now!r}")
        ev = SimEvent(time, self._seq, kind, handler, payload, daemon)
        self._seq += 1
        heapq.heappush(self._heap, (time, ev.seq, ev))
        if not daemon:
            self._live += 1
        return ev

    def after(self, delay: float, kind: str, handler=None, payload=None, daemon: bool = False) -> SimEvent:
        return self.schedule(self.now + delay, kind, handler, payload, daemon)

    def cancel(self, ev: Optional[SimEvent]) -> None:
        if ev is None or ev.cancelled:
            return
        ev.cancelled = True
        if not ev.daemon:
            self._live -= 1

    def stop(self) -> None:
        self._stopped = True

    def run_until_drained(self) -> float:
        """Process events until drained; return the clock at the last processed event."""
        heap = self._heap
        last_time = self.now
        stall = 0
        last_processed = self.now
        while heap and self._live > 0 and not self._stopped:
            time, _, ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            if not ev.daemon:
                self._live -= 1
            if time > last_time:
                stall = 0
                last_time = time
            else:
                stall += 1
                if stall >= self.max_stall:
                    raise SimulationError(
                        f"livelock: clock stuck at {time!r} for {stall} consecutive events (last kind {ev.kind!r})"
                    )
            self.now = time
            self.processed += 1
            last_processed = time
            self.digest.update(ev, _subject(ev.payload))
            if self.trace_sink is not None:
                self.trace_sink(ev)
            if ev.kind == "shutdown":
                break
            if ev.handler is not None:
                ev.handler(ev)
        return last_processed


def _subject(payload) -> str:
    if payload is None:
        return ""
    tag = getattr(payload, "trace_tag", None)
    if tag is not None:
        return tag() if callable(tag) else str(tag)
    return type(payload).__name__


def stream_seed(seed: int, stream_id: str) -> int:
    """Derive an independent 64-bit seed for ``stream_id`` from the run seed."""
    digest = hashlib.sha256(f"{int(seed)}:{stream_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class RandomStream:
    """One independent uniform stream; exponentials by inverse CDF."""

    __slots__ = ("seed", "stream_id", "_rng")

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = stream_id
        self._rng = random.Random(stream_seed(seed, stream_id))

    def uniform(self) -> float:
        return self._rng.random()

    def exponential(self, rate: float) -> float:
        if rate <= 0:
            raise ValueError("exponential rate must be positive")
        return -math.log(1.0 - self._rng.random()) / rate

    def randrange(self, n: int) -> int:
        # via the uniform stream so the draw count is fixed per call
        return min(int(self._rng.random() * n), n - 1)

    def choice_weighted(self, weights) -> int:
        u = self._rng.random() * sum(weights)
        acc = 0.0
        last = 0
        for i, w in enumerate(weights):
            if w <= 0:
                continue
            last = i
            acc += w
            if u < acc:
                return i
        return last


@dataclass
class StreamFactory:
    """Hands out one ``RandomStream`` per label, created on first use."""

    seed: int
    _streams: dict = field(default_factory=dict)

    def __call__(self, stream_id: str) -> RandomStream:
        s = self._streams.get(stream_id)
        if s is None:
            s = self._streams[stream_id] = RandomStream(self.seed, stream_id)
        return s


def fnv1a_64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h
