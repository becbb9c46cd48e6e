"""OpenWhisk controller heuristic: hash home host, coprime-step probing, escalating busy level."""

from __future__ import annotations

from functools import lru_cache
from math import gcd
from typing import Sequence

from ..engine import RandomStream, fnv1a_64


@lru_cache(maxsize=None)
def build_generators(pool_size: int) -> tuple[int, ...]:
    """Greedy scan of 1..pool_size keeping every i coprime to all kept values.

    The scan starts at 1; a generator of 0 would never leave the home host.
    """
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    kept: list[int] = []
    for i in range(1, pool_size + 1):
        if all(gcd(i, g) == 1 for g in kept):
            kept.append(i)
    return tuple(kept)


def function_hash(name: str) -> int:
    return fnv1a_64(name)


def probe_order(h: int, pool_size: int) -> list[int]:
    """Indices visited in one pass for hash ``h``."""
    gens = build_generators(pool_size)
    g = gens[h % len(gens)]
    return [(h + k * g) % pool_size for k in range(pool_size)]


def first_fit(h: int, active_counts: Sequence[int], busy_threshold: int = 16,
              max_multiplier: int = 3) -> int | None:
    """First probed site below the busy level, escalating the level; ``None`` if all fail."""
    n = len(active_counts)
    gens = build_generators(n)
    g = gens[h % len(gens)]
    level = busy_threshold
    while level <= max_multiplier * busy_threshold:
        for k in range(n):
            x = (h + k * g) % n
            if active_counts[x] < level:
                return x
        level += busy_threshold
    return None


def select_host(h: int, active_counts: Sequence[int], stream: RandomStream,
                busy_threshold: int = 16, max_multiplier: int = 3) -> int:
    """Index of the selected site; a uniformly random one once every level is exhausted."""
    x = first_fit(h, active_counts, busy_threshold, max_multiplier)
    if x is None:
        return stream.randrange(len(active_counts))
    return x


class OwScheduler:
    name = "ow"

    def __init__(self, cluster, classes, streams, busy_threshold: int = 16, max_multiplier: int = 3):
        self.cluster = cluster
        self.busy_threshold = busy_threshold
        self.max_multiplier = max_multiplier
        self.hashes = [function_hash(c.name) for c in classes]
        self.stream = streams("sched:ow")
        self.random_fallbacks = 0

    def dispatch(self, req) -> int:
        sites = self.cluster.sites
        # "events at" a site: accepted there and not yet completed
        counts = [s.unfinished for s in sites]
        x = first_fit(self.hashes[req.cls], counts, self.busy_threshold, self.max_multiplier)
        if x is None:
            self.random_fallbacks += 1
            x = self.stream.randrange(len(sites))
        return x

    def on_complete(self, req, inst) -> None:
        pass
