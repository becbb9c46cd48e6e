"""Per-run measurements and their summary row."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

SUMMARY_COLUMNS = (
    "lambda", "scheduler", "seed", "cold_starts", "hosts_employed", "mean_response_s",
    "container_utilization", "p50_response_s", "p95_response_s", "p99_response_s",
    "total_events", "completions", "mean_wait_s", "mean_exec_s", "prewarm_starts",
    "evictions", "final_time_s", "trace_digest", "error",
)


@dataclass
class ContainerRecord:
    cls: int
    site: int
    created_at: float
    last_active_end: float
    busy_time_total: float
    setup_duration: float
    events_served: int


@dataclass
class RunMetrics:
    lam: float = 0.0
    scheduler: str = ""
    seed: int = 0
    cold_starts: int = 0
    prewarm_starts: int = 0
    evictions: int = 0
    hosts_employed: int = 0
    n_sites: int = 0
    requests: list = field(default_factory=list)
    containers: list = field(default_factory=list)
    final_time: float = 0.0
    trace_digest: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def responses(self) -> list[float]:
        return [r.completion - r.arrival for r in self.requests if r.completion is not None]


def container_utilization(records) -> Optional[float]:
    """Busy time over lifetime, lifetime truncated at the last processed event.

    A container that never served anything counts its setup as lifetime.
    Returns ``None`` for an empty record set.
    """
    busy = 0.0
    life = 0.0
    n = 0
    for r in records:
        n += 1
        if r.events_served == 0:
            life += r.setup_duration
            continue
        if r.last_active_end < r.created_at:
            raise ValueError("container ends before it was created")
        busy += r.busy_time_total
        life += r.last_active_end - r.created_at
    if n == 0:
        return None
    if life <= 0:
        return 1.0 if busy == 0 else None
    return busy / life


def percentile(sorted_values, q: float) -> float:
    """Linear-interpolated percentile of an already sorted list."""
    if not sorted_values:
        return math.nan
    pos = (len(sorted_values) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(round(v, 12))
    return str(v)


def summarize(m: RunMetrics) -> dict:
    """One result row (values already formatted as strings for byte-stable output)."""
    done = [r for r in m.requests if r.completion is not None]
    resp = sorted(r.completion - r.arrival for r in done)
    waits = [r.exec_start - r.dispatch for r in done]
    execs = [r.completion - r.exec_start for r in done]
    util = container_utilization(m.containers)
    row = {
        "lambda": _fmt(m.lam),
        "scheduler": m.scheduler,
        "seed": str(m.seed),
        "cold_starts": str(m.cold_starts),
        "hosts_employed": str(m.hosts_employed),
        "mean_response_s": _fmt(sum(resp) / len(resp) if resp else None),
        "container_utilization": _fmt(util),
        "p50_response_s": _fmt(percentile(resp, 50) if resp else None),
        "p95_response_s": _fmt(percentile(resp, 95) if resp else None),
        "p99_response_s": _fmt(percentile(resp, 99) if resp else None),
        "total_events": str(len(m.requests)),
        "completions": str(len(done)),
        "mean_wait_s": _fmt(sum(waits) / len(waits) if waits else None),
        "mean_exec_s": _fmt(sum(execs) / len(execs) if execs else None),
        "prewarm_starts": str(m.prewarm_starts),
        "evictions": str(m.evictions),
        "final_time_s": _fmt(m.final_time),
        "trace_digest": m.trace_digest,
        "error": "",
    }
    return row
