"""Ramped multi-class Poisson workloads and trace replay."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .engine import RandomStream


@dataclass
class ClassSpec:
    name: str
    peak_rate: float = 0.0
    exec_time_ideal: float = 0.2
    threads: int = 1
    ramp_duration: float = 20.0
    stop_after_ramp: bool = True
    hold_duration: float = 0.0
    service: str = "deterministic"
    data_ops: list = field(default_factory=list)
    alpha: Optional[float] = None  # per-class NOAH waiting-time threshold

    def __post_init__(self):
        if self.peak_rate < 0:
            raise ValueError(f"class {self.name}: peak_rate must be >= 0")
        if self.exec_time_ideal <= 0:
            raise ValueError(f"class {self.name}: exec_time_ideal must be > 0")
        if self.threads != 1:
            raise ValueError(f"class {self.name}: only single-threaded functions are modelled")
        if self.service not in ("deterministic", "exponential"):
            raise ValueError(f"class {self.name}: service must be deterministic or exponential")

    def rate_at(self, t: float) -> float:
        """Stepwise ramp: the rate climbs by ``peak/steps`` at each whole second."""
        if t <= 0:
            return 0.0
        steps = math.ceil(self.ramp_duration)
        if t <= self.ramp_duration:
            return min(math.ceil(t), steps) * self.peak_rate / steps
        if not self.stop_after_ramp and t <= self.ramp_duration + self.hold_duration:
            return self.peak_rate
        return 0.0

    def segments(self):
        """Piecewise-constant ``(start, end, rate)`` segments of the arrival process."""
        steps = math.ceil(self.ramp_duration)
        for s in range(1, steps + 1):
            start = float(s - 1)
            end = min(float(s), self.ramp_duration)
            yield start, end, s * self.peak_rate / steps
        if not self.stop_after_ramp and self.hold_duration > 0:
            yield self.ramp_duration, self.ramp_duration + self.hold_duration, self.peak_rate

    def expected_arrivals(self) -> float:
        return sum((end - start) * rate for start, end, rate in self.segments())

    def draw_work(self, stream: Optional[RandomStream]) -> float:
        if self.service == "exponential":
            return stream.exponential(1.0 / self.exec_time_ideal)
        return self.exec_time_ideal


def generate_arrivals(spec: ClassSpec, stream: RandomStream) -> list[float]:
    """Arrival times of a non-homogeneous Poisson process, one homogeneous piece per segment."""
    times: list[float] = []
    if spec.peak_rate <= 0:
        return times
    for start, end, rate in spec.segments():
        if rate <= 0:
            continue
        t = start
        while True:
            t += stream.exponential(rate)
            if t > end:
                break
            times.append(t)
    return times


def poisson_arrivals(rate: float, count: int, stream: RandomStream, start: float = 0.0) -> list[float]:
    """``count`` arrivals of a homogeneous Poisson process."""
    times = []
    t = start
    for _ in range(count):
        t += stream.exponential(rate)
        times.append(t)
    return times


@dataclass
class OfferedLoad:
    peak_rate: float
    capacity: float

    @property
    def utilization(self) -> float:
        return self.peak_rate / self.capacity if self.capacity > 0 else math.inf


def total_offered_load(specs: Iterable[ClassSpec], hosts: int = 10, cores: int = 16) -> OfferedLoad:
    specs = list(specs)
    peak = sum(s.peak_rate for s in specs)
    if not specs:
        return OfferedLoad(0.0, 0.0)
    exec_time = sum(s.exec_time_ideal for s in specs) / len(specs)
    return OfferedLoad(peak, hosts * cores / exec_time)


def default_classes(n: int = 10, peak_rate: float = 0.0, **kwargs) -> list[ClassSpec]:
    return [ClassSpec(name=f"f{i}", peak_rate=peak_rate, **kwargs) for i in range(n)]


def load_trace(path) -> list[tuple[float, str]]:
    """Read a replay trace: one ``time_seconds,class_name`` row per arrival."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'time_seconds,class_name'")
            try:
                t = float(row[0])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: bad time {row[0]!r}") from None
            if t < 0:
                raise ValueError(f"{path}:{lineno}: negative time")
            rows.append((t, row[1].strip()))
    rows.sort(key=lambda r: r[0])
    return rows
