"""Parameter sweeps over (peak rate, scheduler, seed) with crash-safe CSV output."""

from __future__ import annotations

import csv
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .metrics import SUMMARY_COLUMNS, summarize
from .scenario import EVALUATION_SCHEDULERS, Scenario
from .simulation import run_scenario

AGGREGATE_METRICS = ("cold_starts", "hosts_employed", "mean_response_s", "container_utilization",
                     "p95_response_s", "total_events")


@dataclass
class SweepSpec:
    lambda_grid: list = field(default_factory=lambda: list(range(1, 81)))
    schedulers: list = field(default_factory=lambda: list(EVALUATION_SCHEDULERS))
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    base: Scenario = field(default_factory=Scenario)

    def __post_init__(self):
        if not self.lambda_grid or not self.schedulers or not self.seeds:
            raise ValueError("sweep grid must be non-empty")

    def points(self) -> list[tuple[float, str, int]]:
        return [(float(lam), s, int(seed))
                for lam in self.lambda_grid for s in self.schedulers for seed in self.seeds]


def trace_name(lam: float, scheduler: str, seed: int) -> str:
    return f"{scheduler.replace(':', '_')}_L{_num(lam)}_s{seed}.jsonl"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def run_one(base: Scenario, lam: float, scheduler: str, seed: int,
            trace_dir: Optional[str] = None) -> dict:
    """Run one grid point.  Exceptions become an error row instead of propagating."""
    try:
        sc = base.with_overrides(scheduler=scheduler, peak_rate=lam)
        if trace_dir:
            with open(os.path.join(trace_dir, trace_name(lam, scheduler, seed)), "w") as fh:
                m = run_scenario(sc, seed, trace=fh)
        else:
            m = run_scenario(sc, seed)
        return summarize(m)
    except Exception as exc:  # a failed point must not stop the sweep
        return error_row(lam, scheduler, seed, f"{type(exc).__name__}: {exc}")


def error_row(lam: float, scheduler: str, seed: int, message: str) -> dict:
    row = {c: "" for c in SUMMARY_COLUMNS}
    row.update({"lambda": repr(float(lam)), "scheduler": scheduler, "seed": str(seed),
                "error": message.replace("\n", " ")})
    return row


def _row_key(order: dict):
    def key(row):
        return (float(row["lambda"]), order.get(row["scheduler"], len(order)), row["scheduler"],
                int(row["seed"]))
    return key


def write_rows(path: str, rows: Iterable[dict]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_sweep(spec: SweepSpec, out_path: Optional[str] = None, parallel: int = 1,
              trace_dir: Optional[str] = None,
              progress: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Run every grid point; returns rows sorted by (lambda, scheduler order, seed).

    Rows are appended to ``out_path`` as they finish and the file is rewritten
    sorted once the sweep is done, so an interrupted sweep keeps its results.
    """
    points = spec.points()
    rows = []
    fh = writer = None
    if out_path:
        fh = open(out_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        fh.flush()

    def record(row):
        rows.append(row)
        if writer is not None:
            writer.writerow(row)
            fh.flush()
        if progress is not None:
            progress(row)

    try:
        if parallel <= 1:
            for lam, s, seed in points:
                record(run_one(spec.base, lam, s, seed, trace_dir))
        else:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                futures = {pool.submit(run_one, spec.base, lam, s, seed, trace_dir): (lam, s, seed)
                           for lam, s, seed in points}
                for fut in as_completed(futures):
                    lam, s, seed = futures[fut]
                    try:
                        row = fut.result()
                    except Exception as exc:  # worker died
                        row = error_row(lam, s, seed, f"{type(exc).__name__}: {exc}")
                    record(row)
    finally:
        if fh is not None:
            fh.close()
    order = {s: i for i, s in enumerate(spec.schedulers)}
    rows.sort(key=_row_key(order))
    if out_path:
        write_rows(out_path, rows)
    return rows


def aggregate(rows: Iterable[dict], metrics=AGGREGATE_METRICS) -> list[dict]:
    """Mean and sample standard deviation over seeds per (lambda, scheduler).

    Error rows and blank cells are skipped; ``n`` counts the successful seeds.
    """
    groups: dict = {}
    order = []
    for row in rows:
        key = (float(row["lambda"]), row["scheduler"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        if not row.get("error"):
            groups[key].append(row)
    out = []
    for lam, sched in order:
        good = groups[(lam, sched)]
        agg = {"lambda": lam, "scheduler": sched, "n": len(good)}
        for m in metrics:
            vals = [float(r[m]) for r in good if r.get(m, "") != ""]
            agg[f"{m}_mean"] = statistics.fmean(vals) if vals else math.nan
            agg[f"{m}_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0 if vals else math.nan
        out.append(agg)
    return out
