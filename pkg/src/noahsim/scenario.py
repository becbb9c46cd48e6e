"""Scenario files: strict TOML with unit-suffixed durations, sizes and speeds."""

from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .cluster import ClusterConfig
from .workload import ClassSpec


class ScenarioError(ValueError):
    """Invalid scenario content; the message names the offending field or line."""


_DURATION_UNITS = {"us": 1e-6, "µs": 1e-6, "ms": 1e-3, "s": 1.0, "min": 60.0, "h": 3600.0}
_SIZE_UNITS = {"": 1.0, "B": 1.0, "KB": 1e3, "MB": 1e6, "GB": 1e9, "TB": 1e12,
               "KiB": 2**10, "MiB": 2**20, "GiB": 2**30}
_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"


def parse_duration(value) -> float:
    """Seconds from a number or a string like ``"500ms"``, ``"10us"``, ``"5min"``."""
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(_NUM + r"\s*(us|µs|ms|s|min|h)?", str(value).strip())
    if not m:
        raise ValueError(f"not a duration: {value!r}")
    return float(m.group(1)) * _DURATION_UNITS[m.group(2) or "s"]


def parse_size(value) -> float:
    """Bytes (or bytes/s) from a number or a string like ``"711MB"`` / ``"12.8GB/s"``."""
    if isinstance(value, bool):
        raise ValueError(f"not a size: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(_NUM + r"\s*([KMGT]i?B|B)?(/s)?", str(value).strip())
    if not m:
        raise ValueError(f"not a size: {value!r}")
    return float(m.group(1)) * _SIZE_UNITS[m.group(2) or ""]


def format_duration(seconds: float) -> str:
    for unit, scale in (("min", 60.0), ("s", 1.0), ("ms", 1e-3), ("us", 1e-6)):
        v = seconds / scale
        if v >= 1 and abs(v - round(v)) < 1e-9 * max(1.0, v):
            return f"{int(round(v))}{unit}"
    return repr(seconds)


@dataclass
class SchedulerConfig:
    name: str = "ow"
    # ow
    busy_threshold: int = 16
    max_multiplier: int = 3
    # noncoop
    epsilon: float = 1e-6
    max_rounds: int = 200
    recompute_period: float = 1.0
    change_trigger: float = 0.1
    # noah
    alpha: float = 0.01
    control_period: float = 0.1
    c_min: int = 0
    spawn_slack: int = 2
    site_cap: Optional[int] = None
    max_active: Optional[int] = None
    placement: str = "best_fit"

    @property
    def label(self) -> str:
        if self.name == "noah":
            return f"noah:{format_duration(self.alpha)}"
        return self.name


SCHEDULERS = ("ow", "noncoop", "noah")
EVALUATION_SCHEDULERS = ("ow", "noncoop", "noah:10ms", "noah:1ms", "noah:100us", "noah:10us")


def parse_scheduler(spec: str, base: Optional[SchedulerConfig] = None) -> SchedulerConfig:
    """``"ow"``, ``"noncoop"`` or ``"noah:<alpha>"`` on top of ``base``."""
    cfg = copy.deepcopy(base) if base is not None else SchedulerConfig()
    name, _, arg = spec.strip().partition(":")
    if name not in SCHEDULERS:
        raise ScenarioError(f"unknown scheduler {name!r}; expected one of {SCHEDULERS}")
    cfg.name = name
    if arg:
        if name != "noah":
            raise ScenarioError(f"scheduler {name!r} takes no parameter")
        cfg.alpha = parse_duration(arg)
    return cfg


@dataclass
class WorkloadConfig:
    classes: int = 10
    name_prefix: str = "f"
    peak_rate: float = 20.0
    exec_time: float = 0.2
    ramp_duration: float = 20.0
    stop_after_ramp: bool = True
    hold_duration: float = 0.0
    service: str = "deterministic"
    trace: Optional[str] = None
    arrival_half_life: float = 2.0
    sample_half_life: float = 10.0


@dataclass
class DataSpec:
    name: str
    size: float
    replicas: list = field(default_factory=list)


@dataclass
class RunConfig:
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    output_dir: Optional[str] = None
    trace: bool = False


@dataclass
class Scenario:
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    classes: list = field(default_factory=list)  # explicit ClassSpec entries; empty = generated
    data: list = field(default_factory=list)
    run: RunConfig = field(default_factory=RunConfig)

    def class_specs(self) -> list[ClassSpec]:
        w = self.workload
        if self.classes:
            return [copy.deepcopy(c) for c in self.classes]
        return [
            ClassSpec(
                name=f"{w.name_prefix}{i}", peak_rate=w.peak_rate, exec_time_ideal=w.exec_time,
                ramp_duration=w.ramp_duration, stop_after_ramp=w.stop_after_ramp,
                hold_duration=w.hold_duration, service=w.service,
            )
            for i in range(w.classes)
        ]

    def with_overrides(self, scheduler: Optional[str] = None, peak_rate: Optional[float] = None,
                       seed: Optional[int] = None) -> "Scenario":
        sc = copy.deepcopy(self)
        if scheduler is not None:
            sc.scheduler = parse_scheduler(scheduler, sc.scheduler)
        if peak_rate is not None:
            sc.workload.peak_rate = float(peak_rate)
            for c in sc.classes:
                c.peak_rate = float(peak_rate)
        if seed is not None:
            sc.run.seeds = [int(seed)]
        return sc

    def to_dict(self) -> dict:
        return scenario_to_dict(self)

    def digest(self) -> str:
        """SHA-256 of the effective configuration; where results are written is not part of it."""
        doc = self.to_dict()
        doc["run"].pop("output_dir", None)
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# -- parsing -----------------------------------------------------------------

_DURATION_FIELDS = {
    "cluster": {"holding_time", "setup_cold", "setup_prewarm"},
    "scheduler": {"alpha", "recompute_period", "control_period"},
    "workload": {"exec_time", "ramp_duration", "hold_duration", "arrival_half_life"},
    "class": {"exec_time_ideal", "ramp_duration", "hold_duration", "alpha"},
}
_SIZE_FIELDS = {
    "cluster": {"mem_capacity", "disk_speed", "net_speed", "mem_speed", "code_size", "instance_memory"},
    "data": {"size"},
}


def _coerce(section: str, key: str, value, ftype):
    if value is None:
        return None
    if key in _DURATION_FIELDS.get(section, ()):
        return parse_duration(value)
    if key in _SIZE_FIELDS.get(section, ()):
        return parse_size(value)
    t = str(ftype)
    if t.startswith("bool"):
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {value!r}")
        return value
    if t.startswith("int") or t == "Optional[int]":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if t.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    return value


def _build(cls, section: str, table: dict, path: str):
    if not isinstance(table, dict):
        raise ScenarioError(f"{path}: expected a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in table.items():
        if key not in known:
            raise ScenarioError(f"{path}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
        try:
            kwargs[key] = _coerce(section, key, value, known[key].type)
        except ValueError as exc:
            raise ScenarioError(f"{path}.{key}: {exc}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def scenario_from_dict(doc: dict) -> Scenario:
    allowed = {"cluster", "scheduler", "workload", "class", "data", "run"}
    for key in doc:
        if key not in allowed:
            raise ScenarioError(f"{key}: unknown section (allowed: {', '.join(sorted(allowed))})")
    sc = Scenario(
        cluster=_build(ClusterConfig, "cluster", doc.get("cluster", {}), "cluster"),
        scheduler=_build(SchedulerConfig, "scheduler", doc.get("scheduler", {}), "scheduler"),
        workload=_build(WorkloadConfig, "workload", doc.get("workload", {}), "workload"),
        run=_build(RunConfig, "run", doc.get("run", {}), "run"),
    )
    if sc.scheduler.name not in SCHEDULERS:
        raise ScenarioError(f"scheduler.name: unknown scheduler {sc.scheduler.name!r}")
    if sc.scheduler.placement not in ("best_fit", "most_free"):
        raise ScenarioError("scheduler.placement: expected 'best_fit' or 'most_free'")
    w = sc.workload
    for n, entry in enumerate(doc.get("class", [])):
        path = f"class[{n}]"
        if not isinstance(entry, dict) or "name" not in entry:
            raise ScenarioError(f"{path}.name: required")
        merged = {
            "peak_rate": w.peak_rate, "exec_time_ideal": w.exec_time, "ramp_duration": w.ramp_duration,
            "stop_after_ramp": w.stop_after_ramp, "hold_duration": w.hold_duration, "service": w.service,
        }
        merged.update(entry)
        spec = _build(ClassSpec, "class", merged, path)
        spec.data_ops = [tuple(op) for op in spec.data_ops]
        for op in spec.data_ops:
            if len(op) != 2 or op[1] not in ("read", "write"):
                raise ScenarioError(f"{path}.data_ops: entries are [item, 'read'|'write']")
        sc.classes.append(spec)
    names = [c.name for c in sc.classes]
    if len(set(names)) != len(names):
        raise ScenarioError("class: duplicate class names")
    for n, entry in enumerate(doc.get("data", [])):
        d = _build(DataSpec, "data", entry, f"data[{n}]")
        d.replicas = [tuple(r) for r in d.replicas]
        for sid, tier in d.replicas:
            if not (0 <= int(sid) < sc.cluster.hosts) or tier not in ("disk", "memory"):
                raise ScenarioError(f"data[{n}].replicas: bad replica {[sid, tier]!r}")
        sc.data.append(d)
    known_items = {d.name for d in sc.data}
    for c in sc.classes:
        for item, _ in c.data_ops:
            if item not in known_items:
                raise ScenarioError(f"class {c.name}: unknown data item {item!r}")
    if not sc.run.seeds:
        raise ScenarioError("run.seeds: at least one seed required")
    return sc


def loads(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    return scenario_from_dict(doc)


def load(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from None
    try:
        return loads(text)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _plain(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, list):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    doc: dict[str, Any] = {
        "cluster": _plain(sc.cluster),
        "scheduler": _plain(sc.scheduler),
        "workload": _plain(sc.workload),
        "run": _plain(sc.run),
    }
    if sc.classes:
        doc["class"] = [_plain(c) for c in sc.classes]
    if sc.data:
        doc["data"] = [_plain(d) for d in sc.data]
    return doc


def dumps(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))


def dump(sc: Scenario, path) -> None:
    Path(path).write_text(dumps(sc))


def evaluation_scenario(**workload) -> Scenario:
    """Ten homogeneous 16-core hosts, ten 200 ms functions, 20 s ramp, 500 ms cold setup."""
    sc = Scenario()
    for k, v in workload.items():
        setattr(sc.workload, k, v)
    return sc
