"""One simulation run: workload, controller, invokers and measurements wired to one engine."""

from __future__ import annotations

import json
from typing import Optional, TextIO

from .cluster import Cluster, Request
from .engine import Engine, StreamFactory
from .metrics import ContainerRecord, RunMetrics
from .queueing import ClassEstimate
from .scenario import Scenario
from .schedulers import build_scheduler
from .workload import generate_arrivals, load_trace


class JsonlTracer:
    """Writes one ``{"time", "class", "site", "phase"}`` object per line."""

    def __init__(self, fh: TextIO, class_names):
        self.fh = fh
        self.names = class_names

    def __call__(self, time, phase, site, cls, obj=None):
        name = self.names[cls] if cls is not None else None
        self.fh.write(json.dumps({"time": time, "class": name, "site": site, "phase": phase}) + "\n")


class Simulation:
    def __init__(self, scenario: Scenario, seed: int, trace: Optional[TextIO] = None,
                 max_stall: int = 10**7):
        self.scenario = scenario
        self.seed = int(seed)
        self.engine = Engine(max_stall=max_stall)
        self.streams = StreamFactory(self.seed)
        self.classes = scenario.class_specs()
        self.class_index = {c.name: i for i, c in enumerate(self.classes)}
        w = scenario.workload
        self.estimates = [
            ClassEstimate(mu_hat=1.0 / c.exec_time_ideal, setup_hat=scenario.cluster.setup_cold,
                          arrival_half_life=w.arrival_half_life, sample_half_life=w.sample_half_life)
            for c in self.classes
        ]
        self.tracer = JsonlTracer(trace, [c.name for c in self.classes]) if trace is not None else None
        self.cluster = Cluster(self.engine, scenario.cluster, tracer=self.tracer)
        for d in scenario.data:
            self.cluster.add_data(d.name, d.size, d.replicas)
        self.scheduler = build_scheduler(scenario.scheduler, self.cluster, self.classes, self.streams,
                                         self.estimates)
        self.cluster.on_complete = self._on_complete
        self.cluster.on_setup = self._on_setup
        self.requests: list[Request] = []
        self.final_time = 0.0
        self._load_arrivals()

    def _load_arrivals(self) -> None:
        arrivals = []
        trace_path = self.scenario.workload.trace
        if trace_path:
            for t, name in load_trace(trace_path):
                if name not in self.class_index:
                    raise ValueError(f"trace references unknown class {name!r}")
                arrivals.append((t, self.class_index[name]))
        else:
            for k, spec in enumerate(self.classes):
                stream = self.streams(f"arrivals:{spec.name}")
                arrivals.extend((t, k) for t in generate_arrivals(spec, stream))
        arrivals.sort()
        for t, k in arrivals:
            spec = self.classes[k]
            work = spec.draw_work(self.streams(f"service:{spec.name}"))
            req = Request(len(self.requests), k, t, work, spec.data_ops)
            self.requests.append(req)
            self.engine.schedule(t, "arrival", self._on_arrival, req)

    def _on_arrival(self, ev) -> None:
        req = ev.payload
        now = self.engine.now
        self.estimates[req.cls].observe_arrival(now)
        site = self.scheduler.dispatch(req)
        req.dispatch = now
        if self.tracer is not None:
            self.tracer(now, "dispatch", site, req.cls, req)
        self.cluster.admit(self.cluster.sites[site], req)

    def _on_complete(self, req, inst) -> None:
        self.estimates[req.cls].observe_service(req.completion - req.exec_start)
        self.scheduler.on_complete(req, inst)

    def _on_setup(self, site, cls, duration) -> None:
        self.estimates[cls].observe_setup(duration)
        observe = getattr(self.scheduler, "observe_setup", None)
        if observe is not None:
            observe(site, cls, duration)

    def run(self) -> RunMetrics:
        start = getattr(self.scheduler, "start", None)
        if start is not None:
            start()
        self.final_time = self.engine.run_until_drained()
        return self.metrics()

    def metrics(self) -> RunMetrics:
        c = self.cluster
        records = [
            ContainerRecord(i.cls, i.site.id, i.created_at, i.last_active_end, i.busy_time_total,
                            i.setup_duration, i.events_served)
            for i in c.containers
        ]
        extra = {}
        for key in ("random_fallbacks", "saturated_steps", "control_steps", "recomputes",
                    "nonconverged", "fallback_dispatches"):
            if hasattr(self.scheduler, key):
                extra[key] = getattr(self.scheduler, key)
        return RunMetrics(
            lam=self.scenario.workload.peak_rate,
            scheduler=self.scenario.scheduler.label,
            seed=self.seed,
            cold_starts=c.cold_starts,
            prewarm_starts=c.prewarm_starts,
            evictions=c.evictions,
            hosts_employed=sum(1 for s in c.sites if s.events_processed > 0),
            n_sites=len(c.sites),
            requests=self.requests,
            containers=records,
            final_time=self.final_time,
            trace_digest=self.engine.digest.hexdigest(),
            extra=extra,
        )


def run_scenario(scenario: Scenario, seed: int, trace: Optional[TextIO] = None) -> RunMetrics:
    return Simulation(scenario, seed, trace).run()
