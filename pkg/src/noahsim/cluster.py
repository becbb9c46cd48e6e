"""Sites, processor-sharing execution, container lifecycle and named-data replicas.

Processor sharing is tracked with a per-site virtual clock ``V``: every
active task progresses at ``rate = min(1, cores / n)`` so ``dV/dt = rate``.
A task that starts at virtual time ``V0`` with ``w`` seconds of ideal work
finishes when ``V`` reaches ``V0 + w``.  Only the earliest finishing tag
needs a calendar entry, which is rescheduled whenever ``n`` changes.
"""

from __future__ import annotations

import heapq
import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .engine import Engine, SimulationError

log = logging.getLogger(__name__)

MB = 1e6
GB = 1e9

COLD_STARTING = "cold_starting"
INITIALIZING = "initializing"
WARM_IDLE = "warm_idle"
ACTIVE = "active"

RUN_NOW = "run_now"
ENQUEUE = "enqueue"
SPAWN = "spawn"

_EPS_WORK = 1e-12


@dataclass
class ClusterConfig:
    hosts: int = 10
    cores: int = 16
    mem_capacity: float = 128 * GB
    disk_speed: float = 711 * MB
    net_speed: float = 1135 * MB
    mem_speed: float = 12.8 * GB
    container_cap: int = 32
    holding_time: float = 300.0
    setup_cold: float = 0.5
    setup_prewarm: float = 0.05
    prewarm_pool: int = 0
    code_size: float = 0.0
    instance_memory: float = 256 * MB
    setup_consumes_core: bool = False


class Request:
    """One function invocation travelling through the platform."""

    __slots__ = (
        "id", "cls", "arrival", "work", "data_ops", "dispatch", "site", "exec_start",
        "completion", "cold", "access_latency", "trace_tag", "_ops_left", "_instance",
    )

    def __init__(self, rid: int, cls: int, arrival: float, work: float, data_ops=()):
        self.id = rid
        self.cls = cls
        self.arrival = arrival
        self.work = work
        self.data_ops = tuple(data_ops)
        self.dispatch: Optional[float] = None
        self.site: Optional[int] = None
        self.exec_start: Optional[float] = None
        self.completion: Optional[float] = None
        self.cold = False
        self.access_latency = 0.0
        self.trace_tag = f"r{rid}"
        self._ops_left = None
        self._instance = None

    @property
    def response_time(self) -> Optional[float]:
        if self.completion is None:
            return None
        return self.completion - self.arrival


class ContainerInstance:
    __slots__ = (
        "id", "cls", "site", "state", "created_at", "ready_at", "last_active_end",
        "busy_time_total", "busy_since", "request", "task", "idle_timer", "setup_duration",
        "evicted_at", "events_served", "trace_tag", "prewarmed",
    )

    def __init__(self, iid: int, cls: Optional[int], site: "Site", now: float):
        self.id = iid
        self.cls = cls
        self.site = site
        self.state = COLD_STARTING
        self.created_at = now
        self.ready_at: Optional[float] = None
        self.last_active_end = now
        self.busy_time_total = 0.0
        self.busy_since: Optional[float] = None
        self.request: Optional[Request] = None
        self.task = None
        self.idle_timer = None
        self.setup_duration = 0.0
        self.evicted_at: Optional[float] = None
        self.events_served = 0
        self.trace_tag = f"c{iid}"
        self.prewarmed = False

    @property
    def remaining_work(self) -> float:
        if self.state != ACTIVE or self.task is None:
            return 0.0
        return self.site.ps.remaining(self.task)


class _Task:
    __slots__ = ("tag", "seq", "start_v", "callback", "done")

    def __init__(self, tag, seq, start_v, callback):
        self.tag = tag
        self.seq = seq
        self.start_v = start_v
        self.callback = callback
        self.done = False


class ProcessorSharing:
    """Egalitarian processor sharing over ``cores`` for one site."""

    def __init__(self, engine: Engine, cores: int, owner=None):
        self.engine = engine
        self.cores = cores
        self.owner = owner
        self.v = 0.0
        self.t_last = 0.0
        self.rate = 1.0
        self.n_tasks = 0
        self.n_extra = 0
        self._heap: list = []
        self._seq = 0
        self._next = None
        self._batch = False
        self.work_done = 0.0

    @property
    def n_active(self) -> int:
        return self.n_tasks + self.n_extra

    def share_rate(self, n: Optional[int] = None) -> float:
        n = self.n_active if n is None else n
        if n <= self.cores:
            return 1.0
        return self.cores / n

    def _advance(self) -> None:
        now = self.engine.now
        if now > self.t_last:
            dv = self.rate * (now - self.t_last)
            self.v += dv
            self.work_done += dv * self.n_tasks
            self.t_last = now

    def _reschedule(self) -> None:
        if self._batch:
            return
        self.rate = self.share_rate()
        self.engine.cancel(self._next)
        self._next = None
        heap = self._heap
        while heap and heap[0][2].done:
            heapq.heappop(heap)
        if heap:
            tag = heap[0][0]
            delay = max(0.0, (tag - self.v) / self.rate)
            self._next = self.engine.after(delay, "exec_progress", self._on_progress, self.owner)

    def add_task(self, work: float, callback: Callable[[], None]) -> _Task:
        self._advance()
        task = _Task(self.v + work, self._seq, self.v, callback)
        self._seq += 1
        heapq.heappush(self._heap, (task.tag, task.seq, task))
        self.n_tasks += 1
        self._reschedule()
        return task

    def remaining(self, task: _Task) -> float:
        self._advance()
        return max(0.0, task.tag - self.v)

    def add_occupancy(self, delta: int) -> None:
        """Extra load (e.g. a data transfer) that takes a share but completes on its own timer."""
        self._advance()
        self.n_extra += delta
        if self.n_extra < 0:
            raise SimulationError("negative transfer occupancy")
        self._reschedule()

    def _on_progress(self, ev) -> None:
        self._next = None
        self._advance()
        heap = self._heap
        while heap and heap[0][2].done:
            heapq.heappop(heap)
        finished = []
        if heap:
            # the event was scheduled for the head task; finish it even if float
            # rounding left it a hair short, otherwise the clock could stall
            tag, _, task = heapq.heappop(heap)
            if tag > self.v:
                self.v = tag
            task.done = True
            finished.append(task)
        while heap and heap[0][0] <= self.v + _EPS_WORK:
            _, _, task = heapq.heappop(heap)
            if task.done:
                continue
            task.done = True
            finished.append(task)
        self.n_tasks -= len(finished)
        # callbacks usually start the next task; reschedule once afterwards
        self._batch = True
        try:
            for task in finished:
                task.callback()
        finally:
            self._batch = False
        self._reschedule()


@dataclass
class DataItem:
    name: str
    size: float
    replicas: dict = field(default_factory=dict)  # (site_id, tier) -> concurrent readers

    def add_replica(self, site_id: int, tier: str) -> None:
        self.replicas.setdefault((site_id, tier), 0)


class Site:
    def __init__(self, sid: int, config: ClusterConfig, engine: Engine):
        self.id = sid
        self.cores = config.cores
        self.mem_capacity = config.mem_capacity
        self.disk_speed = config.disk_speed
        self.net_speed = config.net_speed
        self.mem_speed = config.mem_speed
        self.container_cap = config.container_cap
        self.pool: dict[int, ContainerInstance] = {}
        self.queues: dict[int, deque] = {}
        self.idle_lru: "OrderedDict[int, ContainerInstance]" = OrderedDict()
        self.idle_by_class: dict = {}
        self.n_bound = 0  # instances holding a request (setting up or active)
        self.busy_count = 0  # instances in state active
        self.unfinished = 0  # accepted and not completed (queued + setup + executing)
        self.unfinished_by_class: dict[int, int] = {}
        self.bound_by_class: dict[int, int] = {}
        self.instances_by_class: dict[int, int] = {}
        self.mem_used = 0.0
        self.mem_cache: "OrderedDict[str, float]" = OrderedDict()
        self.code_loaded: set = set()
        self.events_processed = 0
        self.trace_tag = f"s{sid}"
        self.ps = ProcessorSharing(engine, config.cores, self)

    def __repr__(self):
        return f"Site({self.id}, pool={len(self.pool)}, bound={self.n_bound}, queued={self.queued})"

    @property
    def queued(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def queue_len(self, cls: int) -> int:
        q = self.queues.get(cls)
        return len(q) if q else 0

    def idle_count(self, cls) -> int:
        lst = self.idle_by_class.get(cls)
        return len(lst) if lst else 0

    def instance_count(self, cls: int) -> int:
        return self.instances_by_class.get(cls, 0)

    def bound_count(self, cls: int) -> int:
        return self.bound_by_class.get(cls, 0)

    def unfinished_count(self, cls: int) -> int:
        return self.unfinished_by_class.get(cls, 0)

    def active_instances(self, cls: int):
        return [i for i in self.pool.values() if i.cls == cls and i.request is not None]

    def processor_share_rates(self) -> dict:
        rate = self.ps.share_rate()
        return {i.id: rate for i in self.pool.values() if i.state == ACTIVE}


class InvokerPolicy:
    """Greedy invoker used by the OpenWhisk-style and noncooperative controllers.

    Reuse a warm instance when one is idle and nobody of the class is
    waiting, otherwise start a new container (evicting the least recently
    used idle one if the pool is full), otherwise queue.
    """

    max_active: Optional[int] = None

    def decide(self, cluster: "Cluster", site: Site, req: Request) -> str:
        if site.queue_len(req.cls) == 0 and site.idle_count(req.cls) > 0:
            return RUN_NOW
        if site.queue_len(req.cls) == 0 and cluster.can_spawn(site):
            return SPAWN
        return ENQUEUE

    def spawn_for_queued(self, cluster: "Cluster", site: Site, cls: int) -> bool:
        return True


class Cluster:
    """The pool of sites plus the container and data machinery shared by all schedulers."""

    def __init__(self, engine: Engine, config: ClusterConfig, metrics=None,
                 policy: Optional[InvokerPolicy] = None, tracer=None):
        self.engine = engine
        self.config = config
        self.sites = [Site(i, config, engine) for i in range(config.hosts)]
        self.policy = policy or InvokerPolicy()
        self.metrics = metrics
        self.tracer = tracer
        self.data: dict[str, DataItem] = {}
        self._iid = 0
        self.containers: list[ContainerInstance] = []
        self.cold_starts = 0
        self.prewarm_starts = 0
        self.evictions = 0
        self.on_complete: Optional[Callable[[Request, ContainerInstance], None]] = None
        self.on_setup: Optional[Callable[[Site, int, float], None]] = None
        for site in self.sites:
            for _ in range(config.prewarm_pool):
                self._create_stem(site, immediate=True)

    # -- bookkeeping -------------------------------------------------------

    def _trace(self, phase: str, site: Site, cls, obj=None) -> None:
        if self.tracer is not None:
            self.tracer(self.engine.now, phase, site.id, cls, obj)

    def _bind(self, site: Site, inst: ContainerInstance, req: Request) -> None:
        inst.request = req
        req._instance = inst
        site.n_bound += 1
        site.bound_by_class[inst.cls] = site.bound_by_class.get(inst.cls, 0) + 1

    def _unbind(self, site: Site, inst: ContainerInstance) -> None:
        inst.request = None
        site.n_bound -= 1
        site.bound_by_class[inst.cls] -= 1

    def _make_idle(self, site: Site, inst: ContainerInstance) -> None:
        inst.state = WARM_IDLE
        site.idle_lru[inst.id] = inst
        site.idle_by_class.setdefault(inst.cls, []).append(inst)
        if self.config.holding_time is not None and self.config.holding_time < float("inf"):
            inst.idle_timer = self.engine.after(
                self.config.holding_time, "timer", self._on_idle_timeout, inst, daemon=True
            )

    def _take_idle(self, site: Site, inst: ContainerInstance) -> None:
        del site.idle_lru[inst.id]
        site.idle_by_class[inst.cls].remove(inst)
        self.engine.cancel(inst.idle_timer)
        inst.idle_timer = None

    def headroom(self, site: Site) -> bool:
        limit = self.policy.max_active
        return limit is None or site.n_bound < limit

    # -- capacity ----------------------------------------------------------

    def _has_stem(self, site: Site) -> bool:
        return self.config.prewarm_pool > 0 and site.idle_count(None) > 0

    def can_spawn(self, site: Site) -> bool:
        if self._has_stem(site):
            return True
        if len(site.pool) < site.container_cap and self._mem_fits(site, self.config.instance_memory):
            return True
        return len(site.idle_lru) > 0

    def _mem_fits(self, site: Site, need: float) -> bool:
        return site.mem_used + need <= site.mem_capacity

    def evict_idle(self, site: Site) -> Optional[ContainerInstance]:
        """Remove the least recently used warm idle instance, if any."""
        if not site.idle_lru:
            return None
        _, inst = next(iter(site.idle_lru.items()))
        self._remove(site, inst)
        self.evictions += 1
        return inst

    def _remove(self, site: Site, inst: ContainerInstance) -> None:
        self._take_idle(site, inst)
        del site.pool[inst.id]
        if inst.cls is not None:
            site.instances_by_class[inst.cls] -= 1
        site.mem_used -= self.config.instance_memory
        inst.evicted_at = self.engine.now
        self._trace("evict", site, inst.cls, inst)

    def _on_idle_timeout(self, ev) -> None:
        inst = ev.payload
        inst.idle_timer = None
        if inst.state == WARM_IDLE and inst.evicted_at is None:
            self._remove(inst.site, inst)

    def _free_slot(self, site: Site) -> bool:
        mem = self.config.instance_memory
        while len(site.pool) >= site.container_cap or not self._mem_fits(site, mem):
            if not self._mem_fits(site, mem) and self._evict_cache(site, mem):
                continue
            if self.evict_idle(site) is None:
                return False
        return True

    # -- lifecycle ---------------------------------------------------------

    def _new_instance(self, site: Site, cls) -> ContainerInstance:
        inst = ContainerInstance(self._iid, cls, site, self.engine.now)
        self._iid += 1
        site.pool[inst.id] = inst
        site.mem_used += self.config.instance_memory
        if cls is not None:
            site.instances_by_class[cls] = site.instances_by_class.get(cls, 0) + 1
        return inst

    def _create_stem(self, site: Site, immediate: bool = False) -> None:
        if len(site.pool) >= site.container_cap or not self._mem_fits(site, self.config.instance_memory):
            return
        inst = self._new_instance(site, None)
        if immediate:
            inst.ready_at = self.engine.now
            self._make_idle(site, inst)
        else:
            self.engine.after(self.config.setup_cold, "setup_done", self._on_stem_ready, inst, daemon=True)

    def _on_stem_ready(self, ev) -> None:
        inst = ev.payload
        inst.ready_at = self.engine.now
        self._make_idle(inst.site, inst)

    def spawn(self, site: Site, cls: int, req: Optional[Request] = None) -> Optional[ContainerInstance]:
        """Start a container for ``cls``; returns ``None`` when no slot can be freed."""
        cfg = self.config
        now = self.engine.now
        if self._has_stem(site):
            stem = site.idle_by_class[None][-1]
            self._take_idle(site, stem)
            stem.cls = cls
            site.instances_by_class[cls] = site.instances_by_class.get(cls, 0) + 1
            stem.state = INITIALIZING
            stem.prewarmed = True
            # containers are only charged from the moment they serve a class
            stem.created_at = now
            stem.last_active_end = now
            inst = stem
            delay = cfg.setup_prewarm
            self.prewarm_starts += 1
            self._create_stem(site)
        else:
            if not self._free_slot(site):
                return None
            inst = self._new_instance(site, cls)
            delay = cfg.setup_cold
            if cls not in site.code_loaded and cfg.code_size > 0:
                delay += cfg.code_size / site.net_speed
            self.cold_starts += 1
        site.code_loaded.add(cls)
        inst.setup_duration = delay
        self.containers.append(inst)
        if req is not None:
            self._bind(site, inst, req)
            req.cold = True
        self._trace("setup_start", site, cls, inst)
        if cfg.setup_consumes_core and delay > 0:
            site.ps.add_task(delay, lambda: self._setup_done(inst))
        else:
            self.engine.after(delay, "setup_done", self._on_setup_event, inst)
        return inst

    def _on_setup_event(self, ev) -> None:
        self._setup_done(ev.payload)

    def _setup_done(self, inst: ContainerInstance) -> None:
        site = inst.site
        now = self.engine.now
        inst.ready_at = now
        inst.setup_duration = now - inst.created_at
        if self.on_setup is not None and inst.setup_duration > 0:
            self.on_setup(site, inst.cls, inst.setup_duration)
        req = inst.request
        if req is not None:
            self._begin(site, inst, req)
        else:
            self._make_idle(site, inst)
            self.pump(site)

    def admit(self, site: Site, req: Request) -> str:
        """Accept a dispatched request at ``site``: returns started, spawned or queued."""
        req.site = site.id
        site.unfinished += 1
        site.unfinished_by_class[req.cls] = site.unfinished_by_class.get(req.cls, 0) + 1
        decision = self.policy.decide(self, site, req)
        if decision == RUN_NOW:
            self.start_on_idle(site, req)
            return "started"
        if decision == SPAWN and self.spawn(site, req.cls, req) is not None:
            return "spawned"
        site.queues.setdefault(req.cls, deque()).append(req)
        self._trace("queued", site, req.cls, req)
        return "queued"

    def start_on_idle(self, site: Site, req: Request) -> None:
        # most recently used first; the LRU end ages out
        inst = site.idle_by_class[req.cls][-1]
        self._take_idle(site, inst)
        self._bind(site, inst, req)
        self._begin(site, inst, req)

    def _begin(self, site: Site, inst: ContainerInstance, req: Request) -> None:
        now = self.engine.now
        inst.state = ACTIVE
        inst.busy_since = now
        site.busy_count += 1
        req.exec_start = now
        self._trace("start", site, req.cls, req)
        if req.data_ops:
            req._ops_left = list(req.data_ops)
            self._next_data_op(site, inst, req)
        else:
            inst.task = site.ps.add_task(req.work, lambda: self._complete(site, inst))

    def _next_data_op(self, site: Site, inst: ContainerInstance, req: Request) -> None:
        if not req._ops_left:
            inst.task = site.ps.add_task(req.work, lambda: self._complete(site, inst))
            return
        name, op = req._ops_left.pop(0)
        if op == "write":
            latency, source = self.write_data(site, name), None
        else:
            latency, source = self.read_data(site, name, with_source=True)
        req.access_latency += latency
        endpoints = []
        if source is not None and source[0] != site.id:
            endpoints = [self.sites[source[0]], site]
        elif source is not None and source[1] == "disk":
            endpoints = [site]
        for s in endpoints:
            s.ps.add_occupancy(+1)
        item = self.data[name]
        if source is not None:
            item.replicas[source] = item.replicas.get(source, 0) + 1

        def done(ev, endpoints=endpoints, source=source, item=item):
            for s in endpoints:
                s.ps.add_occupancy(-1)
            if source is not None and source in item.replicas:
                item.replicas[source] -= 1
            self._next_data_op(site, inst, req)

        self.engine.after(latency, "transfer_done", done, req)

    def _complete(self, site: Site, inst: ContainerInstance) -> None:
        now = self.engine.now
        req = inst.request
        req.completion = now
        inst.task = None
        inst.busy_time_total += now - inst.busy_since
        inst.busy_since = None
        inst.last_active_end = now
        inst.events_served += 1
        site.busy_count -= 1
        site.unfinished -= 1
        site.unfinished_by_class[req.cls] -= 1
        site.events_processed += 1
        self._unbind(site, inst)
        self._trace("complete", site, req.cls, req)
        if self.on_complete is not None:
            self.on_complete(req, inst)
        q = site.queues.get(inst.cls)
        if q and self.headroom(site):
            nxt = q.popleft()
            self._bind(site, inst, nxt)
            self._begin(site, inst, nxt)
        else:
            self._make_idle(site, inst)
        self.pump(site)

    def pump(self, site: Site) -> None:
        """Serve waiting requests while the site has headroom, oldest head first."""
        while True:
            if not self.headroom(site):
                return
            heads = sorted((q[0].id, cls) for cls, q in site.queues.items() if q)
            progressed = False
            for _, cls in heads:
                if not self.headroom(site):
                    return
                q = site.queues[cls]
                if site.idle_count(cls) > 0:
                    self.start_on_idle(site, q.popleft())
                    progressed = True
                    break
                if self.policy.spawn_for_queued(self, site, cls) and self.can_spawn(site):
                    req = q[0]
                    if self.spawn(site, cls, req) is not None:
                        q.popleft()
                        progressed = True
                        break
            if not progressed:
                return

    # -- data --------------------------------------------------------------

    def add_data(self, name: str, size: float, replicas) -> DataItem:
        item = DataItem(name, float(size))
        for sid, tier in replicas:
            if tier not in ("disk", "memory"):
                raise ValueError(f"unknown tier {tier!r}")
            item.add_replica(int(sid), tier)
            if tier == "memory":
                site = self.sites[int(sid)]
                site.mem_cache[name] = item.size
                site.mem_used += item.size
        self.data[name] = item
        return item

    def _tier_speed(self, site: Site, tier: str) -> float:
        return site.mem_speed if tier == "memory" else site.disk_speed

    def choose_source(self, site: Site, item: DataItem):
        if (site.id, "memory") in item.replicas:
            return (site.id, "memory")
        if not item.replicas:
            raise SimulationError(f"data item {item.name!r} has no replica")
        # least loaded copy; ties prefer local, then memory, then lowest site id
        return min(
            item.replicas,
            key=lambda r: (item.replicas[r], r[0] != site.id, r[1] != "memory", r[0]),
        )

    def read_data(self, site: Site, name: str, with_source: bool = False):
        """Access latency for reading ``name`` at ``site``; installs a local memory copy."""
        item = self.data.get(name)
        if item is None:
            raise SimulationError(f"unknown data item {name!r}")
        src = self.choose_source(site, item)
        src_site = self.sites[src[0]]
        if src == (site.id, "memory"):
            latency = item.size / site.mem_speed
            site.mem_cache.move_to_end(name)
        else:
            speed = min(self._tier_speed(src_site, src[1]), site.mem_speed)
            if src[0] != site.id:
                speed = min(speed, site.net_speed, src_site.net_speed)
            latency = item.size / speed
            self._install(site, item)
        return (latency, src) if with_source else latency

    def write_data(self, site: Site, name: str) -> float:
        item = self.data.get(name)
        if item is None:
            raise SimulationError(f"unknown data item {name!r}")
        for key in [k for k in item.replicas if k[1] == "memory" and k[0] != site.id]:
            other = self.sites[key[0]]
            del item.replicas[key]
            other.mem_used -= other.mem_cache.pop(name)
        self._install(site, item)
        return item.size / site.mem_speed

    def _install(self, site: Site, item: DataItem) -> None:
        if (site.id, "memory") in item.replicas:
            site.mem_cache.move_to_end(item.name)
            return
        if item.size > site.mem_capacity:
            return
        while not self._mem_fits(site, item.size):
            if not self._evict_cache(site, item.size, keep=item.name):
                return
        item.replicas[(site.id, "memory")] = 0
        site.mem_cache[item.name] = item.size
        site.mem_used += item.size

    def _evict_cache(self, site: Site, need: float, keep: Optional[str] = None) -> bool:
        """Drop least recently used cached items that have another replica elsewhere."""
        for name in list(site.mem_cache):
            if name == keep:
                continue
            item = self.data[name]
            key = (site.id, "memory")
            if len(item.replicas) <= 1 or item.replicas.get(key, 0) > 0:
                continue
            del item.replicas[key]
            site.mem_used -= site.mem_cache.pop(name)
            return True
        return False
