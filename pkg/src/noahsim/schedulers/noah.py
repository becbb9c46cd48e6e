"""NOAH: per-class Erlang-C allocation control with colocating placement.

Allocations are virtual.  A control loop sizes each class to keep its
expected M/M/c queueing delay below ``alpha`` and places the resulting
instance budget on sites; containers are only ever started by the site
admission policy, which queues an event unless waiting for a busy instance
is expected to take longer than starting a new one.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

from ..cluster import ENQUEUE, RUN_NOW, SPAWN, InvokerPolicy
from ..queueing import ClassEstimate, min_instances


class AllocationTable:
    """Allocation counts ``c[i][k]`` of class ``k`` on site ``i`` with per-site capacity."""

    def __init__(self, n_sites: int, n_classes: int, site_cap, placement: str = "best_fit"):
        if isinstance(site_cap, int):
            site_cap = [site_cap] * n_sites
        self.site_cap = list(site_cap)
        self.n_sites = n_sites
        self.n_classes = n_classes
        self.c = [[0] * n_classes for _ in range(n_sites)]
        self.target = [0] * n_classes
        self._used = [0] * n_sites
        if placement not in ("best_fit", "most_free"):
            raise ValueError(f"unknown placement {placement!r}")
        self.placement = placement

    def total(self, k: int) -> int:
        return sum(row[k] for row in self.c)

    def used(self, i: int) -> int:
        return self._used[i]

    def free(self, i: int) -> int:
        return self.site_cap[i] - self._used[i]

    def free_total(self) -> int:
        return sum(self.site_cap) - sum(self._used)

    def sites_of(self, k: int) -> list[int]:
        return [i for i in range(self.n_sites) if self.c[i][k] > 0]

    def _add(self, i: int, k: int, n: int) -> None:
        self.c[i][k] += n
        self._used[i] += n

    def scale_out(self, k: int, delta: int) -> tuple[list, int]:
        """Place ``delta`` more allocations of ``k``; returns ``(placements, shortfall)``.

        Sites already holding ``k`` are filled first (largest holding first).
        Any remainder opens as few new sites as possible: a site that fits the
        whole remainder is taken tightest-first ("best_fit"), otherwise the
        site with the most free capacity.  Ties go to the lowest site id.
        """
        if delta < 1:
            raise ValueError("delta must be >= 1")
        placements = []
        remaining = delta
        held = sorted(self.sites_of(k), key=lambda i: (-self.c[i][k], i))
        for i in held:
            n = min(self.free(i), remaining)
            if n > 0:
                self._add(i, k, n)
                placements.append((i, n))
                remaining -= n
            if remaining == 0:
                break
        while remaining > 0:
            fresh = [i for i in range(self.n_sites) if self.c[i][k] == 0 and self.free(i) > 0]
            if not fresh:
                break
            fits = [i for i in fresh if self.free(i) >= remaining]
            if self.placement == "best_fit" and fits:
                i = min(fits, key=lambda j: (self.free(j), j))
            else:
                i = min(fresh, key=lambda j: (-self.free(j), j))
            n = min(self.free(i), remaining)
            self._add(i, k, n)
            placements.append((i, n))
            remaining -= n
        self.target[k] = self.total(k)
        return placements, remaining

    def scale_in(self, k: int, delta: int) -> list:
        """Remove ``delta`` allocations of ``k``, always from its smallest holding (ties: highest id)."""
        if delta > self.total(k):
            raise ValueError("cannot remove more allocations than held")
        removed = []
        for _ in range(delta):
            i = min(self.sites_of(k), key=lambda j: (self.c[j][k], -j))
            self._add(i, k, -1)
            removed.append(i)
        self.target[k] = self.total(k)
        return removed

    def check(self) -> None:
        for k in range(self.n_classes):
            if self.total(k) != self.target[k]:
                raise AssertionError(f"class {k}: placed {self.total(k)} != target {self.target[k]}")
        for i in range(self.n_sites):
            s = sum(self.c[i])
            if s != self._used[i] or s > self.site_cap[i] or min(self.c[i]) < 0:
                raise AssertionError(f"site {i}: allocations {self.c[i]} exceed cap {self.site_cap[i]}")


class NoahSitePolicy(InvokerPolicy):
    """Per-site admission: run on an idle instance, queue, or start a container."""

    def __init__(self, sched: "NoahScheduler", max_active: int):
        self.sched = sched
        self.max_active = max_active

    def decide(self, cluster, site, req) -> str:
        k = req.cls
        if not cluster.headroom(site):
            return ENQUEUE
        if site.queue_len(k) == 0 and site.idle_count(k) > 0:
            return RUN_NOW
        if site.idle_count(k) > 0:
            return ENQUEUE
        if self._wants_spawn(cluster, site, k, ahead=site.queue_len(k)):
            return SPAWN
        return ENQUEUE

    def spawn_for_queued(self, cluster, site, k) -> bool:
        return self._wants_spawn(cluster, site, k, ahead=0)

    def _wants_spawn(self, cluster, site, k, ahead: int) -> bool:
        if site.instance_count(k) >= self.sched.table.c[site.id][k] + self.sched.spawn_slack:
            return False
        if not cluster.can_spawn(site):
            return False
        return self.sched.estimated_wait(site, k, ahead) > self.sched.setup_estimate(site, k)


class NoahScheduler:
    name = "noah"

    def __init__(self, cluster, classes, streams, estimates: list[ClassEstimate], alpha: float = 0.01,
                 control_period: float = 0.1, c_min: int = 0, spawn_slack: int = 2,
                 site_cap: Optional[int] = None, max_active: Optional[int] = None,
                 placement: str = "best_fit"):
        self.cluster = cluster
        self.engine = cluster.engine
        self.classes = classes
        self.estimates = estimates
        self.alphas = [c.alpha if c.alpha is not None else alpha for c in classes]
        self.control_period = control_period
        self.c_min = c_min
        self.spawn_slack = spawn_slack
        n_sites = len(cluster.sites)
        cores = cluster.config.cores
        self.table = AllocationTable(n_sites, len(classes), site_cap or cores, placement)
        self.policy = NoahSitePolicy(self, max_active or cores)
        cluster.policy = self.policy
        self.site_setup: dict[tuple[int, int], ClassEstimate] = {}
        self.desired = [0] * len(classes)
        self.saturated_steps = 0
        self.control_steps = 0
        self.fallback_dispatches = 0
        self.step_observers: list[Callable[["NoahScheduler", int], None]] = []
        self._timer = None
        self._rounds = 0

    # -- estimates ---------------------------------------------------------

    def setup_estimate(self, site, k: int) -> float:
        est = self.site_setup.get((site.id, k))
        if est is None:
            return self.estimates[k].setup_hat
        return est.setup_hat

    def observe_setup(self, site, k: int, duration: float) -> None:
        est = self.site_setup.get((site.id, k))
        if est is None:
            shared = self.estimates[k]
            est = ClassEstimate(setup_hat=shared.setup_hat, sample_half_life=shared.sample_half_life)
            self.site_setup[(site.id, k)] = est
        est.observe_setup(duration)

    def estimated_wait(self, site, k: int, ahead: int) -> float:
        """Expected time until an instance of ``k`` frees up for a request with ``ahead`` jobs in front.

        Sums the estimated residual service of the instances working for ``k``
        and the mean service of the queued backlog, shared over those instances.
        """
        now = self.engine.now
        mean = 1.0 / self.estimates[k].mu_hat
        setup = self.setup_estimate(site, k)
        live = 0
        residual = 0.0
        for inst in site.pool.values():
            if inst.cls != k or inst.request is None:
                continue
            live += 1
            if inst.busy_since is not None:
                residual += max(0.0, mean - (now - inst.busy_since))
            else:
                residual += max(0.0, inst.created_at + setup - now) + mean
        if live == 0:
            return math.inf
        return (residual + ahead * mean) / live

    # -- control -----------------------------------------------------------

    def start(self) -> None:
        self._timer = self.engine.after(self.control_period, "timer", self._on_timer, None, daemon=True)

    def _on_timer(self, ev) -> None:
        # round-robin: the class that steps first rotates every period
        n = len(self.classes)
        first = self._rounds % n
        self._rounds += 1
        for j in range(n):
            self.control_step((first + j) % n)
        self._timer = self.engine.after(self.control_period, "timer", self._on_timer, None, daemon=True)

    def control_step(self, k: int) -> int:
        """Resize class ``k`` to its Erlang-C target; returns the new allocation count."""
        now = self.engine.now
        est = self.estimates[k]
        lam = est.rate_at(now)
        table = self.table
        cap = sum(table.site_cap)
        want = min_instances(lam, est.mu_hat, self.alphas[k], self.c_min, c_max=cap)
        self.desired[k] = want
        have = table.total(k)
        if want > have:
            _, short = table.scale_out(k, want - have)
            if short:
                self.saturated_steps += 1
        elif want < have:
            table.scale_in(k, have - want)
        self.control_steps += 1
        for obs in self.step_observers:
            obs(self, k)
        return table.total(k)

    # -- dispatch ----------------------------------------------------------

    def dispatch(self, req) -> int:
        k = req.cls
        table = self.table
        sites = self.cluster.sites
        if table.total(k) == 0:
            est = self.estimates[k]
            if math.isinf(est.mean_gap):
                # first contact: treat the event as one control period's worth of demand
                est.seed_gap(self.control_period)
            self.control_step(k)
        best = None
        best_idle = 0
        for s in sites:
            n = s.idle_count(k)
            if n > best_idle and self.cluster.headroom(s):
                best, best_idle = s.id, n
        if best is not None:
            return best
        best_ratio = math.inf
        for i in range(table.n_sites):
            alloc = table.c[i][k]
            if alloc > 0:
                ratio = sites[i].unfinished_count(k) / alloc
                if ratio < best_ratio:
                    best, best_ratio = i, ratio
        if best is None:
            # no allocation anywhere (cluster-wide budget exhausted): least loaded site
            self.fallback_dispatches += 1
            best = min(range(len(sites)), key=lambda i: (sites[i].unfinished, i))
        return best

    def on_complete(self, req, inst) -> None:
        pass
