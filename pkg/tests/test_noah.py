import itertools
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noahsim.cluster import ENQUEUE, RUN_NOW, SPAWN, Cluster, ClusterConfig, Request
from noahsim.engine import Engine, StreamFactory
from noahsim.queueing import ClassEstimate
from noahsim.schedulers.noah import AllocationTable, NoahScheduler
from noahsim.simulation import Simulation
from noahsim.workload import default_classes


def table_with(holdings, n_sites=8, cap=16, n_classes=2, placement="best_fit"):
    t = AllocationTable(n_sites, n_classes, cap, placement)
    for (i, k), n in holdings.items():
        t._add(i, k, n)
        t.target[k] += n
    return t


# -- allocation table ------------------------------------------------------

def test_scale_out_fills_held_site_first():
    t = table_with({(4, 0): 2})
    placements, short = t.scale_out(0, 3)
    assert placements == [(4, 3)] and short == 0
    assert t.c[4][0] == 5


def test_scale_out_to_site_with_most_free_capacity():
    t = table_with({(4, 0): 16, (1, 1): 10, (2, 1): 5, (3, 1): 9, (0, 1): 8, (5, 1): 7, (6, 1): 6},
                   placement="most_free")
    placements, _ = t.scale_out(0, 2)
    assert placements == [(7, 2)]


def test_best_fit_takes_tightest_site_that_fits():
    t = table_with({(4, 0): 16, (1, 1): 10, (2, 1): 15})
    placements, _ = t.scale_out(0, 2)
    assert placements == [(1, 2)]  # 6 free; site 2 (1 free) is too small
    placements, _ = t.scale_out(1, 1)
    assert placements == [(2, 1)]  # held sites are filled first, largest holding first


def test_scale_out_spans_minimum_number_of_sites():
    for placement in ("best_fit", "most_free"):
        t = AllocationTable(4, 1, 16, placement)
        placements, short = t.scale_out(0, 20)
        assert short == 0 and len(placements) == 2
        assert sorted(n for _, n in placements) == [4, 16]


def test_scale_out_reports_shortfall():
    t = AllocationTable(2, 2, 4)
    t.scale_out(1, 6)
    placements, short = t.scale_out(0, 5)
    assert short == 3 and sum(n for _, n in placements) == 2
    t.check()
    with pytest.raises(ValueError):
        t.scale_out(0, 0)


def test_scale_in_examples():
    t = table_with({(1, 0): 5, (2, 0): 1})
    assert t.scale_in(0, 1) == [2]
    assert t.c[2][0] == 0 and t.c[1][0] == 5
    t = table_with({(1, 0): 5})
    t.scale_in(0, 2)
    assert t.c[1][0] == 3
    t = table_with({(1, 0): 3, (5, 0): 3})
    assert t.scale_in(0, 1) == [5]
    with pytest.raises(ValueError):
        t.scale_in(0, 99)


def _min_sites_oracle(free, held, delta):
    """Fewest sites holding k after placing delta: exhaustive over fresh-site subsets."""
    room_held = sum(free[i] for i in held)
    left = max(0, delta - room_held)
    fresh = [i for i in range(len(free)) if i not in held and free[i] > 0]
    if left == 0:
        return len(held)
    best = None
    for r in range(1, len(fresh) + 1):
        for combo in itertools.combinations(fresh, r):
            if sum(free[i] for i in combo) >= left:
                best = r
                break
        if best is not None:
            break
    if best is None:  # not everything fits: every site with room gets used
        best = len(fresh)
    return len(held) + best


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(0, 6), min_size=4, max_size=4),
       st.lists(st.integers(0, 6), min_size=4, max_size=4), st.integers(1, 30),
       st.sampled_from(["best_fit", "most_free"]))
def test_colocation_minimality(n_sites, mine, others, delta, placement):
    t = AllocationTable(n_sites, 2, 6, placement)
    for i in range(n_sites):
        t._add(i, 1, others[i])
        t.target[1] += others[i]
        n = min(mine[i], t.free(i))
        if n:
            t._add(i, 0, n)
            t.target[0] += n
    held = set(t.sites_of(0))
    free = [t.free(i) for i in range(n_sites)]
    t.scale_out(0, delta)
    t.check()
    assert len(t.sites_of(0)) == _min_sites_oracle(free, held, delta)


# -- scheduler pieces ------------------------------------------------------

def _noah(n_sites=2, n_classes=1, cores=16, **kw):
    eng = Engine()
    cl = Cluster(eng, ClusterConfig(hosts=n_sites, cores=cores))
    ests = [ClassEstimate(mu_hat=5.0) for _ in range(n_classes)]
    sch = NoahScheduler(cl, default_classes(n_classes), StreamFactory(1), ests, **kw)
    return eng, cl, sch, ests


def test_control_step_example():
    _, cl, sch, ests = _noah(alpha=0.010)
    ests[0].seed_gap(0.2)  # lambda = 5/s
    assert sch.control_step(0) == 3
    before = [row[:] for row in sch.table.c]
    assert sch.control_step(0) == 3
    assert sch.table.c == before
    assert cl.containers == []


def test_zero_demand_releases_allocations():
    _, _, sch, ests = _noah(alpha=0.010, c_min=1)
    ests[0].seed_gap(0.2)
    sch.control_step(0)
    ests[0].lambda_hat = 0.0
    assert sch.control_step(0) == 1


def test_dispatch_prefers_most_idle_site():
    eng, cl, sch, _ = _noah()
    sch.table.scale_out(0, 4)
    for sid, n in ((0, 1), (1, 2)):
        for _ in range(n):
            cl.spawn(cl.sites[sid], 0)
    eng.run_until_drained()
    assert sch.dispatch(Request(0, 0, eng.now, 0.2)) == 1


def test_dispatch_ratio_rule():
    _, cl, sch, _ = _noah()
    sch.table._add(0, 0, 4)
    sch.table._add(1, 0, 1)
    sch.table.target[0] = 5
    cl.sites[0].unfinished_by_class[0] = 2  # 2 / 4
    cl.sites[1].unfinished_by_class[0] = 1  # 1 / 1
    assert sch.dispatch(Request(0, 0, 0.0, 0.2)) == 0
    cl.sites[0].unfinished_by_class[0] = 5
    assert sch.dispatch(Request(0, 0, 0.0, 0.2)) == 1


def test_cold_class_bootstraps_one_allocation_site():
    _, cl, sch, ests = _noah(alpha=0.010)
    site = sch.dispatch(Request(0, 0, 0.0, 0.2))
    assert ests[0].lambda_hat == pytest.approx(10.0)  # one control period
    assert sch.table.total(0) >= 1 and sch.table.c[site][0] > 0
    assert cl.containers == []


def _busy_instance(eng, cl, site_id=0):
    """One instance of class 0 that starts executing at t = 0.5."""
    req = Request(0, 0, 0.0, 10.0)
    eng.schedule(0.0, "arrival", lambda ev: cl.admit(cl.sites[site_id], req))
    return req


def test_site_policy_examples():
    eng, cl, sch, _ = _noah(n_sites=1, cores=4)
    sch.table.scale_out(0, 4)
    site = cl.sites[0]
    policy = sch.policy
    seen = {}
    _busy_instance(eng, cl)

    def at(t, label, prep=None):
        def look(ev):
            if prep:
                prep()
            req = Request(99, 0, eng.now, 0.2)
            seen[label] = (sch.estimated_wait(site, 0, site.queue_len(0)), policy.decide(cl, site, req))
        eng.schedule(t, "timer", look)

    # busy for 80 ms of a 200 ms mean: 120 ms left, below the 500 ms setup
    at(0.58, "short")
    # 100 ms residual plus four queued jobs ahead: 900 ms
    at(0.60, "long", lambda: site.queues.setdefault(0, deque()).extend(Request(i, 0, 0.6, 0.2)
                                                                        for i in range(10, 14)))
    eng.schedule(0.61, "timer", lambda ev: site.queues[0].clear())
    eng.run_until_drained()
    assert seen["short"][0] == pytest.approx(0.120)
    assert seen["short"][1] == ENQUEUE
    assert seen["long"][0] == pytest.approx(0.900)
    assert seen["long"][1] == SPAWN


def test_site_policy_run_now_and_cap():
    eng, cl, sch, _ = _noah(n_sites=1, cores=2)
    sch.table.scale_out(0, 2)
    site = cl.sites[0]
    cl.spawn(site, 0)
    eng.run_until_drained()
    assert sch.policy.decide(cl, site, Request(0, 0, eng.now, 0.2)) == RUN_NOW
    site.n_bound = 2  # both concurrency slots taken
    assert sch.policy.decide(cl, site, Request(1, 0, eng.now, 0.2)) == ENQUEUE


def test_instance_bound_from_allocations():
    eng, cl, sch, _ = _noah(n_sites=1, spawn_slack=2)
    sch.table.scale_out(0, 1)
    site = cl.sites[0]
    for i in range(6):
        cl.admit(site, Request(i, 0, 0.0, 5.0))
    assert site.instance_count(0) == 3  # c = 1 plus slack 2
    assert site.queue_len(0) == 3


# -- end to end -------------------------------------------------------------

@pytest.mark.parametrize("alpha", ["10ms", "10us"])
def test_run_invariants(small_scenario, alpha):
    sc = small_scenario.with_overrides(scheduler=f"noah:{alpha}")
    sim = Simulation(sc, 5)
    sch = sim.scheduler
    violations = []

    def after_step(s, k):
        try:
            s.table.check()
        except AssertionError as exc:
            violations.append(str(exc))
        want = min(s.desired[k], s.table.total(k) + s.table.free_total())
        if s.table.total(k) != want:
            violations.append(f"class {k}: {s.table.total(k)} placed, {want} wanted")

    sch.step_observers.append(after_step)
    original_step = sch.control_step

    def counted_step(k):
        n = len(sim.cluster.containers)
        out = original_step(k)
        if len(sim.cluster.containers) != n:
            violations.append("control_step created a container")
        return out

    sch.control_step = counted_step
    original_dispatch = sch.dispatch

    def checked_dispatch(req):
        x = original_dispatch(req)
        calls.append(x)
        k = req.cls
        if sch.table.total(k) > 0 and sch.table.c[x][k] == 0 and sim.cluster.sites[x].idle_count(k) == 0:
            violations.append(f"dispatch of class {k} to site {x} without allocation")
        return x

    sch.dispatch = checked_dispatch
    calls = []
    m = sim.run()
    assert violations == []
    assert len(calls) == len(m.requests)
    assert sch.control_steps > 0
    assert all(r.completion is not None for r in m.requests)
