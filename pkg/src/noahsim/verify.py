"""Built-in analytic verification battery.

Each check drives the real cluster and processor-sharing code on a single
site and compares against closed-form queueing results, or checks a kernel
against an independent computation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .cluster import Cluster, ClusterConfig, Request
from .engine import Engine, RandomStream
from .queueing import erlang_c, expected_wait
from .schedulers.noncoop import best_reply, equilibrium


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def erlang_c_exact(c: int, a: Fraction) -> Fraction:
    """Erlang C from the textbook finite sum, in exact rational arithmetic."""
    a = Fraction(a)
    term = Fraction(1)
    total = Fraction(0)
    for n in range(c):
        if n > 0:
            term = term * a / n
        total += term
    top = term * a / c * c / (c - a)  # a^c / c! * c / (c - a)
    return top / (total + top)


def simulate_station(lam: float, mu: float, servers: int, arrivals: int, seed: int = 1,
                     sharing: bool = False, warmup: float = 0.05) -> dict:
    """Poisson arrivals into one site built from the production cluster code.

    ``sharing=False``: ``servers`` cores and at most ``servers`` containers,
    i.e. M/M/c with FIFO.  ``sharing=True``: one core shared by an unbounded
    container pool, i.e. M/M/1 processor sharing.  Setup time is zero so the
    containers behave as a fixed warm pool.  The first ``warmup`` fraction of
    requests is discarded.
    """
    cores = 1 if sharing else servers
    cap = arrivals + 1 if sharing else servers
    cfg = ClusterConfig(hosts=1, cores=cores, container_cap=cap, setup_cold=0.0,
                        holding_time=math.inf, mem_capacity=math.inf)
    engine = Engine()
    cluster = Cluster(engine, cfg)
    site = cluster.sites[0]
    arr = RandomStream(seed, "verify:arrivals")
    svc = RandomStream(seed, "verify:service")
    reqs = []

    def on_arrival(ev):
        req = ev.payload
        req.dispatch = engine.now
        cluster.admit(site, req)

    t = 0.0
    for i in range(arrivals):
        t += arr.exponential(lam)
        req = Request(i, 0, t, svc.exponential(mu))
        reqs.append(req)
        engine.schedule(t, "arrival", on_arrival, req)
    engine.run_until_drained()
    kept = reqs[int(len(reqs) * warmup):]
    wait = sum(r.exec_start - r.arrival for r in kept) / len(kept)
    resp = sum(r.completion - r.arrival for r in kept) / len(kept)
    return {"wait": wait, "response": resp, "n": len(kept)}


def _bisect_reply(lam: float, residual) -> list[float]:
    """Best reply by bisection on the KKT multiplier (independent of the closed form)."""
    def flows(nu):
        return [max(0.0, r - math.sqrt(r / nu)) if r > 0 else 0.0 for r in residual]
    lo, hi = 1e-12, 1.0
    while sum(flows(hi)) < lam:
        hi *= 2.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if sum(flows(mid)) < lam:
            lo = mid
        else:
            hi = mid
    return flows(hi)


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name, ok, detail, time.perf_counter() - t0)


def _rel(x: float, ref: float) -> float:
    return abs(x - ref) / ref


# Arrivals per station check.  The mean-wait estimator's standard error grows
# steeply with utilisation, so the rho = 0.8 stations get several times more
# samples than the rho = 0.5 ones to keep the 5% band at about two sigma.
STATION_ARRIVALS = {
    (2.5, 5.0, 1): 100_000,
    (5.0, 5.0, 2): 100_000,
    (12.0, 5.0, 3): 400_000,
    (40.0, 5.0, 10): 800_000,
}
PS_ARRIVALS = 100_000


def run_battery(quick: bool = False, seed: int = 1) -> list[CheckResult]:
    scale = 8 if quick else 1
    tol = 0.15 if quick else 0.05
    results = []

    def erlang_exact():
        worst = 0.0
        cases = [(2, Fraction(1)), (3, Fraction(12, 5)), (10, Fraction(8)), (7, Fraction(1, 3))]
        for c, a in cases:
            worst = max(worst, abs(erlang_c(c, float(a)) - float(erlang_c_exact(c, a))))
        for rho in (0.0, 0.1, 0.5, 0.9, 0.999):
            worst = max(worst, abs(erlang_c(1, rho) - rho))
        worst = max(worst, abs(erlang_c(2, 1.0) - 1.0 / 3.0))
        return worst <= 1e-12, f"max abs error {worst:.2e} (<= 1e-12)"

    results.append(_timed("erlang_c exact values", erlang_exact))

    for (lam, mu, c), n in STATION_ARRIVALS.items():
        def mmc(lam=lam, mu=mu, c=c, n=n // scale):
            got = simulate_station(lam, mu, c, n, seed)["wait"]
            ref = expected_wait(c, lam, mu)
            err = _rel(got, ref)
            return err <= tol, f"mean wait {got:.5f} vs {ref:.5f}, rel err {err:.3%} (<= {tol:.0%})"
        label = "M/M/1" if c == 1 else "M/M/c"
        results.append(_timed(f"{label} wait lambda={lam:g} mu={mu:g} c={c}", mmc))

    def ps():
        lam, mu = 2.5, 5.0
        got = simulate_station(lam, mu, 1, PS_ARRIVALS // scale, seed, sharing=True)["response"]
        ref = (1.0 / mu) / (1.0 - lam / mu)
        err = _rel(got, ref)
        return err <= tol, f"mean response {got:.5f} vs {ref:.5f}, rel err {err:.3%} (<= {tol:.0%})"

    results.append(_timed("M/M/1-PS response rho=0.5", ps))

    def reply():
        rs = RandomStream(seed, "verify:best_reply")
        worst = 0.0
        for _ in range(20 if quick else 100):
            m = 1 + rs.randrange(8)
            residual = [0.5 + 20.0 * rs.uniform() for _ in range(m)]
            lam = sum(residual) * (0.02 + 0.9 * rs.uniform())
            a = best_reply(lam, residual)
            b = _bisect_reply(lam, residual)
            worst = max(worst, max(abs(x - y) for x, y in zip(a, b)))
        return worst <= 1e-4, f"max coordinate gap {worst:.2e} (<= 1e-4)"

    results.append(_timed("best reply vs multiplier bisection", reply))

    def fixed_point():
        rs = RandomStream(seed, "verify:equilibrium")
        worst = 0.0
        for _ in range(5 if quick else 20):
            k, m = 2 + rs.randrange(4), 2 + rs.randrange(5)
            mus = [1.0 + 10.0 * rs.uniform() for _ in range(m)]
            lams = [rs.uniform() for _ in range(k)]
            scale = 0.8 * sum(mus) / sum(lams)
            lams = [x * scale for x in lams]
            eq = equilibrium(lams, [mus] * k, epsilon=1e-6, max_rounds=10_000)
            for j in range(k):
                other = [mus[i] - sum(eq.flows[q][i] for q in range(k) if q != j) for i in range(m)]
                br = best_reply(lams[j], other)
                worst = max(worst, max(abs(x / lams[j] - p) for x, p in zip(br, eq.splits[j])))
        return worst <= 1e-6, f"max split change under one more best reply {worst:.2e} (<= 1e-6)"

    results.append(_timed("equilibrium is a best-reply fixed point", fixed_point))
    return results
