"""Noncooperative load balancing over M/M/1-modelled sites.

Each function class is a player that splits its arrival rate across sites so
as to minimise its own mean response time, treating every site as an M/M/1
server whose rate is what the other players leave over.  Best replies are
iterated round-robin until the splits stop moving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

log = logging.getLogger(__name__)


class InfeasibleFlowError(ValueError):
    """The requested rate does not fit into the residual capacity."""


def best_reply(lam: float, residual: Sequence[float]) -> list[float]:
    """Flows ``x`` minimising ``sum x_i / (r_i - x_i)`` with ``sum x_i = lam``, ``x_i >= 0``.

    Water-filling: with the sites sorted by residual rate, the used set is the
    longest prefix for which ``x_i = r_i - sqrt(r_i) * (sum r - lam) / sum sqrt(r)``
    stays non-negative.
    """
    n = len(residual)
    if lam < 0:
        raise ValueError("arrival rate must be non-negative")
    usable = [i for i in range(n) if residual[i] > 0]
    total = sum(residual[i] for i in usable)
    if lam >= total:
        raise InfeasibleFlowError(f"rate {lam} >= residual capacity {total}")
    x = [0.0] * n
    if lam == 0:
        return x
    order = sorted(usable, key=lambda i: (-residual[i], i))
    sum_r = 0.0
    sum_sqrt = 0.0
    prefix = []
    for i in order:
        sum_r += residual[i]
        sum_sqrt += math.sqrt(residual[i])
        prefix.append((sum_r, sum_sqrt))
    for m in range(len(order), 0, -1):
        sum_r, sum_sqrt = prefix[m - 1]
        if sum_r <= lam:
            continue
        level = (sum_r - lam) / sum_sqrt
        weakest = residual[order[m - 1]]
        if weakest - math.sqrt(weakest) * level >= 0:
            for i in order[:m]:
                x[i] = max(0.0, residual[i] - math.sqrt(residual[i]) * level)
            # renormalise rounding so the flows sum to lam exactly
            s = sum(x)
            if s > 0:
                x = [v * lam / s for v in x]
            return x
    raise InfeasibleFlowError("no feasible prefix")  # unreachable when lam < total


def player_cost(x: Sequence[float], residual: Sequence[float]) -> float:
    """Sum over sites of ``x_i / (r_i - x_i)`` (proportional to the player's mean response time)."""
    cost = 0.0
    for xi, ri in zip(x, residual):
        if xi <= 0:
            continue
        if xi >= ri:
            return math.inf
        cost += xi / (ri - xi)
    return cost


def limit_split(residual: Sequence[float]) -> list[float]:
    """Split used by a player with vanishing demand: uniform over the sites with the most residual rate."""
    top = max(residual)
    if top <= 0:
        return [1.0 / len(residual)] * len(residual)
    best = [i for i, r in enumerate(residual) if r >= top * (1 - 1e-12)]
    split = [0.0] * len(residual)
    for i in best:
        split[i] = 1.0 / len(best)
    return split


@dataclass
class Equilibrium:
    flows: list  # flows[k][i]
    splits: list  # splits[k][i], sums to 1
    rounds: int
    converged: bool
    max_change: float


def residual_for(k: int, flows, mu_total) -> list[float]:
    n = len(mu_total[k])
    return [mu_total[k][i] - sum(flows[j][i] for j in range(len(flows)) if j != k) for i in range(n)]


def equilibrium(lams: Sequence[float], mu_total, epsilon: float = 1e-6, max_rounds: int = 200,
                initial_splits=None) -> Equilibrium:
    """Round-robin best replies until no split moves by more than ``epsilon``.

    ``mu_total[k][i]`` is the service rate class ``k`` perceives at site ``i``.
    """
    n_classes = len(lams)
    n_sites = len(mu_total[0]) if n_classes else 0
    if initial_splits is not None:
        flows = [[lams[k] * p for p in initial_splits[k]] for k in range(n_classes)]
    else:
        flows = [[0.0] * n_sites for _ in range(n_classes)]
    splits = [[0.0] * n_sites for _ in range(n_classes)]
    for k in range(n_classes):
        s = sum(flows[k])
        splits[k] = [f / s for f in flows[k]] if s > 0 else [1.0 / n_sites] * n_sites
    converged = False
    change = math.inf
    rounds = 0
    totals = [sum(flows[k][i] for k in range(n_classes)) for i in range(n_sites)]
    def reply(k):
        own = flows[k]
        mu_k = mu_total[k]
        resid = [mu_k[i] - (totals[i] - own[i]) for i in range(n_sites)]
        if lams[k] > 0:
            x = best_reply(lams[k], resid)
            return x, [v / lams[k] for v in x]
        return [0.0] * n_sites, limit_split(resid)

    def moved(new_split, k):
        return max(abs(a - b) for a, b in zip(new_split, splits[k]))

    for rounds in range(1, max_rounds + 1):
        change = 0.0
        for k in range(n_classes):
            x, new_split = reply(k)
            change = max(change, moved(new_split, k))
            own = flows[k]
            for i in range(n_sites):
                totals[i] += x[i] - own[i]
            flows[k] = x
            splits[k] = new_split
        if change < epsilon:
            # a quiet Gauss-Seidel round does not bound what a fresh reply to the
            # final flows would do; confirm without updating
            change = max((moved(reply(k)[1], k) for k in range(n_classes)), default=0.0)
            if change < epsilon:
                converged = True
                break
    if not converged:
        log.warning("noncoop equilibrium did not converge in %d rounds (change %.3g)", max_rounds, change)
    return Equilibrium(flows, splits, rounds, converged, change)


class NoncoopScheduler:
    name = "noncoop"

    def __init__(self, cluster, classes, streams, estimates, epsilon: float = 1e-6,
                 max_rounds: int = 200, period: float = 1.0, change_trigger: float = 0.1,
                 headroom: float = 0.99):
        self.cluster = cluster
        self.engine = cluster.engine
        self.n_classes = len(classes)
        self.estimates = estimates
        self.epsilon = epsilon
        self.max_rounds = max_rounds
        self.period = period
        self.change_trigger = change_trigger
        self.headroom = headroom
        self.stream = streams("sched:noncoop")
        n = len(cluster.sites)
        self.splits = [[1.0 / n] * n for _ in range(self.n_classes)]
        self._lams_used = [0.0] * self.n_classes
        self._last = -math.inf
        self.recomputes = 0
        self.nonconverged = 0

    def _needs_recompute(self, now: float, lams) -> bool:
        if now - self._last >= self.period:
            return True
        for new, old in zip(lams, self._lams_used):
            if old == 0:
                if new > 0:
                    return True
            elif abs(new - old) > self.change_trigger * old:
                return True
        return False

    def recompute(self, now: float, lams) -> None:
        sites = self.cluster.sites
        mu_total = [[s.cores * self.estimates[k].mu_hat for s in sites] for k in range(self.n_classes)]
        cap = min(sum(row) for row in mu_total)
        total = sum(lams)
        scale = 1.0
        if total >= self.headroom * cap:
            # overload: keep the proportions, shrink the view to stay feasible
            scale = self.headroom * cap / total
        view = [lam * scale for lam in lams]
        eq = equilibrium(view, mu_total, self.epsilon, self.max_rounds, initial_splits=self.splits)
        if not eq.converged:
            self.nonconverged += 1
        self.splits = eq.splits
        self._lams_used = list(lams)
        self._last = now
        self.recomputes += 1

    def dispatch(self, req) -> int:
        now = self.engine.now
        lams = [e.rate_at(now) for e in self.estimates]
        if self._needs_recompute(now, lams):
            self.recompute(now, lams)
        return self.stream.choice_weighted(self.splits[req.cls])

    def on_complete(self, req, inst) -> None:
        pass
