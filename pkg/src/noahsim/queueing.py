"""Analytic M/M/c kernel and online rate estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass


class UnstableQueueError(ValueError):
    """Offered load is at or above the number of servers."""


def erlang_c(c: int, a: float) -> float:
    """Probability that an arrival waits in an M/M/c queue with offered load ``a``.

    Uses the Erlang B recurrence ``B(n) = a B(n-1) / (n + a B(n-1))`` and
    ``C = c B / (c - a (1 - B))``, which never forms ``a**c`` or ``c!``.
    """
    if c < 1:
        raise ValueError("need at least one server")
    if a < 0:
        raise ValueError("offered load must be non-negative")
    if a >= c:
        raise UnstableQueueError(f"offered load {a} >= {c} servers")
    if a == 0:
        return 0.0
    b = 1.0
    for n in range(1, c + 1):
        b = a * b / (n + a * b)
    return c * b / (c - a * (1.0 - b))


def expected_wait(c: int, lam: float, mu: float) -> float:
    """Mean queueing delay ``C(c, lam/mu) / (c mu - lam)`` in seconds."""
    if mu <= 0:
        raise ValueError("service rate must be positive")
    if lam < 0:
        raise ValueError("arrival rate must be non-negative")
    if lam == 0:
        return 0.0
    if c * mu <= lam:
        raise UnstableQueueError(f"c*mu = {c * mu} <= lambda = {lam}")
    return erlang_c(c, lam / mu) / (c * mu - lam)


def min_instances(lam: float, mu: float, alpha: float, c_min: int = 0, c_max: int | None = None) -> int:
    """Smallest instance count keeping the mean M/M/c wait strictly below ``alpha``.

    The search starts at the first stable count ``floor(lam/mu) + 1``.  The
    result is never below ``c_min``; ``c_max`` (if given) caps the search.
    """
    if mu <= 0 or alpha <= 0:
        raise ValueError("mu and alpha must be positive")
    if lam <= 0:
        return c_min
    c = int(math.floor(lam / mu)) + 1
    if c * mu <= lam:  # floating edge when lam/mu is an exact integer
        c += 1
    if c_max is not None and c >= c_max:
        return max(c_max, c_min)
    while expected_wait(c, lam, mu) >= alpha:
        c += 1
        if c_max is not None and c >= c_max:
            return max(c_max, c_min)
    return max(c, c_min)


def _half_life_weight(elapsed: float, half_life: float) -> float:
    if half_life <= 0:
        return 1.0
    return 1.0 - 0.5 ** (elapsed / half_life)


@dataclass
class ClassEstimate:
    """Per-class arrival/service/setup estimates.

    Arrival rate is the inverse of an EWMA of interarrival gaps; the per-sample
    weight is set so that the half-life spans ``arrival_half_life`` seconds of
    arrivals at the current rate.  Service and setup durations are EWMAs with a
    half-life counted in samples.
    """

    lambda_hat: float = 0.0
    mu_hat: float = 5.0
    setup_hat: float = 0.5
    samples: int = 0
    arrival_half_life: float = 2.0
    sample_half_life: float = 10.0
    mean_gap: float = math.inf
    last_arrival: float | None = None
    setup_samples: int = 0

    @property
    def mean_service(self) -> float:
        return 1.0 / self.mu_hat

    def seed_gap(self, gap: float) -> None:
        """Bootstrap the arrival estimate as if one gap of ``gap`` seconds was seen."""
        if gap <= 0:
            raise ValueError("gap must be positive")
        self.mean_gap = gap
        self.lambda_hat = 1.0 / gap

    def observe_arrival(self, t: float) -> None:
        if self.last_arrival is not None:
            self.observe_gap(t - self.last_arrival)
        self.last_arrival = t

    def observe_gap(self, gap: float) -> None:
        if gap < 0:
            raise ValueError("interarrival gap must be non-negative")
        if math.isinf(self.mean_gap):
            self.mean_gap = gap
        else:
            # weight by the current mean gap, not this gap: weighting a sample by its
            # own length would length-bias the mean to E[g^2]/E[g] = 2/lambda
            w = _half_life_weight(self.mean_gap, self.arrival_half_life)
            self.mean_gap = w * gap + (1.0 - w) * self.mean_gap
        self.lambda_hat = 1.0 / self.mean_gap if self.mean_gap > 0 else math.inf
        if math.isinf(self.lambda_hat):
            # simultaneous arrivals; keep the estimate finite
            self.mean_gap = 1e-9
            self.lambda_hat = 1e9

    def observe_service(self, duration: float) -> None:
        if duration <= 0:
            raise ValueError("service duration must be positive")
        w = _half_life_weight(1.0, self.sample_half_life)
        mean = w * duration + (1.0 - w) / self.mu_hat
        self.mu_hat = 1.0 / mean
        self.samples += 1

    def observe_setup(self, duration: float) -> None:
        if duration <= 0:
            raise ValueError("setup duration must be positive")
        w = _half_life_weight(1.0, self.sample_half_life)
        self.setup_hat = w * duration + (1.0 - w) * self.setup_hat
        self.setup_samples += 1

    def rate_at(self, now: float) -> float:
        """Arrival-rate estimate at ``now``, lowered if the current gap is already long.

        The open gap since the last arrival is treated as a censored sample:
        it only pulls the estimate down, never up.
        """
        if self.last_arrival is None or math.isinf(self.mean_gap):
            return self.lambda_hat
        open_gap = now - self.last_arrival
        if open_gap <= self.mean_gap:
            return self.lambda_hat
        w = _half_life_weight(open_gap, self.arrival_half_life)
        return 1.0 / (w * open_gap + (1.0 - w) * self.mean_gap)


OBSERVATIONS = ("arrival", "gap", "service", "setup")


def update_rates(est: ClassEstimate, kind: str, value: float) -> ClassEstimate:
    """Fold one observation into ``est`` (mutated and returned)."""
    if kind == "arrival":
        est.observe_arrival(value)
    elif kind == "gap":
        est.observe_gap(value)
    elif kind == "service":
        est.observe_service(value)
    elif kind == "setup":
        est.observe_setup(value)
    else:
        raise ValueError(f"unknown observation kind {kind!r}; expected one of {OBSERVATIONS}")
    return est
