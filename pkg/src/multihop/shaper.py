"""Leaky-bucket admission control at the network edge.

A newly generated packet bound for L hops needs L tokens to enter the
network; relayed packets bypass the shaper. Within a slot the bucket is
refilled first, then waiting and newly offered packets are tested.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .distributions import Geometric, HopCountPmf, ScalingLaw, law_cdf, scaling_law_stats

CONFORMED = "conformed"
QUEUED = "queued"
OVERSIZE = "oversize"
DROPPED = "dropped"


class TokenBucket:
    """Token bucket with rate ``rate`` tokens/slot and capacity ``size``.

    Packets that do not conform wait in FIFO order (or are dropped when
    ``drop`` is set); a packet needing more tokens than ``size`` can never
    conform and is rejected as oversize.
    """

    def __init__(self, rate: float, size: float, tokens: float | None = None,
                 drop: bool = False):
        if rate <= 0 or size <= 0:
            raise ValueError("rate and size must be positive")
        self.rate = float(rate)
        self.size = float(size)
        self.tokens = self.size if tokens is None else float(tokens)
        if not 0 <= self.tokens <= self.size:
            raise ValueError("initial tokens must lie in [0, size]")
        self.drop = drop
        self.queue: deque[tuple[int, int]] = deque()  # (hops, arrival slot)

    def _take(self, hops: int):
        self.tokens -= hops
        if self.tokens < 0:  # float round-off only
            self.tokens = 0.0

    def offer(self, hops: int, slot: int = 0) -> str:
        if hops < 1:
            raise ValueError("a packet travels at least one hop")
        if hops > self.size:
            return OVERSIZE
        if not self.queue and self.tokens >= hops:
            self._take(hops)
            return CONFORMED
        if self.drop:
            return DROPPED
        self.queue.append((hops, slot))
        return QUEUED

    def tick(self) -> list[tuple[int, int]]:
        """Refill one slot's tokens, then release queued packets that now conform."""
        self.tokens = min(self.size, self.tokens + self.rate)
        released = []
        while self.queue and self.queue[0][0] <= self.tokens:
            hops, slot = self.queue.popleft()
            self._take(hops)
            released.append((hops, slot))
        return released


class AllocationRule(str, Enum):
    EQUAL = "equal"
    PROPORTIONAL = "prop"


@dataclass
class ParallelShaper:
    """One bucket per hop class, fed from a common token rate."""

    buckets: list[TokenBucket]
    rule: AllocationRule
    rate: float

    @classmethod
    def build(cls, rate: float, size: float, phi: int, rule="equal",
              drop: bool = False) -> "ParallelShaper":
        rule = AllocationRule(rule)
        l = np.arange(1, phi + 1)
        if rule is AllocationRule.EQUAL:
            shares = np.full(phi, 1.0 / phi)
        else:
            shares = l / l.sum()
        # a bucket must hold at least one packet of its class
        buckets = [TokenBucket(rate * s, max(size, float(k)), drop=drop)
                   for s, k in zip(shares, l)]
        return cls(buckets, rule, rate)

    @property
    def phi(self) -> int:
        return len(self.buckets)


@dataclass(eq=False)
class ShaperTrace:
    offered: np.ndarray      # slots x phi, packets offered per class
    conformed: np.ndarray    # slots x phi, packets admitted per class
    tokens: np.ndarray       # slots x buckets, level after the slot
    class_bucket: np.ndarray  # bucket index of each class
    rates: np.ndarray
    sizes: np.ndarray
    initial_tokens: np.ndarray
    oversize: np.ndarray     # per class
    dropped: np.ndarray      # per class

    @property
    def slots(self) -> int:
        return self.offered.shape[0]

    @property
    def phi(self) -> int:
        return self.offered.shape[1]

    @property
    def measured_rates(self) -> np.ndarray:
        """Conformed packets per slot for each hop class."""
        return self.conformed.sum(axis=0) / self.slots

    @property
    def measured_load(self) -> float:
        """Conformed lambda E[L], tokens spent per slot."""
        return float(np.arange(1, self.phi + 1) @ self.measured_rates)

    def spent(self) -> np.ndarray:
        """Tokens spent per slot by each bucket (slots x buckets)."""
        per_class = self.conformed * np.arange(1, self.phi + 1)
        out = np.zeros((self.slots, self.rates.size))
        for l in range(self.phi):
            out[:, self.class_bucket[l]] += per_class[:, l]
        return out

    def prefix_violation(self, slack: float = 1e-9) -> float:
        """Largest excess of sum(L) over a(t) + r tau across all windows; <= 0 means none.

        For every bucket and every window of slots t..s-1, tokens spent must
        not exceed the level a(t) at the start of slot t plus r (s - t).
        Checked over all O(N^2) windows in O(N) with a running minimum.
        """
        spent = self.spent()
        worst = -math.inf
        for k in range(self.rates.size):
            r = self.rates[k]
            C = np.concatenate(([0.0], np.cumsum(spent[:, k])))
            levels = np.concatenate(([self.initial_tokens[k]], self.tokens[:, k]))
            idx = np.arange(C.size)
            g = C - r * idx + levels           # window start at t
            h = C - r * idx                    # window end at s
            run_min = np.minimum.accumulate(g)
            worst = max(worst, float(np.max(h[1:] - run_min[:-1])))
        return worst - slack

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "class", "offered", "conformed", "tokens"])
            for t in range(self.slots):
                for l in range(self.phi):
                    w.writerow([t, l + 1, int(self.offered[t, l]), int(self.conformed[t, l]),
                                f"{self.tokens[t, self.class_bucket[l]]:.12g}"])

    def summary(self) -> dict:
        return {
            "slots": self.slots,
            "measured_rates": self.measured_rates.tolist(),
            "measured_load": self.measured_load,
            "network_throughput": float(self.measured_rates.sum()),
            "oversize": self.oversize.tolist(),
            "dropped": self.dropped.tolist(),
        }


def run_shaper(buckets: list[TokenBucket], class_bucket, arrivals, slots: int,
               seed: int = 0, class_pmf=None) -> ShaperTrace:
    """Slot-by-slot run of a set of buckets.

    ``arrivals`` is ``"saturated"`` (every bucket always has a packet waiting)
    or a sequence of per-class Bernoulli arrival probabilities. For a
    saturated bucket shared by several classes, the class of each waiting
    packet is drawn from ``class_pmf`` restricted to that bucket.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    class_bucket = np.asarray(class_bucket, dtype=int)
    phi = class_bucket.size
    nb = len(buckets)
    rng = np.random.default_rng(seed)
    saturated = isinstance(arrivals, str)
    if saturated and arrivals != "saturated":
        raise ValueError(f"unknown arrival mode {arrivals!r}")
    offered = np.zeros((slots, phi), dtype=np.int64)
    conformed = np.zeros((slots, phi), dtype=np.int64)
    tokens = np.zeros((slots, nb))
    oversize = np.zeros(phi, dtype=np.int64)
    dropped = np.zeros(phi, dtype=np.int64)
    initial = np.array([b.tokens for b in buckets])
    members = [np.flatnonzero(class_bucket == k) + 1 for k in range(nb)]

    if saturated:
        if class_pmf is None:
            class_pmf = np.ones(phi)
        class_pmf = np.asarray(class_pmf, dtype=float)
        heads = []
        for k in range(nb):
            w = class_pmf[members[k] - 1]
            heads.append((members[k], w / w.sum()))
        nxt = [int(rng.choice(m, p=w)) for m, w in heads]
        for t in range(slots):
            for k, b in enumerate(buckets):
                b.tokens = min(b.size, b.tokens + b.rate)
                m, w = heads[k]
                while nxt[k] <= b.tokens:
                    b._take(nxt[k])
                    conformed[t, nxt[k] - 1] += 1
                    offered[t, nxt[k] - 1] += 1
                    nxt[k] = int(m[0]) if m.size == 1 else int(rng.choice(m, p=w))
                tokens[t, k] = b.tokens
    else:
        probs = np.asarray(arrivals, dtype=float)
        if probs.size != phi:
            raise ValueError("need one arrival probability per class")
        draws = rng.random((slots, phi)) < probs
        offered[:] = draws
        for t in range(slots):
            for k, b in enumerate(buckets):
                for hops, _ in b.tick():
                    conformed[t, hops - 1] += 1
            for l in np.flatnonzero(draws[t]) + 1:
                outcome = buckets[class_bucket[l - 1]].offer(int(l), t)
                if outcome == CONFORMED:
                    conformed[t, l - 1] += 1
                elif outcome == OVERSIZE:
                    oversize[l - 1] += 1
                elif outcome == DROPPED:
                    dropped[l - 1] += 1
            for k, b in enumerate(buckets):
                tokens[t, k] = b.tokens
    return ShaperTrace(offered, conformed, tokens, class_bucket,
                       np.array([b.rate for b in buckets]), np.array([b.size for b in buckets]),
                       initial, oversize, dropped)


def run_parallel(shaper: ParallelShaper, arrivals, slots: int, seed: int = 0) -> ShaperTrace:
    return run_shaper(shaper.buckets, np.arange(shaper.phi), arrivals, slots, seed)


def run_single(bucket: TokenBucket, phi: int, arrivals, slots: int, seed: int = 0,
               class_pmf=None) -> ShaperTrace:
    return run_shaper([bucket], np.zeros(phi, dtype=int), arrivals, slots, seed, class_pmf)


@dataclass(frozen=True)
class BucketSizing:
    b_min: float
    b_max: float


def bucket_sizing(dist: HopCountPmf | ScalingLaw, epsilon_tail: float) -> BucketSizing:
    """Recommended bucket size interval [E[L], L_m] with Pr{L > L_m} <= epsilon_tail."""
    if not 0 < epsilon_tail < 1:
        raise ValueError("epsilon_tail must lie in (0, 1)")
    if isinstance(dist, HopCountPmf):
        tails = np.concatenate((np.cumsum(dist.probs[::-1])[::-1][1:], [0.0]))  # Pr{L > l}
        l_m = int(np.argmax(tails <= epsilon_tail)) + 1
        return BucketSizing(dist.mean, float(l_m))
    stats = scaling_law_stats(dist)
    mean = stats.require_mean()
    if isinstance(dist, Geometric):
        if dist.g == 1:
            return BucketSizing(mean, 1.0)
        l_m = math.ceil(math.log(epsilon_tail) / math.log1p(-dist.g) - 1e-12)
        return BucketSizing(mean, float(max(l_m, 1)))
    target = 1 - epsilon_tail
    hi = max(mean, 1.0)
    while law_cdf(dist, hi) < target:
        hi *= 2
    l_m = brentq(lambda m: law_cdf(dist, m) - target, 0.0, hi, xtol=1e-14, rtol=1e-14)
    return BucketSizing(mean, l_m)
