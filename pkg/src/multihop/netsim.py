"""Slot-synchronous Monte Carlo of a buffered-Aloha multihop network.

Two geometries share one kernel:

* ``meanfield``: every attempt succeeds with an independent coin of bias p and
  a relayed packet joins a uniformly chosen node, which realizes the
  homogeneous abstraction behind the analytic per-hop law.
* ``torus``: nodes on a unit-spacing square torus, greedy minimum-distance
  forwarding, and a receiver-centric collision rule (a hop fails when any
  other node within ``radius`` of the receiver transmits in the same slot).

Every node holds one FIFO buffer shared by its own and relayed packets. A
packet enqueued at the end of slot t first competes in slot t + 1, so every
hop takes at least one slot and the transport delay is the sum of the hops.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numba
import numpy as np
from scipy import stats as sps

from .aloha import UnstableQueueError, solve_success_probability
from .distributions import HopCountPmf, parse_distribution
from .pmf import DelayPmf

MODES = ("meanfield", "torus")
ARRIVALS = ("bernoulli", "saturated")
_BATCHES = 20

_OK, _QUEUE_OVERFLOW, _POOL_FULL = 0, 1, 2
_NEIGHBOR_STEPS = np.array([[-1, 0], [0, -1], [0, 1], [1, 0]], dtype=np.int64)


@dataclass
class SimConfig:
    mode: str = "meanfield"
    n: int = 100
    dist: str = "geometric:0.2"
    phi: int | None = None          # discretization for continuous or truncated laws
    q: float = 0.1
    arrival: str = "bernoulli"
    theta: float | None = 0.03      # offered node load lambda E[L]
    rates: list[float] | None = None  # explicit lambda(l); overrides theta
    p: float | None = None          # meanfield success probability; solved when None
    n_int: float = 10.0             # contention size used to solve p
    radius: float = 1.6             # torus interference range
    slots: int = 1_000_000
    warmup: int = 10_000
    seed: int = 1
    active_sources: list[int] | None = None
    max_queue: int = 1_000_000
    hist_max: int = 4096
    series_every: int = 1000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.arrival not in ARRIVALS:
            raise ValueError(f"arrival must be one of {ARRIVALS}")
        if not 0 <= self.warmup < self.slots:
            raise ValueError("need slots > warmup >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if self.mode == "torus":
            side = math.isqrt(self.n)
            if side * side != self.n:
                raise ValueError("torus mode needs a square node count")
            if self.radius < 1:
                raise ValueError("torus mode needs radius >= 1")
            if side < 2 * math.ceil(self.radius) + 1:
                raise ValueError("torus too small for the interference radius")
        if self.arrival == "bernoulli" and self.rates is None and self.theta is None:
            raise ValueError("bernoulli arrivals need theta or rates")
        if self.active_sources is not None:
            bad = [s for s in self.active_sources if not 0 <= s < self.n]
            if bad:
                raise ValueError(f"active sources out of range: {bad}")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def hop_count_pmf(self) -> HopCountPmf:
        if self.rates is not None:
            return HopCountPmf.normalized(self.rates)
        return parse_distribution(self.dist, self.phi)

    def arrival_probability(self, pmf: HopCountPmf) -> float:
        """Per-node probability that a new packet is generated in a slot."""
        if self.arrival == "saturated":
            return 0.0
        lam = float(np.sum(self.rates)) if self.rates is not None else self.theta / pmf.mean
        if not 0 < lam < 1:
            raise ValueError(f"per-node generation probability {lam!r} outside (0, 1)")
        return lam

    def success_probability(self, pmf: HopCountPmf) -> float:
        if self.p is not None:
            if not 0 < self.p <= 1:
                raise ValueError("p must lie in (0, 1]")
            return float(self.p)
        if self.arrival == "saturated":
            raise ValueError("saturated meanfield runs need an explicit p")
        return solve_success_probability(self.arrival_probability(pmf) * pmf.mean, self.n_int)


@dataclass
class SimReport:
    mode: str
    slots_measured: int
    n: int
    theta_hat: float
    theta_ci: float
    lambda_hat: float
    mean_L_generated: float
    mean_T: float
    mean_T_ci: float
    mean_D: float
    mean_D_ci: float
    mean_L_delivered: float
    perhop_hist: np.ndarray          # counts of T = 0..hist_max-1; T >= hist_max in overflow
    perhop_overflow: int
    transport_delays: np.ndarray
    transport_hops: np.ndarray
    mean_population: float           # time-average packets in the system
    population_from_input: float     # n lambda_hat E[D]
    population_from_buffers: float   # n theta_hat E[T]
    queue_mean: float
    queue_max: int
    queue_series: np.ndarray         # packets in the system every series_every slots
    node_throughput: np.ndarray
    generated: int
    delivered: int
    in_system: int
    audit_failures: int
    success_probability: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def flow_gap(self) -> float:
        """Relative mismatch between lambda_hat E[L] and theta_hat."""
        return abs(self.lambda_hat * self.mean_L_generated - self.theta_hat) / self.theta_hat

    def perhop_pmf(self) -> np.ndarray:
        total = self.perhop_hist.sum() + self.perhop_overflow
        return self.perhop_hist / total

    def perhop_tv_distance(self, reference: DelayPmf) -> float:
        """Total-variation distance between the measured per-hop law and ``reference``."""
        emp = self.perhop_pmf()
        ref = reference.dense()
        size = max(emp.size, ref.size)
        e = np.zeros(size)
        r = np.zeros(size)
        e[: emp.size] = emp
        r[: ref.size] = ref
        return 0.5 * (np.abs(e - r).sum() + self.perhop_overflow / max(1, self.perhop_hist.sum())
                      + reference.residual_tail)

    def to_dict(self, samples: bool = False) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("transport_delays", "transport_hops") and not samples:
                continue
            if f.name == "perhop_hist":
                nz = np.flatnonzero(v)
                v = v[: nz[-1] + 1] if nz.size else v[:0]
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, np.generic):
                v = v.item()
            out[f.name] = v
        out["flow_gap"] = self.flow_gap
        return out


@numba.njit(cache=True)
def _torus_offset(a, b, side):
    d = (b - a) % side
    if d > side // 2:
        d -= side
    return d


@numba.njit(cache=True)
def _kernel(rng, torus, n, side, cdf, gen_prob, saturated, active, q, p, nbr, steps,
            slots, warmup, max_queue, pool_cap, hist_max, series_every, dcap):
    NIL = -1
    nxt = np.full(pool_cap, NIL, np.int64)
    resid = np.zeros(pool_cap, np.int64)
    hops = np.zeros(pool_cap, np.int64)
    birth = np.zeros(pool_cap, np.int64)
    arr = np.zeros(pool_cap, np.int64)
    fresh = np.zeros(pool_cap, np.bool_)
    src = np.zeros(pool_cap, np.int64)
    dest = np.zeros(pool_cap, np.int64)
    free = np.arange(pool_cap - 1, -1, -1).astype(np.int64)
    nfree = pool_cap

    head = np.full(n, NIL, np.int64)
    tail = np.full(n, NIL, np.int64)
    qlen = np.zeros(n, np.int64)

    W = slots - warmup
    hist = np.zeros(hist_max, np.int64)
    overflow = 0
    bT_sum = np.zeros(_BATCHES)
    bT_cnt = np.zeros(_BATCHES)
    bD_sum = np.zeros(_BATCHES)
    bD_cnt = np.zeros(_BATCHES)
    b_hops = np.zeros(_BATCHES)
    b_slots = np.zeros(_BATCHES)
    d_samples = np.zeros(dcap, np.int64)
    l_samples = np.zeros(dcap, np.int64)
    nd = 0
    sum_D = 0.0
    sum_Ld = 0.0
    cnt_D = 0
    gen_w = 0
    gen_hops_w = 0
    hops_w = 0
    node_hops = np.zeros(n, np.int64)
    occ_sum = 0.0
    qlen_sum = 0.0
    qmax = 0
    nseries = (W + series_every - 1) // series_every
    series = np.zeros(nseries, np.int64)
    generated = 0
    delivered = 0
    in_sys = 0
    audit_fail = 0

    # pending enqueues at the end of a slot: (packet, node)
    pend_pk = np.zeros(2 * n + 1, np.int64)
    pend_nd = np.zeros(2 * n + 1, np.int64)
    tx = np.zeros(n, np.bool_)
    target = np.zeros(n, np.int64)

    next_arrival = np.full(n, np.int64(slots + 1))
    log1m = math.log1p(-gen_prob) if 0.0 < gen_prob < 1.0 else 0.0
    if gen_prob > 0.0:
        for i in range(n):
            if active[i]:
                u = 1.0 - rng.random()
                next_arrival[i] = np.int64(math.ceil(math.log(u) / log1m)) - 1
    phi = cdf.size

    status = 0
    abort_slot = -1
    abort_node = -1

    # saturated sources start with one packet each, ready in slot 0
    npend = 0
    if saturated:
        for i in range(n):
            if active[i]:
                pend_pk[npend] = -1
                pend_nd[npend] = i
                npend += 1

    for t in range(-1, slots):
        if t >= 0:
            npend = 0
            # phase 1: who transmits
            for i in range(n):
                tx[i] = False
                h = head[i]
                if h == NIL:
                    continue
                if fresh[h] or rng.random() < q:
                    tx[i] = True
                    if torus:
                        x = i // side
                        y = i % side
                        ox = _torus_offset(x, dest[h] // side, side)
                        oy = _torus_offset(y, dest[h] % side, side)
                        best = 1 << 60
                        bj = -1
                        for s in range(4):
                            ex = ox - steps[s, 0]
                            ey = oy - steps[s, 1]
                            d2 = ex * ex + ey * ey
                            if d2 < best:
                                best = d2
                                bj = s
                        nx = (x + steps[bj, 0]) % side
                        ny = (y + steps[bj, 1]) % side
                        target[i] = nx * side + ny
            # phase 2: outcomes
            for i in range(n):
                if not tx[i]:
                    continue
                h = head[i]
                if torus:
                    j = target[i]
                    jx = j // side
                    jy = j % side
                    ok = True
                    for s in range(nbr.shape[0]):
                        k = ((jx + nbr[s, 0]) % side) * side + (jy + nbr[s, 1]) % side
                        if k != i and tx[k]:
                            ok = False
                            break
                else:
                    ok = rng.random() < p
                    j = -1
                if not ok:
                    fresh[h] = False
                    continue
                # departure from node i
                head[i] = nxt[h]
                if head[i] == NIL:
                    tail[i] = NIL
                qlen[i] -= 1
                T = t - arr[h]
                if t >= warmup:
                    if T < hist_max:
                        hist[T] += 1
                    else:
                        overflow += 1
                    b = (t - warmup) * _BATCHES // W
                    bT_sum[b] += T
                    bT_cnt[b] += 1
                    b_hops[b] += 1
                    hops_w += 1
                    node_hops[i] += 1
                resid[h] -= 1
                if resid[h] == 0:
                    delivered += 1
                    in_sys -= 1
                    if birth[h] >= warmup:
                        D = t - birth[h]
                        b = (t - warmup) * _BATCHES // W
                        bD_sum[b] += D
                        bD_cnt[b] += 1
                        sum_D += D
                        sum_Ld += hops[h]
                        cnt_D += 1
                        if nd < dcap:
                            d_samples[nd] = D
                            l_samples[nd] = hops[h]
                            nd += 1
                    s0 = src[h]
                    free[nfree] = h
                    nfree += 1
                    if saturated:
                        pend_pk[npend] = -1
                        pend_nd[npend] = s0
                        npend += 1
                else:
                    if torus:
                        nj = j
                    else:
                        nj = rng.integers(0, n)
                    pend_pk[npend] = h
                    pend_nd[npend] = nj
                    npend += 1
        # phase 3: enqueue relays, re-injections and new packets at the end of slot t
        for e in range(npend):
            h = pend_pk[e]
            i = pend_nd[e]
            if h == -1:
                if nfree == 0:
                    status = _POOL_FULL
                    abort_slot = t
                    abort_node = i
                    break
                nfree -= 1
                h = free[nfree]
                u = rng.random()
                L = 1
                while L < phi and cdf[L - 1] < u:
                    L += 1
                hops[h] = L
                resid[h] = L
                birth[h] = t
                src[h] = i
                if torus:
                    k = rng.integers(0, 4 * L)
                    quad = k // L
                    s = k % L
                    if quad == 0:
                        dx, dy = L - s, s
                    elif quad == 1:
                        dx, dy = -s, L - s
                    elif quad == 2:
                        dx, dy = s - L, -s
                    else:
                        dx, dy = s, s - L
                    x = i // side
                    y = i % side
                    dest[h] = ((x + dx) % side) * side + (y + dy) % side
                generated += 1
                in_sys += 1
                if t >= warmup:
                    gen_w += 1
                    gen_hops_w += L
            arr[h] = t
            fresh[h] = True
            nxt[h] = NIL
            if tail[i] == NIL:
                head[i] = h
            else:
                nxt[tail[i]] = h
            tail[i] = h
            qlen[i] += 1
        if status != 0:
            break
        if gen_prob > 0.0:
            for i in range(n):
                while next_arrival[i] == t:
                    if nfree == 0:
                        status = _POOL_FULL
                        abort_slot = t
                        abort_node = i
                        break
                    nfree -= 1
                    h = free[nfree]
                    u = rng.random()
                    L = 1
                    while L < phi and cdf[L - 1] < u:
                        L += 1
                    hops[h] = L
                    resid[h] = L
                    birth[h] = t
                    arr[h] = t
                    src[h] = i
                    fresh[h] = True
                    nxt[h] = NIL
                    if torus:
                        k = rng.integers(0, 4 * L)
                        quad = k // L
                        s = k % L
                        if quad == 0:
                            dx, dy = L - s, s
                        elif quad == 1:
                            dx, dy = -s, L - s
                        elif quad == 2:
                            dx, dy = s - L, -s
                        else:
                            dx, dy = s, s - L
                        x = i // side
                        y = i % side
                        dest[h] = ((x + dx) % side) * side + (y + dy) % side
                    if tail[i] == NIL:
                        head[i] = h
                    else:
                        nxt[tail[i]] = h
                    tail[i] = h
                    qlen[i] += 1
                    generated += 1
                    in_sys += 1
                    if t >= warmup:
                        gen_w += 1
                        gen_hops_w += L
                    u = 1.0 - rng.random()
                    next_arrival[i] = t + np.int64(math.ceil(math.log(u) / log1m))
                if status != 0:
                    break
            if status != 0:
                break
        # phase 4: bookkeeping
        if t >= 0:
            total = 0
            for i in range(n):
                total += qlen[i]
                if qlen[i] > qmax:
                    qmax = qlen[i]
                if qlen[i] > max_queue:
                    status = _QUEUE_OVERFLOW
                    abort_slot = t
                    abort_node = i
            if total != generated - delivered or total != in_sys:
                audit_fail += 1
            if t >= warmup:
                occ_sum += total
                qlen_sum += total
                b = (t - warmup) * _BATCHES // W
                b_slots[b] += 1
                if (t - warmup) % series_every == 0:
                    series[(t - warmup) // series_every] = total
            if status != 0:
                break

    # final recount by walking every list
    walked = 0
    for i in range(n):
        h = head[i]
        while h != NIL:
            walked += 1
            h = nxt[h]
    if status == 0 and walked != generated - delivered:
        audit_fail += 1

    return (status, abort_slot, abort_node, hist, overflow, bT_sum, bT_cnt, bD_sum, bD_cnt,
            b_hops, b_slots, d_samples[:nd], l_samples[:nd], sum_D, sum_Ld, cnt_D,
            gen_w, gen_hops_w, hops_w, node_hops, occ_sum, qlen_sum, qmax, series,
            generated, delivered, walked, audit_fail)


def _interference_offsets(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    pts = [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
           if a * a + b * b <= radius * radius + 1e-12]
    return np.array(pts, dtype=np.int64)


def _batch_ci(sums: np.ndarray, counts: np.ndarray) -> float:
    """95% half-width of a ratio estimate from batch means."""
    keep = counts > 0
    if keep.sum() < 2:
        return math.nan
    means = sums[keep] / counts[keep]
    k = means.size
    return float(sps.t.ppf(0.975, k - 1) * means.std(ddof=1) / math.sqrt(k))


def _run(cfg: SimConfig) -> SimReport:
    pmf = cfg.hop_count_pmf()
    torus = cfg.mode == "torus"
    side = math.isqrt(cfg.n) if torus else 0
    if torus and pmf.phi > (side - 1) // 2:
        raise ValueError(f"torus of side {side} supports hop counts up to {(side - 1) // 2}, "
                         f"got phi={pmf.phi}")
    gen_prob = cfg.arrival_probability(pmf)
    p = 1.0 if torus else cfg.success_probability(pmf)
    active = np.zeros(cfg.n, dtype=np.bool_)
    if cfg.active_sources is None:
        active[:] = True
    else:
        active[np.asarray(cfg.active_sources, dtype=np.int64)] = True
    cdf = np.cumsum(pmf.probs)
    cdf[-1] = 1.0
    nbr = _interference_offsets(cfg.radius) if torus else np.zeros((0, 2), dtype=np.int64)
    W = cfg.slots - cfg.warmup
    expected = gen_prob * cfg.n * W if gen_prob > 0 else cfg.n * W / max(pmf.mean, 1.0)
    dcap = int(min(20_000_000, 1.5 * expected + 10_000))

    pool = 4096 + 4 * cfg.n
    limit = 4 * cfg.max_queue + cfg.n
    while True:
        rng = np.random.Generator(np.random.Philox(cfg.seed))
        out = _kernel(rng, torus, cfg.n, side, cdf, gen_prob, cfg.arrival == "saturated",
                      active, cfg.q, p, nbr, _NEIGHBOR_STEPS, cfg.slots, cfg.warmup,
                      cfg.max_queue, pool, cfg.hist_max, cfg.series_every, dcap)
        if out[0] != _POOL_FULL:
            break
        if pool >= limit:
            raise UnstableQueueError(
                f"backlog exceeded {limit} packets at slot {out[1]} (node {out[2]}); "
                "the configuration is unstable")
        pool = min(limit, pool * 4)
    (status, abort_slot, abort_node, hist, overflow, bT_sum, bT_cnt, bD_sum, bD_cnt, b_hops,
     b_slots, d_samples, l_samples, sum_D, sum_Ld, cnt_D, gen_w, gen_hops_w, hops_w,
     node_hops, occ_sum, qlen_sum, qmax, series, generated, delivered, walked,
     audit_fail) = out
    if status == _QUEUE_OVERFLOW:
        raise UnstableQueueError(
            f"queue at node {abort_node} exceeded {cfg.max_queue} packets at slot "
            f"{abort_slot}; offered load is beyond capacity")

    n = cfg.n
    cnt_T = bT_cnt.sum()
    mean_T = float(bT_sum.sum() / cnt_T) if cnt_T else math.nan
    mean_D = float(sum_D / cnt_D) if cnt_D else math.nan
    theta_hat = hops_w / (n * W)
    lambda_hat = gen_w / (n * W)
    mean_L_gen = gen_hops_w / gen_w if gen_w else math.nan
    return SimReport(
        mode=cfg.mode, slots_measured=W, n=n,
        theta_hat=theta_hat, theta_ci=_batch_ci(b_hops / n, b_slots),
        lambda_hat=lambda_hat, mean_L_generated=mean_L_gen,
        mean_T=mean_T, mean_T_ci=_batch_ci(bT_sum, bT_cnt),
        mean_D=mean_D, mean_D_ci=_batch_ci(bD_sum, bD_cnt),
        mean_L_delivered=float(sum_Ld / cnt_D) if cnt_D else math.nan,
        perhop_hist=hist, perhop_overflow=int(overflow),
        transport_delays=d_samples, transport_hops=l_samples,
        mean_population=occ_sum / W,
        population_from_input=n * lambda_hat * mean_D,
        population_from_buffers=n * theta_hat * mean_T,
        queue_mean=qlen_sum / (W * n), queue_max=int(qmax), queue_series=series,
        node_throughput=node_hops / W,
        generated=int(generated), delivered=int(delivered), in_system=int(walked),
        audit_failures=int(audit_fail),
        success_probability=None if torus else p,
    )


def run_meanfield(cfg: SimConfig) -> SimReport:
    if cfg.mode != "meanfield":
        raise ValueError("run_meanfield needs mode='meanfield'")
    return _run(cfg)


def run_torus(cfg: SimConfig) -> SimReport:
    if cfg.mode != "torus":
        raise ValueError("run_torus needs mode='torus'")
    return _run(cfg)


def simulate(cfg: SimConfig) -> SimReport:
    return _run(cfg)


@dataclass(frozen=True, eq=False)
class TailEstimate:
    grid: np.ndarray
    estimate: np.ndarray
    halfwidth: np.ndarray   # 95% normal-approximation half-width
    samples: int


@numba.njit(cache=True)
def _tail_counts(rng, l_cdf, t_cdf, t_offset, thresholds, samples):
    # thresholds[l-1, i] = floor(l x_i); count D > floor(l x_i)
    counts = np.zeros(thresholds.shape[1], np.int64)
    phi = l_cdf.size
    kt = t_cdf.size
    for _ in range(samples):
        u = rng.random()
        L = np.searchsorted(l_cdf, u, side="right") + 1
        if L > phi:
            L = phi
        D = 0
        for _h in range(L):
            v = rng.random()
            k = np.searchsorted(t_cdf, v, side="right")
            if k >= kt:
                D += 1 << 40  # residual tail: beyond every threshold
            else:
                D += k + t_offset
        for i in range(thresholds.shape[1]):
            if D > thresholds[L - 1, i]:
                counts[i] += 1
    return counts


def estimate_tail(pmf: HopCountPmf, hop_pmf: DelayPmf, x_grid, samples: int = 1_000_000,
                  seed: int = 0) -> TailEstimate:
    """Monte Carlo Pr{D > L x}: draw L, then L per-hop delays, and count exceedances."""
    if samples < 10_000:
        raise ValueError("samples must be >= 10^4")
    grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    l_cdf = np.cumsum(pmf.probs)
    l_cdf[-1] = 1.0
    t_cdf = np.cumsum(hop_pmf.masses)
    thresholds = np.floor(np.outer(np.arange(1, pmf.phi + 1), grid)).astype(np.int64)
    rng = np.random.Generator(np.random.Philox(seed))
    counts = _tail_counts(rng, l_cdf, t_cdf, hop_pmf.offset, thresholds, samples)
    est = counts / samples
    half = 1.959963984540054 * np.sqrt(est * (1 - est) / samples)
    return TailEstimate(grid, est, half, samples)
