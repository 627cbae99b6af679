"""Source-to-destination (SD) hop-count distributions.

A hop-count pmf is the global traffic descriptor of the network: it is built
from per-class input rates, summarized by its moments and workload bias, and
can be produced from the continuous traffic scaling laws (power, exponential,
normal, Rayleigh) or a native geometric law.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate, special

PROB_TOL = 1e-12
GEOMETRIC_CUTOFF = 1e-12


class DegenerateAllocationError(ValueError):
    """Raised when a rate allocation has zero total rate."""


class DivergentMomentError(ValueError):
    """Raised when a moment is requested that the law does not have."""


@dataclass(frozen=True, eq=False)
class HopCountPmf:
    """pmf of the SD distance L on {1, ..., phi}; ``probs[l-1] = f_L(l)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).copy()
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a non-empty 1-d array")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probs must be finite and non-negative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probs sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def normalized(cls, weights) -> "HopCountPmf":
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise DegenerateAllocationError("weights have zero total mass")
        return cls(w / total)

    @classmethod
    def point_mass(cls, l: int) -> "HopCountPmf":
        if l < 1:
            raise ValueError("hop count must be >= 1")
        probs = np.zeros(l)
        probs[-1] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, phi: int) -> "HopCountPmf":
        return cls(np.full(phi, 1.0 / phi))

    @classmethod
    def geometric(cls, g: float, cutoff: float = GEOMETRIC_CUTOFF) -> "HopCountPmf":
        """Geometric law (1-g)^(l-1) g truncated once the residual mass drops below ``cutoff``."""
        if not 0 < g <= 1:
            raise ValueError("geometric parameter must lie in (0, 1]")
        if g == 1:
            return cls.point_mass(1)
        phi = max(1, math.ceil(math.log(cutoff) / math.log1p(-g)))
        l = np.arange(1, phi + 1)
        return cls.normalized(np.exp((l - 1) * math.log1p(-g)) * g)

    @property
    def phi(self) -> int:
        return self.probs.size

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.phi + 1)

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def second_moment(self) -> float:
        l = self.support
        return float((l * l) @ self.probs)

    def tail(self, m: int) -> float:
        """Pr{L > m}."""
        if m >= self.phi:
            return 0.0
        return float(self.probs[max(m, 0):].sum())

    def to_spec(self) -> str:
        return "explicit:" + json.dumps([float(f"{p:.12g}") for p in self.probs])


@dataclass(frozen=True, eq=False)
class RateAllocation:
    """Per-class input rates lambda(l), packets/slot, for l = 1..phi."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).copy()
        if rates.ndim != 1 or rates.size < 1:
            raise ValueError("rates must be a non-empty 1-d array")
        if np.any(~np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("rates must be finite and non-negative")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @property
    def phi(self) -> int:
        return self.rates.size

    @property
    def lambda_total(self) -> float:
        return float(self.rates.sum())

    @property
    def theta(self) -> float:
        return float(np.arange(1, self.phi + 1) @ self.rates)

    def partial_workload(self, m: int) -> float:
        """sum_{l<=m} l * lambda(l)."""
        m = min(m, self.phi)
        return float(np.arange(1, m + 1) @ self.rates[:m])


def pmf_from_rates(alloc: RateAllocation) -> HopCountPmf:
    if not alloc.lambda_total > 0:
        raise DegenerateAllocationError("allocation has zero total input rate")
    return HopCountPmf.normalized(alloc.rates)


@dataclass(frozen=True)
class DistanceStats:
    mean: float
    second_moment: float
    variance: float
    residual_mean: float
    workload_bias: float


def distance_stats(pmf: HopCountPmf) -> DistanceStats:
    m1, m2 = pmf.mean, pmf.second_moment
    residual = (m2 + m1) / (2 * m1)
    return DistanceStats(
        mean=m1,
        second_moment=m2,
        variance=max(m2 - m1 * m1, 0.0),
        residual_mean=residual,
        workload_bias=residual / m1,
    )


def _check_unit(z: float):
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z={z!r} outside [0, 1]")


def _powers(z: float, n: int) -> np.ndarray:
    # z**l for l = 1..n, with 0**l = 0
    if z == 0.0:
        return np.zeros(n)
    return np.exp(np.arange(1, n + 1) * math.log(z))


def mgf_L(pmf: HopCountPmf, z: float) -> float:
    """sum_l z^l f_L(l) for z in [0, 1]."""
    _check_unit(z)
    return float(_powers(z, pmf.phi) @ pmf.probs)


def residual_mgf_L(pmf: HopCountPmf, z: float) -> float:
    """Generating function of the residual hop count.

    Evaluated through the summation form sum_k z^k Pr{L >= k} / E[L], which
    equals z(1 - M_L(z)) / ((1 - z) E[L]) without the cancellation near z = 1.
    """
    _check_unit(z)
    survival = np.cumsum(pmf.probs[::-1])[::-1]  # Pr{L >= k}
    return float(_powers(z, pmf.phi) @ survival) / pmf.mean


# -- scalability ------------------------------------------------------------


@dataclass(frozen=True)
class ScalabilityVerdict:
    scalable: bool
    witness_M: int | None
    evidence: tuple[tuple[int, float], ...]
    table: np.ndarray = field(repr=False, compare=False)


DEFAULT_PHI_SCHEDULE = (10, 100, 1000, 10_000, 100_000)


def classify_scalability(
    rate_family: Callable[[int], RateAllocation],
    M_max: int = 50,
    phi_schedule: Sequence[int] = DEFAULT_PHI_SCHEDULE,
    tol: float = 1e-4,
) -> ScalabilityVerdict:
    """Evidence-based check of whether lambda stays bounded away from zero.

    For each phi in the schedule the partial workloads
    S(M, phi) = sum_{l<=M} l lambda_phi(l), M = 1..M_max are tabulated. The
    family is declared scalable when some M has a partial workload above
    ``tol`` at the last phi that also moved by less than ``tol/10`` since the
    previous phi. This is a numeric diagnostic, not a limit proof.
    """
    schedule = [int(p) for p in phi_schedule]
    if len(schedule) < 3 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("phi_schedule must be increasing with at least 3 entries")
    if tol <= 0:
        raise ValueError("tol must be positive")

    table = np.empty((len(schedule), M_max))
    for i, phi in enumerate(schedule):
        alloc = rate_family(phi)
        if not isinstance(alloc, RateAllocation):
            alloc = RateAllocation(alloc)
        m = min(M_max, alloc.phi)
        cum = np.cumsum(np.arange(1, m + 1) * alloc.rates[:m])
        table[i, :m] = cum
        table[i, m:] = cum[-1]

    last, prev = table[-1], table[-2]
    ok = (last > tol) & (np.abs(last - prev) < tol / 10)
    witness = int(np.argmax(ok)) + 1 if ok.any() else None
    col = (witness or M_max) - 1
    evidence = tuple((phi, float(table[i, col])) for i, phi in enumerate(schedule))
    return ScalabilityVerdict(witness is not None, witness, evidence, table)


def uniform_rates(lambda0: float) -> Callable[[int], RateAllocation]:
    """lambda_phi(l) = lambda0 / phi."""
    return lambda phi: RateAllocation(np.full(phi, lambda0 / phi))


def equal_selection_rates(lambda0: float) -> Callable[[int], RateAllocation]:
    """lambda_phi(l) = l lambda0 / (phi(phi+1)/2): destinations picked uniformly among nodes.

    Taken literally, the total rate is lambda0 times a phi-dependent constant;
    it is the workload sum_l lambda(l) that scales as 1/phi.
    """
    def family(phi):
        l = np.arange(1, phi + 1)
        return RateAllocation(l * lambda0 / (phi * (phi + 1) / 2))
    return family


def fixed_support_rates(lambda0: float, alpha) -> Callable[[int], RateAllocation]:
    """lambda(l) = lambda0 alpha(l) with alpha a pmf whose support does not grow with phi."""
    alpha = np.asarray(alpha, dtype=float)

    def family(phi):
        rates = np.zeros(max(phi, alpha.size))
        rates[: alpha.size] = lambda0 * alpha
        return RateAllocation(rates[:phi] if phi >= alpha.size else rates)
    return family


def geometric_over_l_rates(lambda0: float, g: float) -> Callable[[int], RateAllocation]:
    """lambda(l) = lambda0 (1-g)^(l-1) g / l."""
    def family(phi):
        l = np.arange(1, phi + 1)
        return RateAllocation(lambda0 * np.exp((l - 1) * math.log1p(-g)) * g / l)
    return family


# -- traffic scaling laws ---------------------------------------------------


@dataclass(frozen=True)
class PowerLaw:
    """Density c0 l^alpha on [epsilon, inf)."""
    alpha: float
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.alpha < -1:
            raise ValueError("power law needs alpha < -1 to be normalizable")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class Exponential:
    """Density c0 l^alpha exp(-beta l) on [0, inf)."""
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > -1 and self.beta > 0):
            raise ValueError("exponential law needs alpha > -1 and beta > 0")


@dataclass(frozen=True)
class Normal:
    """Density c0 l^alpha exp(-beta l^2) on [0, inf)."""
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > -1 and self.beta > 0):
            raise ValueError("normal law needs alpha > -1 and beta > 0")


@dataclass(frozen=True)
class Rayleigh:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Rayleigh sigma must be positive")

    def as_normal(self) -> Normal:
        return Normal(1.0, 1.0 / (2 * self.sigma ** 2))


@dataclass(frozen=True)
class Geometric:
    """Discrete law (1-g)^(l-1) g on l = 1, 2, ..."""
    g: float

    def __post_init__(self):
        if not 0 < self.g <= 1:
            raise ValueError("geometric parameter must lie in (0, 1]")


ScalingLaw = Union[PowerLaw, Exponential, Normal, Rayleigh, Geometric]


def _normal_raw_moment(law: Normal, k: int) -> float:
    # int_0^inf l^(alpha+k) e^(-beta l^2) dl, normalized
    s = (law.alpha + k + 1) / 2
    s0 = (law.alpha + 1) / 2
    return math.exp(special.gammaln(s) - special.gammaln(s0)) / law.beta ** (k / 2)


def law_density(law: ScalingLaw) -> Callable[[float], float]:
    if isinstance(law, Rayleigh):
        law = law.as_normal()
    if isinstance(law, PowerLaw):
        a, eps = law.alpha, law.epsilon
        c0 = -(1 + a) * eps ** (-(1 + a))
        return lambda x: c0 * x ** a if x >= eps else 0.0
    if isinstance(law, Exponential):
        a, b = law.alpha, law.beta
        logc0 = (a + 1) * math.log(b) - special.gammaln(a + 1)
        return lambda x: math.exp(logc0 + a * math.log(x) - b * x) if x > 0 else 0.0
    if isinstance(law, Normal):
        a, b = law.alpha, law.beta
        logc0 = math.log(2) + (a + 1) / 2 * math.log(b) - special.gammaln((a + 1) / 2)
        return lambda x: math.exp(logc0 + a * math.log(x) - b * x * x) if x > 0 else 0.0
    raise TypeError(f"{type(law).__name__} has no density")


def law_cdf(law: ScalingLaw, x: float) -> float:
    """Pr{L <= x}."""
    if isinstance(law, Rayleigh):
        law = law.as_normal()
    if isinstance(law, PowerLaw):
        if x <= law.epsilon:
            return 0.0
        return 1.0 - (x / law.epsilon) ** (1 + law.alpha)
    if isinstance(law, Exponential):
        return float(special.gammainc(law.alpha + 1, law.beta * max(x, 0.0)))
    if isinstance(law, Normal):
        return float(special.gammainc((law.alpha + 1) / 2, law.beta * max(x, 0.0) ** 2))
    if isinstance(law, Geometric):
        if x < 1:
            return 0.0
        return 1.0 - (1 - law.g) ** math.floor(x)
    raise TypeError(f"unknown law {law!r}")


@dataclass(frozen=True)
class ScalingLawStats:
    c0: float
    mean: float | None
    second_moment: float | None
    workload_bias: float | None
    mgf: Callable[[float], float] = field(repr=False, compare=False)

    @property
    def mean_divergent(self) -> bool:
        return self.mean is None

    @property
    def second_moment_divergent(self) -> bool:
        return self.second_moment is None

    def require_mean(self) -> float:
        if self.mean is None:
            raise DivergentMomentError("mean SD distance diverges for this law")
        return self.mean


def _numeric_mgf(law: ScalingLaw) -> Callable[[float], float]:
    dens = law_density(law)
    lo = law.epsilon if isinstance(law, PowerLaw) else 0.0

    def mgf(t: float) -> float:
        if t > 0:
            raise ValueError("mgf evaluated only for t <= 0")
        val, _ = integrate.quad(lambda x: math.exp(t * x) * dens(x), lo, np.inf, limit=200)
        return val
    return mgf


def rayleigh_mgf(sigma: float, t: float) -> float:
    """E[e^(tL)] for Rayleigh(sigma), closed form with the error function."""
    st = sigma * t
    return 1.0 + st * math.exp(st * st / 2) * math.sqrt(math.pi / 2) * (
        math.erf(st / math.sqrt(2)) + 1.0)


def scaling_law_stats(law: ScalingLaw) -> ScalingLawStats:
    """Normalization constant, first two moments, workload bias and mgf of a law.

    Continuous laws use the continuous workload bias E[L^2] / (2 E[L]^2); the
    geometric law is discrete and uses (E[L^2] + E[L]) / (2 E[L]^2). Missing
    moments are reported as ``None``.
    """
    if isinstance(law, Geometric):
        g = law.g
        m1, m2 = 1 / g, (2 - g) / g ** 2

        def mgf(t):
            if t > 0:
                raise ValueError("mgf evaluated only for t <= 0")
            z = math.exp(t)
            return g * z / (1 - (1 - g) * z)
        return ScalingLawStats(g, m1, m2, (m2 + m1) / (2 * m1 * m1), mgf)

    if isinstance(law, PowerLaw):
        a, eps = law.alpha, law.epsilon
        c0 = -(1 + a) * eps ** (-(1 + a))
        m1 = (1 + a) * eps / (2 + a) if a < -2 else None
        m2 = (1 + a) * eps ** 2 / (3 + a) if a < -3 else None
        u = (a + 2) ** 2 / (2 * (a + 1) * (a + 3)) if a < -3 else None
        return ScalingLawStats(c0, m1, m2, u, _numeric_mgf(law))

    if isinstance(law, Exponential):
        a, b = law.alpha, law.beta
        c0 = math.exp((a + 1) * math.log(b) - special.gammaln(a + 1))
        m1 = (a + 1) / b
        m2 = (a + 1) * (a + 2) / b ** 2

        def mgf(t):
            if t > 0:
                raise ValueError("mgf evaluated only for t <= 0")
            return (b / (b - t)) ** (a + 1)
        return ScalingLawStats(c0, m1, m2, m2 / (2 * m1 * m1), mgf)

    if isinstance(law, (Normal, Rayleigh)):
        nl = law.as_normal() if isinstance(law, Rayleigh) else law
        a, b = nl.alpha, nl.beta
        c0 = math.exp(math.log(2) + (a + 1) / 2 * math.log(b) - special.gammaln((a + 1) / 2))
        m1 = _normal_raw_moment(nl, 1)
        m2 = _normal_raw_moment(nl, 2)
        if isinstance(law, Rayleigh):
            sigma = law.sigma
            mgf = lambda t: rayleigh_mgf(sigma, t)  # noqa: E731
        else:
            mgf = _numeric_mgf(nl)
        return ScalingLawStats(c0, m1, m2, m2 / (2 * m1 * m1), mgf)

    raise TypeError(f"unknown law {law!r}")


def alpha_for_region(r_t: float, epsilon: float, coverage: float = 0.99) -> float:
    """Power-law exponent that puts a ``coverage`` fraction of traffic within radius r_t."""
    if not r_t > epsilon:
        raise ValueError("traffic region radius must exceed the minimum SD distance")
    if not 0 < coverage < 1:
        raise ValueError("coverage must lie in (0, 1)")
    return math.log(1 - coverage) / math.log(r_t / epsilon) - 1


def relative_throughput(alpha: float, epsilon: float = 1.0) -> float:
    """lambda in units of theta / epsilon, i.e. epsilon / E[L]; zero when E[L] diverges."""
    mean = scaling_law_stats(PowerLaw(alpha, epsilon)).mean
    return 0.0 if mean is None else epsilon / mean


def region_sweep(r_t_values, epsilon: float, coverage: float = 0.99) -> list[tuple[float, float, float]]:
    """Rows (r_t, alpha, relative throughput) across traffic-region radii."""
    rows = []
    for r in r_t_values:
        a = alpha_for_region(float(r), epsilon, coverage)
        rows.append((float(r), a, relative_throughput(a, epsilon)))
    return rows


def scaling_law_discretize(law: ScalingLaw, phi: int) -> HopCountPmf:
    """Bin a scaling law onto hop counts 1..phi.

    Hop l collects the mass of [l - 1/2, l + 1/2). Mass below 3/2 goes to
    l = 1 and mass above phi - 1/2 goes to l = phi, so nothing is dropped.
    """
    if phi < 1:
        raise ValueError("phi must be >= 1")
    if isinstance(law, Geometric):
        l = np.arange(1, phi + 1)
        probs = np.exp((l - 1) * math.log1p(-law.g)) * law.g if law.g < 1 else (l == 1) * 1.0
        probs = probs.astype(float)
        probs[-1] += 1.0 - probs.sum()
        return HopCountPmf.normalized(np.clip(probs, 0, None))
    edges = np.arange(1, phi) + 0.5
    cdf = np.array([law_cdf(law, e) for e in edges])
    cdf = np.concatenate(([0.0], cdf, [1.0]))
    return HopCountPmf.normalized(np.clip(np.diff(cdf), 0, None))


# -- distribution mini-language ---------------------------------------------

_SPEC_RE = re.compile(r"^\s*([a-z]+)\s*:(.*)$")


def parse_distribution(text: str, phi: int | None = None) -> HopCountPmf:
    """Parse ``geometric:0.2``, ``uniform:50``, ``power:-4:1.0``, ``rayleigh:1.0``,
    ``explicit:[p1,p2,...]`` (also ``point:5``) into a hop-count pmf.

    Continuous laws are discretized over ``phi`` hops (default 200).
    """
    m = _SPEC_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse distribution {text!r}")
    kind, rest = m.group(1), m.group(2).strip()
    try:
        if kind == "explicit":
            return HopCountPmf.normalized(json.loads(rest))
        args = [float(v) for v in rest.split(":")]
    except (ValueError, json.JSONDecodeError) as exc:
        raise ValueError(f"bad parameters in {text!r}") from exc
    nphi = 200 if phi is None else phi
    if kind == "geometric" and len(args) == 1:
        if phi is None:
            return HopCountPmf.geometric(args[0])
        return scaling_law_discretize(Geometric(args[0]), phi)
    if kind == "uniform" and len(args) == 1 and args[0] == int(args[0]):
        return HopCountPmf.uniform(int(args[0]))
    if kind == "point" and len(args) == 1 and args[0] == int(args[0]):
        return HopCountPmf.point_mass(int(args[0]))
    if kind == "power" and len(args) in (1, 2):
        return scaling_law_discretize(PowerLaw(*args), nphi)
    if kind == "rayleigh" and len(args) == 1:
        return scaling_law_discretize(Rayleigh(args[0]), nphi)
    if kind == "exponential" and len(args) == 2:
        return scaling_law_discretize(Exponential(*args), nphi)
    if kind == "normal" and len(args) == 2:
        return scaling_law_discretize(Normal(*args), nphi)
    raise ValueError(f"unknown distribution string {text!r}")
