"""Per-hop delay of a buffered slotted-Aloha node modeled as a Geo/G/1 queue.

The head-of-line packet is sent at once when fresh and with probability q per
slot after a collision; each attempt succeeds with probability p. Arrivals
(own plus relayed packets) come at rate theta per slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from .distributions import HopCountPmf
from .pmf import DelayPmf

TAIL_CUTOFF = 1e-10


class UnstableQueueError(ValueError):
    """Offered load theta * E[X] reaches the service capacity of a node."""


class CapacityExceededError(ValueError):
    """No stable success probability exists at this load."""


class DomainError(ValueError):
    """Generating function evaluated outside its convergence region."""


@dataclass(frozen=True)
class ContentionGeometry:
    n: int
    area: float
    radius: float

    def __post_init__(self):
        if self.n < 1 or self.area <= 0 or self.radius <= 0:
            raise ValueError("geometry needs n >= 1, area > 0, radius > 0")
        if self.n_int < 1:
            raise ValueError("fewer than one node inside the interference range")

    @classmethod
    def from_n_int(cls, n_int: float) -> "ContentionGeometry":
        # unit density; radius chosen to hold n_int nodes
        return cls(n=max(1, math.ceil(n_int)), area=float(max(1, math.ceil(n_int))),
                   radius=math.sqrt(n_int / math.pi))

    @property
    def density(self) -> float:
        return self.n / self.area

    @property
    def n_int(self) -> float:
        return math.pi * self.radius ** 2 * self.density


def access_capacity(geom: ContentionGeometry | float) -> float:
    """Largest sustainable node throughput e^-1 / (pi R^2 sigma)."""
    n_int = geom.n_int if isinstance(geom, ContentionGeometry) else float(geom)
    return math.exp(-1) / n_int


def check_flow(lam: float, pmf: HopCountPmf | float, geom: ContentionGeometry | float) -> bool:
    """True when the transport load lambda E[L] fits under the access capacity."""
    mean_l = pmf.mean if isinstance(pmf, HopCountPmf) else float(pmf)
    return lam * mean_l <= access_capacity(geom)


def solve_success_probability(theta: float, n_int: float, q: float | None = None,
                              equation: str = "attempt") -> float:
    """Stable per-attempt success probability under load ``theta``.

    ``equation="attempt"`` (default) solves p = exp(-theta n_int / p), where
    theta n_int / p is the attempt rate of the contending head-of-line
    packets, and returns its larger (stable) root. A root exists only when
    theta n_int <= 1/e, the access capacity. ``equation="throughput"`` solves
    p = exp(-theta n_int p), which has exactly one root in (0, 1].

    ``q`` is accepted for call-site symmetry; stability in q is the caller's
    responsibility.
    """
    if theta < 0 or n_int <= 0:
        raise ValueError("theta must be >= 0 and n_int > 0")
    k = theta * n_int
    if k == 0:
        return 1.0
    if equation == "attempt":
        if k > math.exp(-1) + 1e-15:
            raise CapacityExceededError(
                f"theta * n_int = {k:.6g} exceeds 1/e; no stable success probability")
        k = min(k, math.exp(-1))
        # p ln p + k = 0 has its larger root in [1/e, 1]
        p = brentq(lambda p: p * math.log(p) + k, math.exp(-1), 1.0, xtol=1e-15, rtol=1e-15,
                   maxiter=1_000_000)
        residual = abs(p - math.exp(-k / p))
    elif equation == "throughput":
        p = brentq(lambda p: p - math.exp(-k * p), 0.0, 1.0, xtol=1e-15, rtol=1e-15,
                   maxiter=1_000_000)
        residual = abs(p - math.exp(-k * p))
    else:
        raise ValueError(f"unknown equation {equation!r}")
    if residual > 1e-10 and k < math.exp(-1):
        raise ArithmeticError(f"success probability did not converge (residual {residual:.3g})")
    return p


def _rational_derivs(num: Polynomial, den: Polynomial, z: float = 1.0):
    """Value and first two derivatives of num/den at z, by the quotient rule."""
    n0, n1, n2 = num(z), num.deriv(1)(z), num.deriv(2)(z)
    d0, d1, d2 = den(z), den.deriv(1)(z), den.deriv(2)(z)
    f0 = n0 / d0
    f1 = (n1 * d0 - n0 * d1) / d0 ** 2
    f2 = (n2 - 2 * f1 * d1 - f0 * d2) / d0
    return f0, f1, f2


@dataclass(frozen=True)
class ServiceStats:
    mean: float
    var: float
    pole: float
    p: float
    q: float

    def mgf(self, z: float) -> float:
        if not 0 <= z < self.pole:
            raise DomainError(f"z={z!r} outside [0, {self.pole!r})")
        p, q = self.p, self.q
        return p * z * (1 - (1 - q) * z) / (1 - (1 - p * q) * z)


@dataclass(frozen=True)
class PerHopStats:
    mean: float
    var: float
    model: "AlohaHopModel"

    def mgf(self, z: float) -> float:
        return self.model.mgf_T(z)


@dataclass(frozen=True)
class AlohaHopModel:
    """Per-hop delay law of a buffered Aloha node.

    Attributes:
        p: success probability of an attempt, in (0, 1].
        q: retransmission probability of a backlogged packet, in (0, 1].
        theta: node throughput (arrival rate) per slot, in [0, 1).
    """

    p: float
    q: float
    theta: float

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if self.theta * self.mean_X >= 1:
            raise UnstableQueueError(
                f"theta * E[X] = {self.theta * self.mean_X:.6g} >= 1: offered load exceeds "
                "the service capacity")

    @property
    def deterministic(self) -> bool:
        # p = 1: every attempt succeeds, X = T = 1
        return self.p == 1.0

    @property
    def mean_X(self) -> float:
        return 1.0 + (1.0 - self.p) / (self.p * self.q)

    @property
    def p0(self) -> float:
        return 1.0 - self.theta * self.mean_X

    @property
    def a(self) -> float:
        return 1.0 - self.q

    @property
    def b(self) -> float:
        return (1 - self.p * self.q) - self.p * (1 - self.q) * self.theta

    @property
    def c(self) -> float:
        return self.b / (1 - self.theta)

    @property
    def beta1(self) -> float:
        if self.deterministic:
            return 1.0
        return self.p0 * self.p * (1 - self.q) / (self.c * (1 - self.theta))

    @property
    def beta2(self) -> float:
        if self.deterministic:
            return 0.0
        c = self.c
        return self.p0 * self.p * (c + self.q - 1) / (c * (1 - c) * (1 - self.theta))

    @cached_property
    def _mgf_T_poly(self):
        num = Polynomial([0.0, self.p0 * self.p, -self.p0 * self.p * self.a])
        den = Polynomial([1 - self.theta, -self.b])
        return num, den

    @property
    def pole_T(self) -> float:
        return math.inf if self.deterministic or self.c == 0 else 1.0 / self.c

    def mgf_T(self, z: float) -> float:
        if self.deterministic:
            if z < 0:
                raise DomainError("z must be non-negative")
            return z
        if not 0 <= z < self.pole_T:
            raise DomainError(f"z={z!r} outside [0, 1/c) = [0, {self.pole_T!r})")
        num, den = self._mgf_T_poly
        return float(num(z) / den(z))

    @cached_property
    def _T_moments(self):
        if self.deterministic:
            return 1.0, 0.0
        _, f1, f2 = _rational_derivs(*self._mgf_T_poly)
        return float(f1), float(f2 + f1 - f1 * f1)

    @property
    def mean_T(self) -> float:
        return self._T_moments[0]

    @property
    def var_T(self) -> float:
        return self._T_moments[1]

    def survival_T(self, x: float) -> float:
        """Pr{T > x} = beta2 c^floor(x) for x >= 1."""
        if x < 1:
            return 1.0
        if self.deterministic:
            return 0.0
        return self.beta2 * self.c ** math.floor(x)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "q": self.q, "theta": self.theta,
            "p0": self.p0, "a": self.a, "b": self.b, "c": self.c,
            "beta1": self.beta1, "beta2": self.beta2,
            "mean_X": self.mean_X, "mean_T": self.mean_T, "var_T": self.var_T,
        }


def build_hop_model(p: float, q: float, theta: float) -> AlohaHopModel:
    return AlohaHopModel(p, q, theta)


def hop_model_from_load(theta: float, q: float, n_int: float,
                        equation: str = "attempt") -> AlohaHopModel:
    """Hop model with p solved from the contention fixed point."""
    return AlohaHopModel(solve_success_probability(theta, n_int, q, equation), q, theta)


def service_stats(model: AlohaHopModel) -> ServiceStats:
    p, q = model.p, model.q
    if model.deterministic:
        return ServiceStats(mean=1.0, var=0.0, pole=1.0 / (1 - q) if q < 1 else math.inf, p=p, q=q)
    num = Polynomial([0.0, p, -p * (1 - q)])
    den = Polynomial([1.0, -(1 - p * q)])
    _, f1, f2 = _rational_derivs(num, den)
    pole = math.inf if p * q == 1 else 1.0 / (1 - p * q)
    return ServiceStats(mean=float(f1), var=float(f2 + f1 - f1 * f1), pole=pole, p=p, q=q)


def perhop_stats(model: AlohaHopModel) -> PerHopStats:
    return PerHopStats(model.mean_T, model.var_T, model)


def geo_g1_mgf_T(theta: float, mgf_X, mean_X: float, z: float) -> float:
    """Sojourn-time generating function of a Geo/G/1 queue for a generic service law."""
    mx = mgf_X(z)
    return (1 - theta * mean_X) * (z - 1) * mx / ((z - 1) + theta * (1 - mx))


def default_k_max(model: AlohaHopModel, cutoff: float = TAIL_CUTOFF) -> int:
    if model.deterministic or model.beta2 < cutoff:
        return 1
    return max(1, math.ceil(math.log(cutoff / model.beta2) / math.log(model.c)))


def perhop_pmf(model: AlohaHopModel, k_max: int | None = None) -> DelayPmf:
    """Pr{T = k} for k = 1..k_max with the remaining mass beta2 c^k_max kept as tail."""
    if k_max is None:
        k_max = default_k_max(model)
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if model.deterministic:
        masses = np.zeros(k_max)
        masses[0] = 1.0
        return DelayPmf(1, masses, 0.0)
    b1, b2, c = model.beta1, model.beta2, model.c
    k = np.arange(1, k_max + 1)
    masses = b2 * (1 - c) * c ** (k - 1)
    masses[0] += b1
    tail = b2 * c ** k_max
    # absorb float drift so masses + tail is exactly one to working precision
    drift = 1.0 - masses.sum() - tail
    masses[0] += drift
    return DelayPmf(1, masses, tail)
