"""Markov renewal description of a packet's journey and its transport delay D.

The residual hop count of a tagged packet counts down one state per forwarded
hop and renews from f_L after delivery. D is the sum of L i.i.d. per-hop
delays, so M_D(z) = M_L(M_T(z)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.signal import fftconvolve

from .aloha import AlohaHopModel, DomainError
from .distributions import HopCountPmf, mgf_L
from .pmf import DelayPmf

__all__ = [
    "DelayPmf", "TransportModel", "TransportStats", "FlowRelations", "Dispersion",
    "PrecisionError", "transition_matrix", "embedded_limits", "transport_stats",
    "flow_relations", "transport_pmf_oracle", "conditional_sums", "dispersion_varY",
]

ORACLE_MAX_SUPPORT = 200_000
ORACLE_MAX_TAIL = 1e-6
_DIRECT_CONV_LIMIT = 2_000_000


class PrecisionError(ArithmeticError):
    """The convolution oracle had to discard too much probability mass."""


def transition_matrix(pmf: HopCountPmf) -> np.ndarray:
    """Embedded-chain transition matrix on residual hop counts 1..phi."""
    phi = pmf.phi
    P = np.zeros((phi, phi))
    P[0, :] = pmf.probs
    if phi > 1:
        P[np.arange(1, phi), np.arange(0, phi - 1)] = 1.0
    return P


def embedded_limits(pmf: HopCountPmf) -> np.ndarray:
    """pi_l = Pr{L >= l} / E[L]; also the long-run fraction of time in state l,
    since every state has the same mean holding time E[T]."""
    survival = np.cumsum(pmf.probs[::-1])[::-1]
    return survival / pmf.mean


@dataclass(frozen=True, eq=False)
class TransportModel:
    pmf: HopCountPmf
    hop: AlohaHopModel

    @property
    def mean_D(self) -> float:
        return self.pmf.mean * self.hop.mean_T

    @property
    def second_moment_D(self) -> float:
        ET, vT = self.hop.mean_T, self.hop.var_T
        return self.pmf.second_moment * ET * ET + self.pmf.mean * vT

    @property
    def var_D(self) -> float:
        return self.second_moment_D - self.mean_D ** 2

    @property
    def residual_mean_D(self) -> float:
        ED = self.mean_D
        return (self.second_moment_D + ED) / (2 * ED)

    @property
    def residual_mean_D_decomposed(self) -> float:
        """Same quantity written through the hop-count and per-hop moments."""
        ET, vT = self.hop.mean_T, self.hop.var_T
        EL, EL2 = self.pmf.mean, self.pmf.second_moment
        return (EL2 * ET + EL * (vT / ET + 1)) / (2 * EL)

    def mgf_D(self, z: float) -> float:
        if not 0 <= z <= 1:
            raise DomainError(f"z={z!r} outside [0, 1]")
        # M_T(z) <= 1 on [0, 1]; clip the last-ulp overshoot at z = 1
        return mgf_L(self.pmf, min(self.hop.mgf_T(z), 1.0))

    def residual_mgf_D(self, z: float) -> float:
        """Generating function of the residual transport delay, z (1 - M_D(z)) / ((1 - z) E[D])."""
        if not 0 <= z <= 1:
            raise DomainError(f"z={z!r} outside [0, 1]")
        if z == 1.0:
            return 1.0
        if z > 1 - 1e-7:
            # (1 - M_D(z)) / (1 - z) to first order in 1 - z; the ratio cancels badly here
            h = 1 - z
            ED, ED2 = self.mean_D, self.second_moment_D
            fact2 = ED2 - ED
            return z * (ED - fact2 * h / 2) / ED
        return z * (1 - self.mgf_D(z)) / ((1 - z) * self.mean_D)


@dataclass(frozen=True)
class TransportStats:
    mean: float
    second_moment: float
    variance: float
    residual_mean: float
    model: TransportModel

    def mgf(self, z: float) -> float:
        return self.model.mgf_D(z)

    def residual_mgf(self, z: float) -> float:
        return self.model.residual_mgf_D(z)


def transport_stats(model: TransportModel) -> TransportStats:
    return TransportStats(model.mean_D, model.second_moment_D, model.var_D,
                          model.residual_mean_D, model)


@dataclass(frozen=True)
class FlowRelations:
    theta: float
    lam: float
    mean_D: float
    population_from_input: float   # n lambda E[D]
    population_from_buffers: float  # n theta E[T]


def flow_relations(theta: float, pmf: HopCountPmf, hop: AlohaHopModel, n: int) -> FlowRelations:
    """Network throughput and Little's-law populations implied by node throughput theta."""
    lam = theta / pmf.mean
    mean_D = theta * hop.mean_T / lam
    return FlowRelations(theta, lam, mean_D, n * lam * mean_D, n * theta * hop.mean_T)


def _convolve(a: np.ndarray, b: np.ndarray, cap: int) -> np.ndarray:
    if a.size * b.size <= _DIRECT_CONV_LIMIT:
        out = np.convolve(a, b)[:cap]
    else:
        out = fftconvolve(a, b)[:cap]
        np.clip(out, 0.0, None, out=out)
    return out


def conditional_sums(hop_pmf: DelayPmf, l_max: int, cap: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (l, pmf of T_1 + ... + T_l on 0..cap-1) for l = 1..l_max.

    Entries below ``cap`` are exact for the truncated hop pmf; mass at or
    above ``cap`` is the complement of the returned array's sum.
    """
    t = hop_pmf.dense()[:cap]
    s = np.zeros(1)
    s[0] = 1.0
    for l in range(1, l_max + 1):
        s = _convolve(s, t, cap)
        yield l, s


def transport_pmf_oracle(pmf: HopCountPmf, hop_pmf: DelayPmf,
                         max_support: int = ORACLE_MAX_SUPPORT,
                         max_tail: float = ORACLE_MAX_TAIL) -> DelayPmf:
    """pmf of D by brute-force mixing of l-fold convolutions of the hop pmf.

    The hop pmf's own truncated tail is carried into the result's tail.
    Accumulation runs in increasing l, so the result does not depend on
    scheduling.
    """
    if hop_pmf.residual_tail > 1e-9:
        raise PrecisionError("hop pmf truncated too aggressively (tail > 1e-9)")
    phi = pmf.phi
    # support needed so the conditional tails beyond the cap stay negligible
    mean_t = hop_pmf.mean()
    sd_t = math.sqrt(max(hop_pmf.moment(2) - mean_t ** 2, 0.0))
    cap = int(min(max_support,
                  phi * mean_t + 12 * sd_t * math.sqrt(phi) + hop_pmf.last * 8 + 64))
    acc = np.zeros(cap)
    for l, s in conditional_sums(hop_pmf, phi, cap):
        f = pmf.probs[l - 1]
        if f > 0:
            acc[: s.size] += f * s
    tail = max(0.0, 1.0 - acc.sum())
    if tail > max_tail:
        raise PrecisionError(f"truncated mass {tail:.3g} exceeds {max_tail:.3g}")
    nz = np.flatnonzero(acc)
    return DelayPmf(int(nz[0]), acc[nz[0]: nz[-1] + 1], tail)


@dataclass(frozen=True)
class Dispersion:
    mean_Y: float
    var_Y: float


def dispersion_varY(pmf: HopCountPmf, hop: AlohaHopModel) -> Dispersion:
    """Mean and variance of the per-hop-averaged delay Y = D / L."""
    inv = float((pmf.probs / pmf.support).sum())
    return Dispersion(hop.mean_T, hop.var_T * inv)
