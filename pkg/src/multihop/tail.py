"""Large-deviation bounds on the per-hop-normalized transport delay tail Pr{D > L x}.

The upper bound is the Chernoff bound mixed over L, M_L(exp(-I+(x))), with
I+ the Legendre transform of ln M_T. The lower bound mixes the event that
every hop exceeds x. Pr{D > L x} ~ exp(-I+(x) E[L]) is the mean-field
approximation, never above the upper bound by Jensen's inequality.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .aloha import AlohaHopModel, DomainError, perhop_pmf
from .distributions import HopCountPmf, mgf_L
from .pmf import DelayPmf
from .transport import conditional_sums

GOLDEN = (math.sqrt(5) - 1) / 2
TAIL_HEADER = ("x", "lower", "upper", "approx", "mc", "mc_ci")


@dataclass(frozen=True)
class RateFunctionEval:
    x: float
    i_plus: float
    i_minus: float
    phi_x: float
    omega_star: float
    a: float
    c: float
    A: float
    A_lower: float
    A_upper: float
    y1: float
    y2: float


def _check_x(hop: AlohaHopModel, x: float) -> bool:
    """Validate x for I+; True means x sits at the mean (rate zero)."""
    if not x > 1:
        raise DomainError(f"x={x!r}: per-hop delay budget must exceed one slot")
    mean = hop.mean_T
    if abs(x - mean) <= 1e-12 * mean:
        return True
    if x < mean:
        raise DomainError(f"x={x!r} is below the mean per-hop delay {mean!r}")
    return False


def rate_plus(hop: AlohaHopModel, x: float) -> RateFunctionEval:
    """Closed-form Legendre transform I+(x) of ln M_T for the buffered-Aloha hop law.

    The stationary point of x w - ln M_T(e^w) solves a quadratic in y = e^w;
    of its two roots only y2 in (0, 1/c) is a maximum, and
    phi(x) = c y2 lies in (0, 1).
    """
    at_mean = _check_x(hop, x)
    a, c, q = hop.a, hop.c, hop.q
    i_minus = rate_minus(hop, x)
    if hop.deterministic:
        # T = 1 surely; any budget above one slot is never exceeded
        return RateFunctionEval(x, math.inf, math.inf, 0.0, math.inf, a, c,
                                math.nan, math.nan, math.nan, math.inf, math.inf)
    u = 1.0 / (x - 1)
    r = (c + a) / (c - a)
    A = u * u + 2 * r * u + 1
    A_lo, A_hi = (u + 1) ** 2, (u + r) ** 2
    if a == 0:
        phi = (x - 1) / x
        y1 = math.inf
    else:
        root = math.sqrt(A)
        # (c+a) + (c-a)u - (c-a)sqrt(A), rewritten to avoid cancellation:
        # numerator * conjugate = 4ac, so phi = 2c / ((c+a) + (c-a)(u + sqrt(A)))
        phi = 2 * c / ((c + a) + (c - a) * (u + root))
        y1 = ((c + a) + (c - a) * u + (c - a) * root) / (2 * a * c)
    y2 = phi / c
    # with a = 0 the A brackets coincide and y1 sits at infinity; near a = 0
    # they differ by rounding only, hence the relative slack
    slack = 1e-12 * A
    if not (0 < y2 < 1 / c and (a == 0 or (A_lo - slack < A < A_hi + slack and y1 > 1 / a))):
        raise ArithmeticError(f"root bracketing failed at x={x!r} (y1={y1!r}, y2={y2!r})")
    if at_mean:
        i_plus = 0.0
    else:
        i_plus = ((x - 1) * (math.log(phi) - math.log(c)) + math.log1p(-phi)
                  - math.log(1 / q - (1 - q) / q * phi / c) - math.log1p(-c))
        i_plus = max(i_plus, 0.0)
    return RateFunctionEval(x, i_plus, i_minus, phi, math.log(y2), a, c,
                            A, A_lo, A_hi, y1, y2)


def omega(hop: AlohaHopModel, x: float, w: float) -> float:
    """x w - ln M_T(e^w)."""
    return x * w - math.log(hop.mgf_T(math.exp(w)))


def rate_plus_numeric(hop: AlohaHopModel, x: float, tol: float = 1e-12) -> float:
    """sup_w {x w - ln M_T(e^w)} over (0, ln(1/c)) by golden-section search."""
    if _check_x(hop, x):
        return 0.0
    if hop.deterministic:
        return math.inf
    lo, hi = 0.0, -math.log(hop.c)
    f = lambda w: omega(hop, x, w)  # noqa: E731
    m1 = hi - GOLDEN * (hi - lo)
    m2 = lo + GOLDEN * (hi - lo)
    f1, f2 = f(m1), f(m2)
    while hi - lo > tol:
        if f1 < f2:
            lo, m1, f1 = m1, m2, f2
            m2 = lo + GOLDEN * (hi - lo)
            f2 = f(m2)
        else:
            hi, m2, f2 = m2, m1, f1
            m1 = hi - GOLDEN * (hi - lo)
            f1 = f(m1)
    return max(f1, f2, 0.0)


def rate_minus(hop: AlohaHopModel, x: float) -> float:
    """(x - 1) ln(1/c): geometric-tail exponent of the all-hops-exceed lower bound."""
    if x < 1:
        raise DomainError(f"x={x!r}: per-hop delay budget must be at least one slot")
    if hop.deterministic:
        return 0.0 if x == 1 else math.inf
    return (x - 1) * -math.log(hop.c)


def rate_minus_exact(hop: AlohaHopModel, x: float) -> float:
    """-ln Pr{T > x} for the hop law itself."""
    s = hop.survival_T(x)
    return math.inf if s == 0 else -math.log(s)


@dataclass(frozen=True, eq=False)
class TailCurve:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    approx: np.ndarray
    mc_estimate: np.ndarray | None = None
    mc_ci_halfwidth: np.ndarray | None = None
    mean_L: float | None = None

    def with_monte_carlo(self, estimate, halfwidth) -> "TailCurve":
        return TailCurve(self.grid, self.lower, self.upper, self.approx,
                         np.asarray(estimate, float), np.asarray(halfwidth, float), self.mean_L)

    def rows(self):
        for i, x in enumerate(self.grid):
            mc = "" if self.mc_estimate is None else f"{self.mc_estimate[i]:.12g}"
            ci = "" if self.mc_ci_halfwidth is None else f"{self.mc_ci_halfwidth[i]:.12g}"
            yield [f"{x:.12g}", f"{self.lower[i]:.12g}", f"{self.upper[i]:.12g}",
                   f"{self.approx[i]:.12g}", mc, ci]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TAIL_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


def _mgf_at_exp(pmf: HopCountPmf, rate: float) -> float:
    return 0.0 if math.isinf(rate) else mgf_L(pmf, math.exp(-rate))


def tail_bounds(pmf: HopCountPmf, hop: AlohaHopModel, grid, lower: str = "eq74") -> TailCurve:
    """Upper bound, lower bound and approximation of Pr{D > L x} on a grid of x.

    ``lower="eq74"`` uses I-(x) = (x-1) ln(1/c); ``lower="exact"`` uses
    -ln Pr{T > x} of the hop law, which is a valid bound for every pmf.
    """
    grid = np.asarray(grid, dtype=float)
    rm = {"eq74": rate_minus, "exact": rate_minus_exact}[lower]
    lo, up, ap = (np.empty(grid.size) for _ in range(3))
    mean_L = pmf.mean
    for i, x in enumerate(grid):
        ip = rate_plus(hop, x).i_plus
        up[i] = _mgf_at_exp(pmf, ip)
        lo[i] = _mgf_at_exp(pmf, rm(hop, x))
        ap[i] = 0.0 if math.isinf(ip) else math.exp(-ip * mean_L)
    return TailCurve(grid, lo, up, ap, mean_L=mean_L)


def exact_tail(pmf: HopCountPmf, hop_pmf: DelayPmf, grid) -> np.ndarray:
    """Pr{D > L x} for each x by brute-force convolution (strict inequality, D >= floor(Lx)+1).

    Truncated hop-pmf mass is counted as exceeding every threshold.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    ls = np.arange(1, pmf.phi + 1)
    thresholds = np.floor(np.outer(ls, grid)).astype(np.int64)
    cap = int(thresholds.max()) + 2
    out = np.zeros(grid.size)
    for l, s in conditional_sums(hop_pmf, pmf.phi, cap):
        f = pmf.probs[l - 1]
        if f == 0:
            continue
        # summing the upper tail directly keeps small probabilities accurate
        upper = np.concatenate((np.cumsum(s[::-1])[::-1], [0.0]))
        lost = max(0.0, 1.0 - s.sum())
        k = np.minimum(thresholds[l - 1] + 1, s.size)
        out += f * np.clip(upper[k] + lost, 0.0, 1.0)
    return out


def precision_delta(pmf: HopCountPmf, hop: AlohaHopModel, x: float,
                    hop_pmf: DelayPmf | None = None) -> float:
    """Relative gap delta in ln Pr{D > L x} = -I+(x) E[L] (1 + delta), from the exact tail."""
    if hop_pmf is None:
        hop_pmf = perhop_pmf(hop)
    prob = float(exact_tail(pmf, hop_pmf, [x])[0])
    if prob <= 0:
        raise ArithmeticError("exact tail underflowed to zero")
    ip = rate_plus(hop, x).i_plus
    return -math.log(prob) / (ip * pmf.mean) - 1.0
