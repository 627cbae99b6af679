"""Fair rate allocations across hop classes under the node-throughput budget.

All allocations spend the same transmission resource: sum_l l lambda(l) = theta.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .distributions import RateAllocation, pmf_from_rates, distance_stats


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class FairnessResult:
    allocation: RateAllocation
    network_throughput: float
    workload_bias: float
    criterion: str
    approx_throughput: float | None = None
    approx_workload_bias: float | None = None
    feasible: bool = True
    residuals: tuple[float, float] = (0.0, 0.0)
    objective: float | None = None
    extra: dict = field(default_factory=dict)


def workload_bias_from_rates(rates, theta: float | None = None) -> float:
    """(sum l^2 lambda * sum lambda + theta sum lambda) / (2 theta^2)."""
    rates = np.asarray(rates, dtype=float)
    l = np.arange(1, rates.size + 1)
    if theta is None:
        theta = float(l @ rates)
    total = rates.sum()
    return float(((l * l) @ rates * total + theta * total) / (2 * theta * theta))


def _result(rates, theta, criterion, **kw) -> FairnessResult:
    alloc = RateAllocation(rates)
    return FairnessResult(alloc, alloc.lambda_total, workload_bias_from_rates(rates, theta),
                          criterion, **kw)


def harmonic(n: int) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1)))


def proportional_allocation(theta: float, phi: int) -> FairnessResult:
    """Maximizer of sum log lambda(l): lambda(l) = theta / (l phi).

    The throughput is reported exactly (harmonic sum) next to theta ln(phi)/phi,
    and the workload bias exactly, H_phi (phi + 3) / (4 phi), next to ln(phi)/4.
    """
    if theta <= 0 or phi < 1:
        raise ValueError("theta must be positive and phi >= 1")
    l = np.arange(1, phi + 1)
    rates = theta / (l * phi)
    return _result(rates, theta, "proportional",
                   approx_throughput=theta * math.log(phi) / phi,
                   approx_workload_bias=math.log(phi) / 4)


def maxmin_allocation(theta: float, phi: int) -> FairnessResult:
    """Equal rate 2 theta / (phi (phi + 1)) for every hop class."""
    if theta <= 0 or phi < 1:
        raise ValueError("theta must be positive and phi >= 1")
    rates = np.full(phi, 2 * theta / (phi * (phi + 1)))
    return _result(rates, theta, "maxmin",
                   approx_throughput=2 * theta / (phi + 1),
                   approx_workload_bias=(2 * phi + 4) / (3 * phi + 3))


def maxmin_bias_closed_form(phi: int) -> float:
    return (2 * phi + 4) / (3 * phi + 3)


def proportional_bias_closed_form(phi: int) -> float:
    return harmonic(phi) * (phi + 3) / (4 * phi)


def log_sum(alloc: RateAllocation) -> float:
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(alloc.rates)))


def _bias_extremes(phi: int) -> tuple[tuple[float, np.ndarray], tuple[float, np.ndarray]]:
    """(u, pmf) at the smallest and the largest reachable workload bias."""
    lo_pmf = np.zeros(phi)
    lo_pmf[-1] = 1.0
    lo = ((phi + 1) / (2 * phi), lo_pmf)
    hi = (1.0, np.eye(phi)[0])
    s = np.linspace(0, 1, 2001)
    for m in range(2, phi + 1):
        # u(s) for mass s at m, 1-s at 1
        m1 = 1 + s * (m - 1)
        m2 = 1 + s * (m * m - 1)
        u = (m2 + m1) / (2 * m1 * m1)
        i = int(np.argmax(u))
        if u[i] > hi[0]:
            pmf = np.zeros(phi)
            pmf[0], pmf[m - 1] = 1 - s[i], s[i]
            hi = (float(u[i]), pmf)
    return lo, hi


def feasible_bias_range(phi: int) -> tuple[float, float]:
    """Smallest and largest workload bias reachable with support in 1..phi.

    The minimum is the point mass at phi. The maximum is searched over
    two-point laws on {1, m}, which attain it for a ratio of moments; the
    grid makes it a slight underestimate.
    """
    lo, hi = _bias_extremes(phi)
    return lo[0], hi[0]


def optimize_with_qos(objective: Callable[[RateAllocation], float], theta: float,
                      u_target: float, phi: int, starts: int = 24,
                      seed: int = 20080509, tol: float = 1e-6) -> FairnessResult:
    """Maximize ``objective`` subject to the resource and workload-bias constraints.

    Rates are written lambda = theta v with sum l v(l) = 1, which turns the
    bias constraint into sum l^2 v * sum v + sum v = 2 u. The program is
    solved by SLSQP from ``starts`` seeded random feasible-for-resource
    points; the best point whose relative residuals are below ``tol`` wins.
    When no start reaches feasibility the result has ``feasible=False`` and
    carries the smallest residual seen; a target outside the reachable bias
    range skips the solver and reports the extreme law instead.
    """
    if phi < 1 or phi > 20:
        raise ValueError("optimize_with_qos supports 1 <= phi <= 20")
    if theta <= 0 or u_target <= 0.5:
        raise ValueError("theta must be positive and u_target > 1/2")
    l = np.arange(1, phi + 1, dtype=float)

    def residuals(v):
        return (float(l @ v - 1.0),
                float(((l * l) @ v * v.sum() + v.sum()) / (2 * u_target) - 1.0))

    if phi == 1:
        v = np.array([1.0])
        r = residuals(v)
        ok = abs(r[1]) <= tol
        res = _result(theta * v, theta, "custom", feasible=ok, residuals=r,
                      objective=objective(RateAllocation(theta * v)))
        return res

    def neg_obj(v):
        val = objective(RateAllocation(theta * np.maximum(v, 0.0)))
        return -val if np.isfinite(val) else 1e300

    (u_lo, f_lo), (u_hi, f_hi) = _bias_extremes(phi)
    if not u_lo * (1 - tol) <= u_target <= u_hi * (1 + 1e-3):
        # out of reach: the extreme law is the closest allocation
        f = f_lo if u_target < u_lo else f_hi
        v = f / (l @ f)
        return _result(theta * v, theta, "custom", feasible=False, residuals=residuals(v),
                       objective=objective(RateAllocation(theta * v)))

    rng = np.random.default_rng(seed)
    cons = [{"type": "eq", "fun": lambda v: l @ v - 1.0, "jac": lambda v: l},
            {"type": "eq", "fun": lambda v: ((l * l) @ v * v.sum() + v.sum()) - 2 * u_target,
             "jac": lambda v: (l * l) * v.sum() + (l * l) @ v + 1.0}]
    floor = 1e-9
    best, best_val, closest, closest_r = None, -math.inf, None, math.inf
    for _ in range(starts):
        w = rng.dirichlet(np.ones(phi))
        v0 = w / (l @ w)
        with warnings.catch_warnings():
            # SLSQP clips trial steps back into the bounds and says so
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = minimize(neg_obj, v0, method="SLSQP", constraints=cons,
                           bounds=[(floor, None)] * phi,
                           options={"maxiter": 500, "ftol": 1e-14})
        v = np.maximum(sol.x, 0.0)
        r = residuals(v)
        rn = max(abs(r[0]), abs(r[1]))
        if rn < closest_r:
            closest, closest_r = v, rn
        if rn <= tol:
            val = -neg_obj(v)
            if val > best_val:
                best, best_val = v, val
    if best is None:
        return _result(theta * closest, theta, "custom", feasible=False,
                       residuals=residuals(closest),
                       objective=objective(RateAllocation(theta * closest)))
    return _result(theta * best, theta, "custom", feasible=True,
                   residuals=residuals(best), objective=best_val)


def grid_search_qos(objective: Callable[[RateAllocation], float], theta: float,
                    u_target: float, phi: int, step: float = 1e-5,
                    u_tol: float = 1e-4) -> tuple[float, np.ndarray | None]:
    """Brute-force oracle for tiny phi (2 or 3): scan the resource simplex on a grid.

    Returns the best objective among grid points whose bias is within
    ``u_tol`` of the target, together with the maximizing rates. At phi = 2
    the crossings of the target are located by linear interpolation.
    """
    if phi == 2:
        lam2 = np.arange(0.0, theta / 2 + step / 2, step)
        lam1 = theta - 2 * lam2
        pts = np.stack([lam1, lam2], axis=1)
    elif phi == 3:
        g2, g3 = np.meshgrid(np.arange(0.0, theta / 2 + step / 2, step),
                             np.arange(0.0, theta / 3 + step / 2, step), indexing="ij")
        lam1 = theta - 2 * g2 - 3 * g3
        keep = lam1 >= 0
        pts = np.stack([lam1[keep], g2[keep], g3[keep]], axis=1)
    else:
        raise ValueError("grid oracle supports phi in {2, 3}")
    ll = np.arange(1, phi + 1)
    total = pts.sum(axis=1)
    u = ((pts @ (ll * ll)) * total + theta * total) / (2 * theta * theta)
    ok = np.abs(u - u_target) < u_tol
    if phi == 2:
        # the feasible set is a few points on a segment: interpolate each
        # sign change of u - u_target instead of accepting a u_tol band
        g = u - u_target
        k = np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)
        if k.size:
            w = (g[k] / (g[k] - g[k + 1]))[:, None]
            w = np.nan_to_num(w)
            pts = pts[k] + w * (pts[k + 1] - pts[k])
            ok = np.ones(len(pts), dtype=bool)
    if not ok.any():
        return -math.inf, None
    vals = np.array([objective(RateAllocation(p)) for p in pts[ok]])
    i = int(np.argmax(vals))
    return float(vals[i]), pts[ok][i]


def workload_bias(alloc: RateAllocation) -> float:
    return distance_stats(pmf_from_rates(alloc)).workload_bias
