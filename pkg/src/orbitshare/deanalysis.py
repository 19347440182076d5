"""Density evolution for two-replica CRDSA with intra-slot TIN-SIC.

Slot degrees are Poisson with mean ``2G`` (edge perspective), every user
has degree two, so the user-to-slot erasure probability simply equals the
incoming slot-to-user erasure probability and the recursion reduces to
``q <- f_s(q; G)``.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, special

from orbitshare.phy import Rate, TinSicModel, tau as tau_of


@dataclass(frozen=True)
class DeConfig:
    grid_points: int = 10_000
    fp_tolerance: float = 1e-10
    max_iterations: int = 100_000
    bisection_tolerance: float = 1e-4

    def __post_init__(self):
        if self.grid_points < 1000:
            raise ValueError("grid_points must be >= 1000")
        if self.max_iterations < 1000:
            raise ValueError("max_iterations must be >= 1000")
        for name in ("fp_tolerance", "bisection_tolerance"):
            v = getattr(self, name)
            if not 0 < v <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3], got {v}")


@dataclass(frozen=True)
class DeResult:
    tau: int
    threshold_g: float
    approx_max_throughput: Optional[float] = None
    load: Optional[float] = None
    residual_erasure: Optional[float] = None


def slot_erasure_given_degree(q, d: int, tau: int):
    """Probability that a replica in a degree-``d`` slot stays erased.

    Each of the ``d - 1`` other replicas is still uncancelled with
    probability ``q``; the replica is recovered when at most ``tau`` remain.
    """
    if d < 1:
        raise ValueError("slot degree must be >= 1")
    if d <= tau:
        return 0.0 * np.asarray(q, dtype=float) if np.ndim(q) else 0.0
    q = np.asarray(q, dtype=float)
    ok = sum(math.comb(d - 1, r) * q**r * (1.0 - q) ** (d - 1 - r) for r in range(tau + 1))
    out = 1.0 - ok
    return float(out) if out.ndim == 0 else out


def slot_erasure_avg(q, g: float, tau: int):
    """Slot-node erasure function ``f_s(q; G)`` averaged over Poisson degrees.

    Thinning the Poisson(2G) interferer count by ``q`` leaves Poisson(2Gq),
    so the average is the probability that more than ``tau`` survive.
    """
    out = special.gammainc(tau + 1, 2.0 * g * np.asarray(q, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def slot_erasure_avg_explicit(q, g: float, tau: int, rho_floor: float = 1e-17):
    """Direct degree sum of :func:`slot_erasure_given_degree` (test oracle)."""
    q = np.asarray(q, dtype=float)
    lam = 2.0 * g
    total = np.zeros_like(q)
    d = 1
    while True:
        rho = math.exp(-lam + (d - 1) * math.log(lam) - math.lgamma(d))
        if d - 1 > lam and rho < rho_floor:
            break
        if d > tau:
            total = total + rho * slot_erasure_given_degree(q, d, tau)
        d += 1
    return float(total) if total.ndim == 0 else total


def de_iterate(g: float, tau: int, cfg: DeConfig = DeConfig()) -> float:
    """Run the erasure recursion from ``q = 1`` and return the final erasure probability.

    Stops once the geometric tail bound on the distance to the fixed point
    falls under ``cfg.fp_tolerance``. Warns if the budget runs out.
    """
    if not g > 0:
        raise ValueError("load must be positive")
    q = 1.0
    prev_step = None
    for _ in range(cfg.max_iterations):
        q_new = slot_erasure_avg(q, g, tau)
        step = abs(q_new - q)
        q = q_new
        if q < cfg.fp_tolerance:
            return q
        if prev_step:
            ratio = min(step / prev_step, 1.0)
            if step <= cfg.fp_tolerance * (1.0 - ratio):
                return q
        elif step == 0.0:
            return q
        prev_step = step
    warnings.warn(f"density evolution did not converge within {cfg.max_iterations} iterations "
                  f"(G={g}, tau={tau})", RuntimeWarning, stacklevel=2)
    return q


def _min_gap(g: float, tau: int, xs: np.ndarray) -> float:
    gap = xs - slot_erasure_avg(xs, g, tau)
    i = int(np.argmin(gap))
    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 1, len(xs) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda x: x - slot_erasure_avg(x, g, tau),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        return min(float(gap[i]), float(res.fun))
    return float(gap[i])


def admissible(g: float, tau: int, cfg: DeConfig = DeConfig()) -> bool:
    """Whether ``x > f_s(x; G)`` holds on the whole open unit interval (numerically)."""
    xs = np.linspace(1e-6, 1.0 - 1e-6, cfg.grid_points)
    return _min_gap(g, tau, xs) > 0.0


@functools.lru_cache(maxsize=256)
def threshold(tau: int, cfg: DeConfig = DeConfig()) -> float:
    """Decoding threshold: the largest load for which erasures vanish."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    lo, hi = 0.0, 1.0
    while admissible(hi, tau, cfg):
        lo, hi = hi, 2.0 * hi
    while hi - lo > cfg.bisection_tolerance:
        mid = 0.5 * (lo + hi)
        if admissible(mid, tau, cfg):
            lo = mid
        else:
            hi = mid
    return lo


def approx_max_throughput(rate: Rate | float, model: TinSicModel, cfg: DeConfig = DeConfig()) -> float:
    """Asymptotic peak throughput (b/s/Hz) with segregated bands: ``R G* / 2``."""
    r = rate.bits_per_symbol if isinstance(rate, Rate) else float(rate)
    return r * threshold(tau_of(model, r), cfg) / 2.0


def analyze(rate: Rate | float, model: TinSicModel, cfg: DeConfig = DeConfig(),
            load: Optional[float] = None) -> DeResult:
    r = rate.bits_per_symbol if isinstance(rate, Rate) else float(rate)
    t = tau_of(model, r)
    g_star = threshold(t, cfg)
    residual = de_iterate(load, t, cfg) if load is not None else None
    return DeResult(t, g_star, r * g_star / 2.0, load, residual)
