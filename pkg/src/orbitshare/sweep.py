"""Load and rate sweeps, peak search and throughput-pair classification.

Frame placements are seeded by the physical population they describe
(``alpha``, ``u_leo``, ``u_geo``), never by the rate, so every rate probed
at a given load sees exactly the same frames. Jobs are load points; they
run in a process pool when ``jobs > 1`` and results are collected in grid
order, so output does not depend on the degree of parallelism.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from orbitshare import deanalysis
from orbitshare.macsim import (
    FrameGeometry,
    ScenarioA,
    ScenarioB,
    decode_counts_a,
    decode_counts_b,
    generate_batch,
    own_load,
    throughput,
    _summarize,
)
from orbitshare.phy import InfeasibleRateError, Service, TinSicModel, capacity_boundaries, tau

RATE_EPSILON = 1e-6
QUADRANTS = ("both-prefer-share", "leo-only", "geo-only", "both-prefer-separate")
PAIR_MODES = ("per-service-argmax", "shared-sweep")


class DegenerateLoadError(ValueError):
    """Rounding leaves a participating population empty."""


class PeakAtEdgeWarning(UserWarning):
    """The throughput maximum sits on the first or last load of the grid."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def populations_for_load(g: float, beta: float, alpha: int, n_leo_slots: int,
                         service: Optional[Service] = None) -> tuple[int, int, float]:
    """Active users for a target LEO-reference load ``G = (U_L + alpha U_G) / N_L``.

    With ``service`` set, only that population participates (segregated bands).
    Returns ``(u_leo, u_geo, actual_load)``.
    """
    if not g > 0:
        raise ValueError("load must be positive")
    if service is Service.LEO:
        u_leo, u_geo = _round_half_up(g * n_leo_slots), 0
        if u_leo == 0:
            raise DegenerateLoadError(f"load {g} gives no LEO users")
    elif service is Service.GEO:
        u_leo, u_geo = 0, _round_half_up(g * n_leo_slots / alpha)
        if u_geo == 0:
            raise DegenerateLoadError(f"load {g} gives no GEO users")
    else:
        if not beta > 0:
            raise ValueError("beta must be positive")
        u_geo = _round_half_up(g * n_leo_slots / (beta + alpha))
        u_leo = _round_half_up(beta * u_geo)
        if u_geo == 0 or u_leo == 0:
            raise DegenerateLoadError(f"load {g} with beta={beta}, alpha={alpha} empties a population")
    return u_leo, u_geo, (u_leo + alpha * u_geo) / n_leo_slots


# -- plans and records ---------------------------------------------------------

@dataclass(frozen=True)
class LoadGrid:
    start: float = 0.1
    stop: float = 4.0
    step: float = 0.05
    auto_extend: bool = True
    max_load: float = 64.0

    def __post_init__(self):
        if not (self.step > 0 and 0 < self.start <= self.stop):
            raise ValueError("load grid needs 0 < start <= stop and step > 0")

    def points(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + k * self.step, 10) for k in range(n)]

    def extension(self) -> Optional["LoadGrid"]:
        """Next block of loads above this grid, or None past ``max_load``."""
        last = self.points()[-1]
        nxt = round(last + self.step, 10)
        if not self.auto_extend or nxt > self.max_load:
            return None
        span = self.stop - self.start
        return replace(self, start=nxt, stop=min(nxt + span, self.max_load))


@dataclass(frozen=True)
class SweepPlan:
    scenario: str = "a"
    loads: LoadGrid = LoadGrid()
    n_frames: int = 2000
    master_seed: int = 0
    beta: float = 1.0
    n_leo_slots: int = 400
    jobs: int = 1
    pair_mode: str = "per-service-argmax"

    def __post_init__(self):
        if self.scenario not in ("a", "b"):
            raise ValueError(f"scenario must be 'a' or 'b', got {self.scenario!r}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.pair_mode not in PAIR_MODES:
            raise ValueError(f"pair_mode must be one of {PAIR_MODES}")


@dataclass
class ThroughputPoint:
    scenario: str
    service: Service
    rate: float
    load_configured: float
    load_actual: float
    u_leo: int
    u_geo: int
    p_s: float
    ci_halfwidth: float
    throughput: float
    alpha: int = 1
    beta: Optional[float] = None
    rate_other: Optional[float] = None
    tau: Optional[int] = None
    de_approx: Optional[float] = None
    is_peak: bool = False


@dataclass
class PeakResult:
    peak: ThroughputPoint
    points: list
    at_edge: bool


@dataclass(frozen=True)
class PairClassification:
    alpha: int
    beta: float
    rate_leo: float
    rate_geo: float
    s_leo: float
    s_geo: float
    bench_leo: float
    bench_geo: float
    load_leo: float = math.nan
    load_geo: float = math.nan

    @property
    def quadrant(self) -> str:
        return classify(self.s_leo, self.s_geo, self.bench_leo, self.bench_geo)


def classify(s_leo: float, s_geo: float, bench_leo: float, bench_geo: float) -> str:
    leo_gain = s_leo > bench_leo
    geo_gain = s_geo > bench_geo
    if leo_gain and geo_gain:
        return "both-prefer-share"
    if leo_gain:
        return "leo-only"
    if geo_gain:
        return "geo-only"
    return "both-prefer-separate"


# -- job runner ------------------------------------------------------------------

def run_jobs(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Map ``fn`` over ``items`` in order, optionally in worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=1))


def _pick_peak(points: list) -> PeakResult:
    best = max(range(len(points)), key=lambda i: points[i].throughput)
    for i, p in enumerate(points):
        p.is_peak = i == best
    at_edge = best in (0, len(points) - 1)
    if at_edge:
        warnings.warn(f"throughput peak at grid edge (load {points[best].load_configured})",
                      PeakAtEdgeWarning, stacklevel=3)
    return PeakResult(points[best], points, at_edge)


def _last_is_best(series: Sequence[float]) -> bool:
    return len(series) > 0 and int(np.argmax(series)) == len(series) - 1


# -- scenario (a) ----------------------------------------------------------------

def _job_a(args):
    n_slots, taus, users, n_frames, seed = args
    slots, _ = generate_batch(FrameGeometry(n_slots), users, 0, n_frames, seed, key=(1, users, 0))
    return [_summarize(decode_counts_a(ScenarioA(n_slots, users, t), slots), users) for t in taus]


def _success_curves_a(taus: Sequence[int], plan: SweepPlan, service: Service) -> dict:
    """tau -> [(load, u, actual load, SuccessEstimate)] along the auto-extended grid.

    Each load point generates its frames once and peels them for every tau
    still being extended.
    """
    n = plan.n_leo_slots
    curves = {t: [] for t in taus}
    active = list(taus)
    block = plan.loads
    while True:
        pops = []
        for g in block.points():
            u_leo, u_geo, actual = populations_for_load(g, plan.beta, 1, n, service)
            pops.append((g, u_leo + u_geo, actual))
        jobs = [(n, tuple(active), u, plan.n_frames, plan.master_seed) for _, u, _ in pops]
        for (g, u, actual), ests in zip(pops, run_jobs(_job_a, jobs, plan.jobs)):
            for t, e in zip(active, ests):
                curves[t].append((g, u, actual, e))
        active = [t for t in active if _last_is_best([u * e.p_s for _, u, _, e in curves[t]])]
        if not active or (block := block.extension()) is None:
            return curves


def peak_over_load(points: list) -> PeakResult:
    """Mark and return the maximum-throughput point of an evaluated load grid."""
    if not points:
        raise ValueError("empty load grid")
    return _pick_peak(points)


def rate_sweep_scenario_a(service: Service, model: TinSicModel, rates: Iterable[float],
                          plan: SweepPlan, de_cfg: deanalysis.DeConfig = deanalysis.DeConfig()):
    """Peak throughput versus rate with segregated bands, plus the DE estimate.

    Returns ``(peaks, skipped)``: a list of :class:`PeakResult` in rate order
    and the rates rejected as infeasible for ``model``.
    """
    feasible, skipped = [], []
    for r in sorted(set(float(x) for x in rates)):
        try:
            feasible.append((r, tau(model, r)))
        except InfeasibleRateError:
            skipped.append(r)
    curves = _success_curves_a(sorted({t for _, t in feasible}), plan, service) if feasible else {}
    peaks = []
    for r, t in feasible:
        de = r * deanalysis.threshold(t, de_cfg) / 2.0
        points = []
        for g, u, actual, est in curves[t]:
            u_leo, u_geo = (u, 0) if service is Service.LEO else (0, u)
            s = throughput("a", service, r, u / plan.n_leo_slots, est.p_s)
            points.append(ThroughputPoint("a", service, r, g, actual, u_leo, u_geo, est.p_s,
                                          est.ci_halfwidth, s, tau=t, de_approx=de))
        peaks.append(peak_over_load(points))
    return peaks, skipped


# -- scenario (b) ----------------------------------------------------------------

def _job_b(args):
    geometry, u_leo, u_geo, pairs, model_leo, model_geo, n_frames, seed = args
    leo, geo = generate_batch(geometry, u_leo, u_geo, n_frames, seed, key=(2, u_leo, u_geo, geometry.alpha))
    out = []
    for rl, rg in pairs:
        sc = ScenarioB(geometry, u_leo, u_geo, rl, rg, model_leo, model_geo)
        dl, dg = decode_counts_b(sc, leo, geo)
        out.append((_summarize(dl, u_leo), _summarize(dg, u_geo)))
    return out


def pair_curves_b(alpha: int, pairs: Sequence[tuple], model_leo: TinSicModel,
                  model_geo: TinSicModel, plan: SweepPlan) -> list:
    """Per rate pair, the LEO and GEO throughput records over a shared load sweep.

    The base grid is evaluated for every pair; extension blocks only for the
    pairs whose LEO or GEO maximum still sits on the last load. Returns one
    ``(leo_points, geo_points)`` tuple per entry of ``pairs``.
    """
    geometry = FrameGeometry(plan.n_leo_slots, alpha)
    curves = [([], []) for _ in pairs]

    def evaluate(gs, active):
        args, pops = [], []
        for g in gs:
            try:
                u_leo, u_geo, actual = populations_for_load(g, plan.beta, alpha, plan.n_leo_slots)
            except DegenerateLoadError:
                continue
            pops.append((g, u_leo, u_geo, actual))
            args.append((geometry, u_leo, u_geo, [pairs[k] for k in active], model_leo, model_geo,
                         plan.n_frames, plan.master_seed))
        for (g, ul, ug, actual), ests in zip(pops, run_jobs(_job_b, args, plan.jobs)):
            common = dict(load_configured=g, load_actual=actual, u_leo=ul, u_geo=ug,
                          alpha=alpha, beta=plan.beta)
            for k, (el, eg) in zip(active, ests):
                rl, rg = pairs[k]
                s_l = throughput("b", Service.LEO, rl, own_load(Service.LEO, ul, ug, geometry), el.p_s)
                s_g = throughput("b", Service.GEO, rg, own_load(Service.GEO, ul, ug, geometry), eg.p_s)
                curves[k][0].append(ThroughputPoint("b", Service.LEO, rl, p_s=el.p_s,
                                                    ci_halfwidth=el.ci_halfwidth, throughput=s_l,
                                                    rate_other=rg, **common))
                curves[k][1].append(ThroughputPoint("b", Service.GEO, rg, p_s=eg.p_s,
                                                    ci_halfwidth=eg.ci_halfwidth, throughput=s_g,
                                                    rate_other=rl, **common))

    def pending():
        return [k for k, (lp, gp) in enumerate(curves)
                if _last_is_best([p.throughput for p in lp]) or _last_is_best([p.throughput for p in gp])]

    block = plan.loads
    active = list(range(len(pairs)))
    while True:
        evaluate(block.points(), active)
        active = pending()
        if not active or (block := block.extension()) is None:
            return curves


def _pair_reading(leo_pts: list, geo_pts: list, mode: str):
    if mode == "per-service-argmax":
        pl, pg = peak_over_load(leo_pts).peak, peak_over_load(geo_pts).peak
        return pl.throughput, pg.throughput, pl.load_configured, pg.load_configured
    totals = [a.throughput + b.throughput for a, b in zip(leo_pts, geo_pts)]
    i = int(np.argmax(totals))
    return (leo_pts[i].throughput, geo_pts[i].throughput,
            leo_pts[i].load_configured, geo_pts[i].load_configured)


def pair_sweep_scenario_b(alpha_rates: dict, model_leo: TinSicModel, model_geo: TinSicModel,
                          plan: SweepPlan, bench_leo: float, bench_geo: float) -> list:
    """Throughput pairs of every ``(R_L, R_L / alpha)`` against segregated-band benchmarks.

    ``alpha_rates`` maps each alpha to its LEO rates. With
    ``plan.pair_mode == "per-service-argmax"`` each service's maximum is read
    at its own best load of the common sweep; ``"shared-sweep"`` reads both
    at the load maximizing their sum.
    """
    out = []
    for alpha in sorted(alpha_rates):
        pairs = [(rl, rl / alpha) for rl in sorted(alpha_rates[alpha])]
        if not pairs:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PeakAtEdgeWarning)
            curves = pair_curves_b(alpha, pairs, model_leo, model_geo, plan)
            for (rl, rg), (leo_pts, geo_pts) in zip(pairs, curves):
                s_l, s_g, g_l, g_g = _pair_reading(leo_pts, geo_pts, plan.pair_mode)
                out.append(PairClassification(alpha, plan.beta, rl, rg, s_l, s_g,
                                              bench_leo, bench_geo, g_l, g_g))
    return out


# -- single points -----------------------------------------------------------------

def simulate_point(plan: SweepPlan, load: float, model_leo: TinSicModel, model_geo: TinSicModel,
                   rate: float, service: Service = Service.LEO, alpha: int = 1,
                   rate_geo: Optional[float] = None,
                   de_cfg: deanalysis.DeConfig = deanalysis.DeConfig()) -> list:
    """Throughput records at one configured load, seeded exactly as the sweeps are.

    Scenario (a) simulates ``service`` alone at ``rate``; scenario (b) returns
    one record per service with ``R_G = rate_geo`` (default ``rate / alpha``).
    """
    n = plan.n_leo_slots
    if plan.scenario == "a":
        model = model_leo if service is Service.LEO else model_geo
        t = tau(model, rate)
        u_leo, u_geo, actual = populations_for_load(load, plan.beta, 1, n, service)
        (est,) = _job_a((n, (t,), u_leo + u_geo, plan.n_frames, plan.master_seed))
        s = throughput("a", service, rate, (u_leo + u_geo) / n, est.p_s)
        de = rate * deanalysis.threshold(t, de_cfg) / 2.0
        return [ThroughputPoint("a", service, rate, load, actual, u_leo, u_geo, est.p_s,
                                est.ci_halfwidth, s, tau=t, de_approx=de)]
    rate_geo = rate / alpha if rate_geo is None else rate_geo
    geometry = FrameGeometry(n, alpha)
    u_leo, u_geo, actual = populations_for_load(load, plan.beta, alpha, n)
    (el, eg), = _job_b((geometry, u_leo, u_geo, [(rate, rate_geo)], model_leo, model_geo,
                        plan.n_frames, plan.master_seed))
    out = []
    for svc, r, other, est, model in ((Service.LEO, rate, rate_geo, el, model_leo),
                                      (Service.GEO, rate_geo, rate, eg, model_geo)):
        try:
            t = tau(model, r)
        except InfeasibleRateError:
            t = None
        s = throughput("b", svc, r, own_load(svc, u_leo, u_geo, geometry), est.p_s)
        out.append(ThroughputPoint("b", svc, r, load, actual, u_leo, u_geo, est.p_s, est.ci_halfwidth,
                                   s, alpha=alpha, beta=plan.beta, rate_other=other, tau=t))
    return out


# -- rate grids -------------------------------------------------------------------

def boundary_rates(model: TinSicModel, min_rate: float, eps: float = RATE_EPSILON) -> list[float]:
    """Rates just below each tau boundary, where every sawtooth tooth peaks."""
    return [c - eps for c in capacity_boundaries(model, min_rate + eps)]


def rate_grid(model: TinSicModel, min_rate: float, step: Optional[float] = 0.02,
              eps: float = RATE_EPSILON) -> list[float]:
    """Boundary rates plus a uniform fill of spacing ``step`` (None: boundaries only)."""
    rates = set(boundary_rates(model, min_rate, eps))
    if step:
        rates.update(float(r) for r in np.round(np.arange(min_rate, model.capacity, step), 10))
    return sorted(r for r in rates if min_rate <= r < model.capacity)


def pair_rates(alpha: int, model_leo: TinSicModel, model_geo: TinSicModel, min_rate: float,
               step: Optional[float] = None, eps: float = RATE_EPSILON,
               own_receivers_only: bool = True) -> list[float]:
    """LEO rates ``R_L`` (with ``R_G = R_L / alpha``) for a scenario (b) pair sweep.

    Always includes the LEO tau boundaries at the LEO satellite and the GEO
    boundaries at the GEO satellite scaled by alpha; ``own_receivers_only=False``
    adds the cross-receiver boundaries as well.
    """
    top = min(model_leo.capacity, alpha * model_geo.capacity)
    cands = [c - eps for c in capacity_boundaries(model_leo, min_rate)]
    cands += [alpha * (c - eps / alpha) for c in capacity_boundaries(model_geo, min_rate / alpha)]
    if not own_receivers_only:
        cands += [c - eps for c in capacity_boundaries(model_geo, min_rate)]
        cands += [alpha * (c - eps / alpha) for c in capacity_boundaries(model_leo, min_rate / alpha)]
    if step:
        cands += [float(r) for r in np.round(np.arange(min_rate, top, step), 10)]
    return sorted({round(r, 12) for r in cands if min_rate <= r < top})


def benchmark(service: Service, model: TinSicModel, min_rate: float, plan: SweepPlan,
              de_cfg: deanalysis.DeConfig = deanalysis.DeConfig()) -> PeakResult:
    """Best segregated-band peak over the boundary rates of ``model``."""
    plan_a = replace(plan, scenario="a")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeakAtEdgeWarning)
        peaks, _ = rate_sweep_scenario_a(service, model, boundary_rates(model, min_rate), plan_a, de_cfg)
    return max(peaks, key=lambda p: p.peak.throughput)
