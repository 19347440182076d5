"""Monte Carlo CRDSA frames and iterative SIC.

Scenario (a) keeps each service in its own band, so a frame carries a
single population and a slot holding ``d`` uncancelled replicas resolves
completely iff ``d <= tau + 1``. Scenario (b) puts both populations on one
channel: a GEO packet lasts ``alpha`` LEO slots, and each satellite tries
to decode both traffic types and cancels whatever it recovers.

Two decoder families live here. ``sic_decode_scenario_a`` and
``sic_decode_scenario_b`` work on a single :class:`FramePlacement` with
plain Python sets; ``peel_batch`` is the compiled kernel used for Monte
Carlo estimates. Both run the same pass-based rule and must agree user by
user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from orbitshare.phy import Service, TinSicModel, gain_table


class TooFewSlotsError(ValueError):
    """A population needs two distinct slots but the frame has fewer."""


@dataclass(frozen=True)
class FrameGeometry:
    """LEO frame of ``n_leo_slots`` slots; GEO slots are ``alpha`` LEO slots long."""

    n_leo_slots: int
    alpha: int = 1

    def __post_init__(self):
        if self.n_leo_slots < 1 or self.alpha < 1:
            raise ValueError("n_leo_slots and alpha must be positive integers")
        if self.n_leo_slots % self.alpha:
            raise ValueError(f"alpha={self.alpha} does not divide n_leo_slots={self.n_leo_slots}")

    @property
    def n_geo_slots(self) -> int:
        return self.n_leo_slots // self.alpha

    def geo_span(self, geo_slot: int) -> range:
        """LEO slots covered by a GEO slot."""
        return range(geo_slot * self.alpha, (geo_slot + 1) * self.alpha)


@dataclass
class FramePlacement:
    """Replica slots of every active user in one MAC frame.

    LEO users carry ids ``0 .. u_leo - 1`` and index LEO slots; GEO users
    carry ids ``u_leo .. u_leo + u_geo - 1`` and index GEO slots.
    """

    geometry: FrameGeometry
    leo_slots: np.ndarray  # (u_leo, 2)
    geo_slots: np.ndarray  # (u_geo, 2)

    @property
    def u_leo(self) -> int:
        return len(self.leo_slots)

    @property
    def u_geo(self) -> int:
        return len(self.geo_slots)

    def service_of(self, user_id: int) -> Service:
        return Service.LEO if user_id < self.u_leo else Service.GEO

    def slots_of(self, user_id: int) -> tuple[int, int]:
        if user_id < self.u_leo:
            a, b = self.leo_slots[user_id]
        else:
            a, b = self.geo_slots[user_id - self.u_leo]
        return int(a), int(b)

    def users(self, service: Optional[Service] = None) -> range:
        if service is Service.LEO:
            return range(self.u_leo)
        if service is Service.GEO:
            return range(self.u_leo, self.u_leo + self.u_geo)
        return range(self.u_leo + self.u_geo)

    def load(self) -> float:
        """Channel load in packets per LEO slot."""
        return (self.u_leo + self.geometry.alpha * self.u_geo) / self.geometry.n_leo_slots


@dataclass
class SicOutcome:
    decoded_at_leo: frozenset
    decoded_at_geo: frozenset
    iterations: dict = field(default_factory=dict)


def frame_rng(master_seed: int, frame: int, *key: int) -> np.random.Generator:
    """Independent generator for one frame, mixed from the seed and indices."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(*key, frame)))


def _two_distinct(rng: np.random.Generator, n: int, users: int) -> np.ndarray:
    first = rng.integers(0, n, size=users)
    second = rng.integers(0, n - 1, size=users)
    second += second >= first
    return np.stack([first, second], axis=1) if users else np.empty((0, 2), dtype=np.int64)


def generate_frame(geometry: FrameGeometry, u_leo: int, u_geo: int,
                   rng: np.random.Generator) -> FramePlacement:
    """Draw two distinct slots per user, uniformly and independently across users."""
    if u_leo < 0 or u_geo < 0:
        raise ValueError("populations must be non-negative")
    if u_leo > 0 and geometry.n_leo_slots < 2:
        raise TooFewSlotsError("LEO users need at least 2 LEO slots")
    if u_geo > 0 and geometry.n_geo_slots < 2:
        raise TooFewSlotsError("GEO users need at least 2 GEO slots")
    leo = _two_distinct(rng, geometry.n_leo_slots, u_leo)
    geo = _two_distinct(rng, geometry.n_geo_slots, u_geo)
    return FramePlacement(geometry, leo.astype(np.int64), geo.astype(np.int64))


def generate_batch(geometry: FrameGeometry, u_leo: int, u_geo: int, n_frames: int,
                   master_seed: int, key: tuple = (), first_frame: int = 0):
    """Stack ``n_frames`` placements into ``(F, u_leo, 2)`` and ``(F, u_geo, 2)`` arrays.

    Frame ``i`` is drawn with ``frame_rng(master_seed, i, *key)``, so any
    slice of frames can be generated separately with identical content.
    """
    leo = np.empty((n_frames, u_leo, 2), dtype=np.int64)
    geo = np.empty((n_frames, u_geo, 2), dtype=np.int64)
    for k in range(n_frames):
        p = generate_frame(geometry, u_leo, u_geo, frame_rng(master_seed, first_frame + k, *key))
        leo[k] = p.leo_slots
        geo[k] = p.geo_slots
    return leo, geo


# -- reference decoders ---------------------------------------------------

def sic_decode_scenario_a(placement: FramePlacement, tau: int, n_slots: Optional[int] = None) -> frozenset:
    """Peel a single-service frame. Returns the ids of decoded users.

    A slot with ``d`` uncancelled replicas is cleared when ``d <= tau + 1``.
    """
    if placement.u_leo and placement.u_geo:
        raise ValueError("scenario (a) frames carry a single service")
    if n_slots is None:
        g = placement.geometry
        n_slots = g.n_leo_slots if placement.u_leo else g.n_geo_slots
    occupants: list[set] = [set() for _ in range(n_slots)]
    for u in placement.users():
        for s in placement.slots_of(u):
            occupants[s].add(u)
    decoded: set = set()
    while True:
        ready = {u for slot in occupants if 0 < len(slot) <= tau + 1 for u in slot}
        if not ready:
            return frozenset(decoded)
        decoded |= ready
        for u in ready:
            for s in placement.slots_of(u):
                occupants[s].discard(u)


def _leo_span(placement: FramePlacement, user: int, slot: int) -> range:
    if placement.service_of(user) is Service.LEO:
        return range(slot, slot + 1)
    return placement.geometry.geo_span(slot)


def _peel_receiver(placement: FramePlacement, rate_leo: float, rate_geo: float,
                   gains: np.ndarray) -> tuple[frozenset, int]:
    geometry = placement.geometry
    counts = [0] * geometry.n_leo_slots
    for u in placement.users():
        for s in placement.slots_of(u):
            for c in _leo_span(placement, u, s):
                counts[c] += 1
    alive = set(placement.users())
    passes = 0
    while True:
        ready = set()
        for u in alive:
            for s in placement.slots_of(u):
                if placement.service_of(u) is Service.LEO:
                    ok = rate_leo < gains[counts[s] - 1]
                else:
                    # segmented mutual information, summed in portion order
                    total = 0.0
                    for c in geometry.geo_span(s):
                        total += gains[counts[c] - 1]
                    ok = rate_geo < total / geometry.alpha
                if ok:
                    ready.add(u)
                    break
        if not ready:
            return frozenset(placement.users()) - alive, passes
        passes += 1
        alive -= ready
        for u in ready:
            for s in placement.slots_of(u):
                for c in _leo_span(placement, u, s):
                    counts[c] -= 1


def sic_decode_scenario_b(placement: FramePlacement, *, rate_leo: float, rate_geo: float,
                          model_leo: TinSicModel, model_geo: TinSicModel) -> SicOutcome:
    """Peel a mixed LEO/GEO frame independently at both satellites."""
    if not (rate_leo > 0 and rate_geo > 0):
        raise ValueError("rates must be positive")
    size = placement.u_leo + placement.u_geo + 1
    at_leo, it_leo = _peel_receiver(placement, rate_leo, rate_geo, gain_table(model_leo, size))
    at_geo, it_geo = _peel_receiver(placement, rate_leo, rate_geo, gain_table(model_geo, size))
    return SicOutcome(at_leo, at_geo, {Service.LEO: it_leo, Service.GEO: it_geo})


# -- batch kernel -----------------------------------------------------------

@numba.njit(cache=True)
def peel_batch(leo, geo, n_slots, alpha, leo_ok, geo_gain, rate_geo):
    """Pass-based peeling over a batch of frames at one receiver.

    ``leo`` (F, UL, 2) holds LEO-slot indices, ``geo`` (F, UG, 2) GEO-slot
    indices. A LEO replica overlapped by ``h`` others decodes when
    ``leo_ok[h]``; a GEO replica decodes when the mean of
    ``geo_gain[h_j]`` over its ``alpha`` portions exceeds ``rate_geo``.
    Returns decoded flags per user and the number of productive passes.
    """
    n_frames = leo.shape[0]
    n_leo = leo.shape[1]
    n_geo = geo.shape[1]
    n_geo_slots = n_slots // alpha
    dec_leo = np.zeros((n_frames, n_leo), dtype=np.bool_)
    dec_geo = np.zeros((n_frames, n_geo), dtype=np.bool_)
    passes = np.zeros(n_frames, dtype=np.int64)
    counts = np.empty(n_slots, dtype=np.int64)
    geo_mi = np.empty(n_geo_slots, dtype=np.float64)
    ready_leo = np.empty(n_leo, dtype=np.bool_)
    ready_geo = np.empty(n_geo, dtype=np.bool_)
    for f in range(n_frames):
        counts[:] = 0
        for u in range(n_leo):
            counts[leo[f, u, 0]] += 1
            counts[leo[f, u, 1]] += 1
        for u in range(n_geo):
            for r in range(2):
                base = geo[f, u, r] * alpha
                for k in range(alpha):
                    counts[base + k] += 1
        n_pass = 0
        while True:
            progress = False
            for u in range(n_leo):
                ready_leo[u] = False
                if not dec_leo[f, u]:
                    if leo_ok[counts[leo[f, u, 0]] - 1] or leo_ok[counts[leo[f, u, 1]] - 1]:
                        ready_leo[u] = True
                        progress = True
            if n_geo > 0:
                for j in range(n_geo_slots):
                    total = 0.0
                    for k in range(alpha):
                        c = counts[j * alpha + k]
                        if c > 0:
                            total += geo_gain[c - 1]
                    geo_mi[j] = total / alpha
                for u in range(n_geo):
                    ready_geo[u] = False
                    if not dec_geo[f, u]:
                        if rate_geo < geo_mi[geo[f, u, 0]] or rate_geo < geo_mi[geo[f, u, 1]]:
                            ready_geo[u] = True
                            progress = True
            if not progress:
                break
            n_pass += 1
            for u in range(n_leo):
                if ready_leo[u]:
                    dec_leo[f, u] = True
                    counts[leo[f, u, 0]] -= 1
                    counts[leo[f, u, 1]] -= 1
            for u in range(n_geo):
                if ready_geo[u]:
                    dec_geo[f, u] = True
                    for r in range(2):
                        base = geo[f, u, r] * alpha
                        for k in range(alpha):
                            counts[base + k] -= 1
        passes[f] = n_pass
    return dec_leo, dec_geo, passes


def tau_table(tau: int, size: int) -> np.ndarray:
    return np.arange(size) <= tau


# -- estimation -------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioA:
    """One service alone on its own band of ``n_slots`` slots."""

    n_slots: int
    users: int
    tau: int


@dataclass(frozen=True)
class ScenarioB:
    """Both services sharing one channel."""

    geometry: FrameGeometry
    u_leo: int
    u_geo: int
    rate_leo: float
    rate_geo: float
    model_leo: TinSicModel
    model_geo: TinSicModel


@dataclass(frozen=True)
class SuccessEstimate:
    p_s: float
    ci_halfwidth: float
    decoded: int
    transmitted: int
    n_frames: int


def _summarize(decoded_per_frame: np.ndarray, users: int) -> SuccessEstimate:
    n = len(decoded_per_frame)
    total = int(decoded_per_frame.sum())
    if users == 0:
        return SuccessEstimate(math.nan, math.nan, 0, 0, n)
    frac = decoded_per_frame / users
    half = 1.959963984540054 * float(np.std(frac, ddof=1)) / math.sqrt(n) if n > 1 else math.nan
    return SuccessEstimate(total / (users * n), half, total, users * n, n)


def decode_counts_a(scenario: ScenarioA, slots: np.ndarray) -> np.ndarray:
    """Decoded users per frame for scenario (a) placements ``(F, U, 2)``."""
    size = scenario.users + 1
    empty = np.empty((len(slots), 0, 2), dtype=np.int64)
    dec, _, _ = peel_batch(slots, empty, scenario.n_slots, 1,
                           tau_table(scenario.tau, size), np.zeros(size), 0.0)
    return dec.sum(axis=1)


def decode_counts_b(scenario: ScenarioB, leo: np.ndarray, geo: np.ndarray):
    """Per-frame decoded LEO users at the LEO satellite and GEO users at the GEO satellite."""
    size = scenario.u_leo + scenario.u_geo + 1
    n = scenario.geometry.n_leo_slots
    a = scenario.geometry.alpha
    g_leo = gain_table(scenario.model_leo, size)
    g_geo = gain_table(scenario.model_geo, size)
    dl, _, _ = peel_batch(leo, geo, n, a, scenario.rate_leo < g_leo, g_leo, scenario.rate_geo)
    _, dg, _ = peel_batch(leo, geo, n, a, scenario.rate_leo < g_geo, g_geo, scenario.rate_geo)
    return dl.sum(axis=1), dg.sum(axis=1)


def estimate_success(scenario: ScenarioA | ScenarioB, n_frames: int, master_seed: int,
                     key: tuple = ()) -> dict:
    """Estimate the packet success probability of each service at its own satellite.

    Returns ``{Service: SuccessEstimate}``; scenario (a) reports a single
    entry under ``Service.LEO`` (the service is implied by the caller).
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if isinstance(scenario, ScenarioA):
        geometry = FrameGeometry(scenario.n_slots)
        slots, _ = generate_batch(geometry, scenario.users, 0, n_frames, master_seed, key)
        return {Service.LEO: _summarize(decode_counts_a(scenario, slots), scenario.users)}
    leo, geo = generate_batch(scenario.geometry, scenario.u_leo, scenario.u_geo,
                              n_frames, master_seed, key)
    dl, dg = decode_counts_b(scenario, leo, geo)
    return {Service.LEO: _summarize(dl, scenario.u_leo), Service.GEO: _summarize(dg, scenario.u_geo)}


def own_load(service: Service, u_leo: int, u_geo: int, geometry: FrameGeometry) -> float:
    """Per-service load: active users over the service's own slot count."""
    if service is Service.LEO:
        return u_leo / geometry.n_leo_slots
    return u_geo / geometry.n_geo_slots


def throughput(scenario: str, service: Service, rate: float, load_own: float, p_s: float) -> float:
    """Normalized throughput in b/s/Hz.

    Segregated bands ('a') use half of the total bandwidth, hence the 1/2.
    """
    if min(rate, load_own, p_s) < 0:
        raise ValueError("inputs must be non-negative")
    if scenario == "a":
        return 0.5 * rate * load_own * p_s
    if scenario == "b":
        return rate * load_own * p_s
    raise ValueError(f"unknown scenario {scenario!r}")
