import math
import random

import numpy as np
import pytest

from orbitshare.macsim import (
    FrameGeometry,
    FramePlacement,
    ScenarioA,
    ScenarioB,
    TooFewSlotsError,
    decode_counts_a,
    estimate_success,
    frame_rng,
    generate_batch,
    generate_frame,
    own_load,
    peel_batch,
    sic_decode_scenario_a,
    sic_decode_scenario_b,
    tau_table,
    throughput,
)
from orbitshare.phy import Service, TinSicModel, gain_table, mutual_info_single, tau

S_LEO = TinSicModel.from_db(5.36, Service.LEO)
S_GEO = TinSicModel.from_db(-2.99, Service.GEO)


def placement(n_slots, leo=(), geo=(), alpha=1):
    return FramePlacement(
        FrameGeometry(n_slots, alpha),
        np.array(leo, dtype=np.int64).reshape(-1, 2),
        np.array(geo, dtype=np.int64).reshape(-1, 2),
    )


# -- independent oracles ----------------------------------------------------

def two_core_undecoded(slots, n_slots):
    """Users left undecoded at tau = 0: edges of the 2-core of the slot multigraph."""
    degree = [0] * n_slots
    for a, b in slots:
        degree[a] += 1
        degree[b] += 1
    removed = [False] * len(slots)
    incident = [[] for _ in range(n_slots)]
    for u, (a, b) in enumerate(slots):
        incident[a].append(u)
        incident[b].append(u)
    stack = [v for v in range(n_slots) if degree[v] == 1]
    while stack:
        v = stack.pop()
        for u in incident[v]:
            if not removed[u]:
                removed[u] = True
                for w in slots[u]:
                    degree[w] -= 1
                    if degree[w] == 1:
                        stack.append(w)
    return {u for u in range(len(slots)) if not removed[u]}


def random_order_peel(p: FramePlacement, decodable, rnd) -> frozenset:
    """Decode one user at a time, choosing uniformly among decodable users.

    ``decodable(user, counts)`` inspects LEO-slot occupancy counts.
    """
    g = p.geometry
    counts = [0] * g.n_leo_slots

    def span(u, s):
        return [s] if p.service_of(u) is Service.LEO else list(g.geo_span(s))

    for u in p.users():
        for s in p.slots_of(u):
            for c in span(u, s):
                counts[c] += 1
    alive = set(p.users())
    while True:
        ready = sorted(u for u in alive if decodable(u, counts))
        if not ready:
            return frozenset(p.users()) - alive
        u = rnd.choice(ready)
        alive.discard(u)
        for s in p.slots_of(u):
            for c in span(u, s):
                counts[c] -= 1


def mixed_decodable(p, rate_leo, rate_geo, model):
    def check(u, counts):
        for s in p.slots_of(u):
            if p.service_of(u) is Service.LEO:
                if rate_leo < mutual_info_single(model, counts[s] - 1):
                    return True
            else:
                hs = [counts[c] - 1 for c in p.geometry.geo_span(s)]
                if rate_geo < sum(mutual_info_single(model, h) for h in hs) / len(hs):
                    return True
        return False

    return check


# -- geometry and placement -------------------------------------------------

class TestGeometry:
    def test_divisibility(self):
        with pytest.raises(ValueError):
            FrameGeometry(400, 7)

    def test_spans_partition_frame(self):
        g = FrameGeometry(400, 8)
        assert g.n_geo_slots == 50
        covered = [c for j in range(g.n_geo_slots) for c in g.geo_span(j)]
        assert covered == list(range(400))


class TestGenerateFrame:
    def test_forced_outcome(self):
        p = generate_frame(FrameGeometry(2), 1, 0, np.random.default_rng(0))
        assert sorted(p.leo_slots[0]) == [0, 1]

    def test_geo_replicas_cover_sixteen_leo_slots(self):
        g = FrameGeometry(400, 8)
        p = generate_frame(g, 3, 5, np.random.default_rng(1))
        for u in p.users(Service.GEO):
            a, b = p.slots_of(u)
            assert len(set(g.geo_span(a)) | set(g.geo_span(b))) == 16

    def test_distinct_and_in_range(self):
        g = FrameGeometry(400, 8)
        p = generate_frame(g, 500, 300, np.random.default_rng(2))
        assert np.all(p.leo_slots[:, 0] != p.leo_slots[:, 1])
        assert np.all(p.geo_slots[:, 0] != p.geo_slots[:, 1])
        assert p.leo_slots.max() < 400 and p.geo_slots.max() < 50 and p.geo_slots.min() >= 0

    def test_uniform_marginals(self):
        p = generate_frame(FrameGeometry(10), 20_000, 0, np.random.default_rng(3))
        freq = np.bincount(p.leo_slots.ravel(), minlength=10) / 40_000
        assert np.allclose(freq, 0.1, atol=0.01)

    def test_deterministic(self):
        g = FrameGeometry(400, 4)
        a = generate_frame(g, 30, 20, frame_rng(7, 3))
        b = generate_frame(g, 30, 20, frame_rng(7, 3))
        assert np.array_equal(a.leo_slots, b.leo_slots) and np.array_equal(a.geo_slots, b.geo_slots)

    def test_too_few_slots(self):
        with pytest.raises(TooFewSlotsError):
            generate_frame(FrameGeometry(1), 1, 0, np.random.default_rng(0))
        with pytest.raises(TooFewSlotsError):
            generate_frame(FrameGeometry(8, 8), 0, 1, np.random.default_rng(0))

    def test_batch_slices_agree(self):
        g = FrameGeometry(40, 4)
        leo, geo = generate_batch(g, 5, 3, 6, master_seed=9, key=(2,))
        tail_leo, tail_geo = generate_batch(g, 5, 3, 2, master_seed=9, key=(2,), first_frame=4)
        assert np.array_equal(leo[4:], tail_leo) and np.array_equal(geo[4:], tail_geo)

    def test_load_bookkeeping(self):
        p = generate_frame(FrameGeometry(400, 8), 44, 44, np.random.default_rng(0))
        assert p.load() == pytest.approx(0.99)


# -- scenario (a) ------------------------------------------------------------

class TestScenarioA:
    def test_stopping_set(self):
        assert sic_decode_scenario_a(placement(2, [(0, 1), (0, 1)]), tau=0) == frozenset()

    def test_singleton(self):
        assert sic_decode_scenario_a(placement(5, [(1, 3)]), tau=0) == {0}

    def test_three_in_two_slots_tau1(self):
        assert sic_decode_scenario_a(placement(2, [(0, 1)] * 3), tau=1) == frozenset()

    def test_two_in_two_slots_tau1(self):
        assert sic_decode_scenario_a(placement(2, [(0, 1), (1, 0)]), tau=1) == {0, 1}

    def test_chain(self):
        # users 0 and 2 sit alone in slots 0 and 3; cancelling them frees user 1
        p = placement(4, [(0, 1), (1, 2), (2, 3)])
        assert sic_decode_scenario_a(p, tau=0) == {0, 1, 2}
        # closing the cycle 1-2-3 leaves a stopping set behind user 0
        p = placement(4, [(0, 1), (1, 2), (2, 3), (3, 1)])
        assert sic_decode_scenario_a(p, tau=0) == {0}

    def test_matches_two_core(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(2, 30))
            u = int(rng.integers(1, 2 * n))
            p = generate_frame(FrameGeometry(n), u, 0, rng)
            undecoded = two_core_undecoded([tuple(map(int, s)) for s in p.leo_slots], n)
            assert sic_decode_scenario_a(p, 0) == frozenset(range(u)) - undecoded

    def test_kernel_matches_reference(self):
        rng = np.random.default_rng(6)
        for t in range(4):
            for _ in range(50):
                n = int(rng.integers(2, 40))
                u = int(rng.integers(1, 3 * n * (t + 1)))
                p = generate_frame(FrameGeometry(n), u, 0, rng)
                ref = sic_decode_scenario_a(p, t)
                dec, _, passes = peel_batch(p.leo_slots[None], np.empty((1, 0, 2), np.int64), n, 1,
                                            tau_table(t, u + 1), np.zeros(u + 1), 0.0)
                assert set(np.flatnonzero(dec[0])) == ref
                assert passes[0] <= u + 1

    def test_schedule_independence(self):
        rnd = random.Random(11)
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(2, 8))
            u = int(rng.integers(1, 11))
            t = int(rng.integers(0, 3))
            p = generate_frame(FrameGeometry(n), u, 0, rng)
            expected = sic_decode_scenario_a(p, t)
            for _ in range(20):
                got = random_order_peel(p, lambda x, counts: any(counts[s] <= t + 1 for s in p.slots_of(x)), rnd)
                assert got == expected


# -- scenario (b) ------------------------------------------------------------

class TestScenarioB:
    def test_lone_geo_user(self):
        p = placement(16, geo=[(0, 1)], alpha=8)
        out = sic_decode_scenario_b(p, rate_leo=0.4, rate_geo=0.05, model_leo=S_LEO, model_geo=S_GEO)
        assert out.decoded_at_geo == {0} and out.decoded_at_leo == {0}

    def test_geo_frees_leo_at_leo_receiver(self):
        # GEO spans all 16 LEO slots; the LEO user is blocked until the GEO packet is cancelled
        p = placement(16, leo=[(3, 12)], geo=[(0, 1)], alpha=8)
        assert tau(S_LEO, 1.0) == 0
        out = sic_decode_scenario_b(p, rate_leo=1.0, rate_geo=0.2, model_leo=S_LEO, model_geo=S_GEO)
        assert out.decoded_at_leo == {0, 1}
        assert out.iterations[Service.LEO] == 2
        # LEO rate exceeds the GEO single-user capacity log2(1.5023) = 0.587
        assert out.decoded_at_geo == {1}

    def test_kernel_matches_reference(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            alpha = int(rng.choice([1, 2, 4, 5, 8]))
            n = alpha * int(rng.integers(2, 8))
            ul, ug = int(rng.integers(0, 12)), int(rng.integers(0, 8))
            rl = float(rng.uniform(0.05, 2.1))
            rg = rl / alpha
            p = generate_frame(FrameGeometry(n, alpha), ul, ug, rng)
            ref = sic_decode_scenario_b(p, rate_leo=rl, rate_geo=rg, model_leo=S_LEO, model_geo=S_GEO)
            for model, expected in ((S_LEO, ref.decoded_at_leo), (S_GEO, ref.decoded_at_geo)):
                gains = gain_table(model, ul + ug + 1)
                dl, dg, _ = peel_batch(p.leo_slots[None], p.geo_slots[None], n, alpha, rl < gains, gains, rg)
                got = set(np.flatnonzero(dl[0])) | {ul + int(i) for i in np.flatnonzero(dg[0])}
                assert got == expected

    def test_schedule_independence(self):
        rnd = random.Random(12)
        rng = np.random.default_rng(12)
        for _ in range(300):
            alpha = int(rng.choice([1, 2, 4]))
            n = alpha * int(rng.integers(2, 5))
            ul = int(rng.integers(0, 6))
            ug = int(rng.integers(0, 11 - ul))
            rl = float(rng.uniform(0.1, 2.1))
            p = generate_frame(FrameGeometry(n, alpha), ul, ug, rng)
            ref = sic_decode_scenario_b(p, rate_leo=rl, rate_geo=rl / alpha, model_leo=S_LEO, model_geo=S_GEO)
            check = mixed_decodable(p, rl, rl / alpha, S_LEO)
            for _ in range(20):
                assert random_order_peel(p, check, rnd) == ref.decoded_at_leo

    def test_degenerates_to_scenario_a(self):
        rate = mutual_info_single(S_LEO, 1) - 1e-6  # tau = 1 at the LEO satellite
        a = ScenarioA(400, 300, tau(S_LEO, rate))
        b = ScenarioB(FrameGeometry(400, 8), 300, 0, rate, rate / 8, S_LEO, S_GEO)
        ea = estimate_success(a, 50, master_seed=21)[Service.LEO]
        eb = estimate_success(b, 50, master_seed=21)[Service.LEO]
        assert ea.decoded == eb.decoded

    def test_leo_never_decoded_at_geo_above_capacity(self):
        rng = np.random.default_rng(13)
        rl = S_GEO.capacity + 0.05
        for _ in range(100):
            p = generate_frame(FrameGeometry(40, 4), 15, 10, rng)
            out = sic_decode_scenario_b(p, rate_leo=rl, rate_geo=rl / 4, model_leo=S_LEO, model_geo=S_GEO)
            assert not (out.decoded_at_geo & set(p.users(Service.LEO)))


# -- estimation ----------------------------------------------------------------

class TestEstimateSuccess:
    def test_single_user(self):
        est = estimate_success(ScenarioA(400, 1, 0), 20, master_seed=1)[Service.LEO]
        assert est.p_s == 1.0

    def test_matches_two_core_oracle(self):
        sc = ScenarioA(400, 200, 0)
        est = estimate_success(sc, 100, master_seed=4)[Service.LEO]
        decoded = 0
        for i in range(100):
            p = generate_frame(FrameGeometry(400), 200, 0, frame_rng(4, i))
            decoded += 200 - len(two_core_undecoded([tuple(map(int, s)) for s in p.leo_slots], 400))
        assert est.decoded == decoded

    def test_zero_frames(self):
        with pytest.raises(ValueError):
            estimate_success(ScenarioA(400, 10, 0), 0, master_seed=1)

    def test_confidence_interval(self):
        est = estimate_success(ScenarioA(400, 260, 0), 200, master_seed=2)[Service.LEO]
        assert 0 < est.ci_halfwidth < 0.1
        assert est.transmitted == 260 * 200

    def test_decode_counts_chunking(self):
        sc = ScenarioA(100, 60, 1)
        slots, _ = generate_batch(FrameGeometry(100), 60, 0, 10, 3)
        whole = decode_counts_a(sc, slots)
        parts = np.concatenate([decode_counts_a(sc, slots[:4]), decode_counts_a(sc, slots[4:])])
        assert np.array_equal(whole, parts)

    def test_success_decreases_with_load(self):
        prev = None
        for g in np.arange(0.2, 1.3, 0.1):
            u = int(round(g * 400))
            est = estimate_success(ScenarioA(400, u, 0), 200, master_seed=5, key=(u,))[Service.LEO]
            if prev is not None:
                assert est.p_s <= prev.p_s + est.ci_halfwidth + prev.ci_halfwidth
            prev = est

    def test_low_load_success_near_one(self):
        for t, g in ((0, 0.05), (2, 0.3)):
            est = estimate_success(ScenarioA(400, int(g * 400), t), 200, master_seed=6)[Service.LEO]
            assert est.p_s > 0.999


class TestThroughput:
    def test_scenario_a(self):
        assert throughput("a", Service.LEO, 1.0, 0.5, 1.0) == 0.25

    def test_scenario_b(self):
        assert throughput("b", Service.LEO, 1.0, 0.5, 1.0) == 0.5

    def test_own_load(self):
        g = FrameGeometry(400, 8)
        assert own_load(Service.LEO, 44, 44, g) == 0.11
        assert own_load(Service.GEO, 44, 44, g) == pytest.approx(8 * 44 / 400)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            throughput("a", Service.GEO, -1.0, 0.5, 1.0)
