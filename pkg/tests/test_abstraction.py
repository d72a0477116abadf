import itertools
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from percimdp.abstraction import (
    METHODS, AbstractionConfig, BinPartition, ClosedLoopSkeleton, PerceptionDataset,
    PerceptionModel, bin_empirical_probs, build_perception_model, compose_closed_loop,
    detection_interval_for_cell, enlarged_interval, partition_equal_count, partition_equal_width,
)
from percimdp.aebs import SyntheticPerception
from percimdp.checker import ReachQuery, reach_interval, safety_interval
from percimdp.errors import (
    DegenerateData, DimensionUnsupported, DomainError, IoError, MissingPerceptionAction,
    MissingTruth, OutOfBounds, TooFewPoints,
)
from percimdp.models import ActionLabel, new_mdp
from percimdp.stats import BinomialSample, Box, clopper_pearson

TRUTH = SyntheticPerception(-0.1, 35.0)
BOUNDS = Box([0.0], [60.0])


def synthetic(n, seed, lo=0.0, hi=60.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, n)
    return PerceptionDataset(x, (rng.random(n) < TRUTH(x)).astype(int))


def bin_list(p):
    return [(b.lower, b.upper) for b in p.bins]


class TestDataset:
    def test_csv_roundtrip(self, tmp_path):
        d = synthetic(20, 1)
        path = tmp_path / "d.csv"
        d.to_csv(path)
        text = path.read_text()
        assert text.splitlines()[0] == "x1,z"
        again = PerceptionDataset.from_csv(path)
        np.testing.assert_array_equal(again.x, d.x)
        np.testing.assert_array_equal(again.z, d.z)

    def test_two_dimensional_header(self):
        d = PerceptionDataset(np.array([[1.0, 2.0]]), [1])
        assert d.to_csv().splitlines() == ["x1,x2,z", "1.0,2.0,1"]

    def test_bad_inputs(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,0\n")
        with pytest.raises(IoError):
            PerceptionDataset.from_csv(bad)
        bad.write_text("x1,z\n1,2\n")
        with pytest.raises(IoError):
            PerceptionDataset.from_csv(bad)
        with pytest.raises(IoError):
            PerceptionDataset.from_csv(tmp_path / "missing.csv")


class TestPartitions:
    def test_exact_division(self):
        p = partition_equal_width(Box([0], [10]), [2.5])
        assert bin_list(p) == [((0.0,), (2.5,)), ((2.5,), (5.0,)), ((5.0,), (7.5,)), ((7.5,), (10.0,))]

    def test_remainder_goes_to_last_bin(self):
        p = partition_equal_width(Box([0], [10]), [3])
        assert p.n_bins == 4
        assert bin_list(p)[-1] == ((9.0,), (10.0,))

    def test_grid_cardinality(self):
        p = partition_equal_width(Box([0, 0], [10, 10]), [2, 5])
        assert p.n_bins == 10 and p.shape == (5, 2)

    def test_width_checks(self):
        with pytest.raises(DomainError):
            partition_equal_width(Box([0], [10]), [0])
        with pytest.raises(DomainError):
            partition_equal_width(Box([0], [10]), [11])

    def test_half_open_with_closed_last_bin(self):
        p = partition_equal_width(Box([0], [10]), [5])
        assert p.locate([[0.0], [4.999], [5.0], [10.0], [10.1], [-1]]).tolist() == [0, 0, 1, 1, -1, -1]

    def test_equal_count_even(self):
        d = PerceptionDataset(np.arange(8.0), np.zeros(8, int))
        p = partition_equal_count(d, [4])
        assert p.edges[0].tolist() == [0.0, 1.5, 3.5, 5.5, 7.0]
        assert [s.n for s in bin_empirical_probs(d, p)] == [2, 2, 2, 2]

    def test_equal_count_remainder_first(self):
        d = PerceptionDataset(np.arange(9.0), np.zeros(9, int))
        p = partition_equal_count(d, [4])
        assert [s.n for s in bin_empirical_probs(d, p)] == [3, 2, 2, 2]

    def test_identical_values_merge(self):
        d = PerceptionDataset(np.full(6, 3.0), np.zeros(6, int))
        with pytest.warns(UserWarning, match="merged"):
            p = partition_equal_count(d, [3])
        assert p.n_bins == 1
        assert bin_empirical_probs(d, p)[0].n == 6

    def test_equal_count_limits(self):
        with pytest.raises(DimensionUnsupported):
            partition_equal_count(PerceptionDataset(np.zeros((4, 2)), np.zeros(4, int)), [2])
        with pytest.raises(TooFewPoints):
            partition_equal_count(PerceptionDataset(np.arange(3.0), np.zeros(3, int)), [4])

    @given(st.lists(st.floats(-5, 65, allow_nan=False), max_size=200), st.sampled_from([1, 3, 7, 20]))
    def test_every_point_in_one_bin(self, xs, w):
        p = partition_equal_width(BOUNDS, [w])
        d = PerceptionDataset(np.array(xs, dtype=float), np.zeros(len(xs), int))
        idx = p.locate(d.x) if xs else np.zeros(0, int)
        inside = [0 <= x <= 60 for x in xs]
        assert ((idx >= 0) == np.array(inside, dtype=bool)).all()
        counts = bin_empirical_probs(d, p)
        assert sum(s.n for s in counts) == sum(inside)
        assert counts.dropped == len(xs) - sum(inside)
        for x, i in zip(xs, idx):
            if i >= 0:
                b = p.bin_box(int(i))
                assert b.lower[0] <= x <= b.upper[0]


class TestCounts:
    def test_count_ratio(self):
        d = PerceptionDataset([1.0, 1.5, 2.0, 2.5], [1, 1, 0, 1])
        c = bin_empirical_probs(d, partition_equal_width(Box([0], [10]), [5]))
        assert (c[0].k, c[0].n, c[0].rate) == (3, 4, 0.75)
        assert c[1].n == 0

    def test_conservation(self):
        d = synthetic(500, 2, 10, 12)
        c = bin_empirical_probs(d, partition_equal_width(BOUNDS, [20]))
        assert c[0] == BinomialSample(int(d.z.sum()), 500)


def config(method, width=10.0, **kw):
    return AbstractionConfig(method, partition_equal_width(BOUNDS, [width]), **kw)


class TestPerceptionModel:
    data = synthetic(20_000, 3)

    def test_w_pe_zero_is_npe(self):
        a = build_perception_model(self.data, None, config("ours", w_pe=0.0))
        b = build_perception_model(self.data, None, config("oursNPE"))
        np.testing.assert_array_equal(a.intervals, b.intervals)

    def test_ground_truth_bin(self):
        pm = build_perception_model(self.data, TRUTH, config("GTPer"))
        k = pm.partition.locate([[35.0]])[0]
        assert tuple(pm.intervals[k]) == pytest.approx((0.3775406687981454, 0.6224593312018546), abs=1e-12)

    def test_enlargement_arithmetic(self):
        # k=5, n=10 with |S|=10 bins at alpha_mc=0.05 uses alpha 0.005 per bin
        ci = clopper_pearson(BinomialSample(5, 10), 0.05 / 10)
        assert (ci.lo, ci.hi) == pytest.approx((0.10983482890114912, 0.8901651710988514), abs=1e-10)
        lo, hi = enlarged_interval(ci.lo, ci.hi, 0.1)
        assert (lo, hi) == pytest.approx((0.00983482890114912, 0.9901651710988514), abs=1e-10)
        assert enlarged_interval(0.05, 0.97, 0.1) == (0.0, 1.0)

    def test_ours_matches_hand_assembly(self):
        pm = build_perception_model(self.data, None, config("ours", w_pe=0.7))
        npe = build_perception_model(self.data, None, config("oursNPE"))
        for k, rec in enumerate(pm.provenance):
            lo, hi = enlarged_interval(*npe.intervals[k], rec.delta, 0.7)
            assert tuple(pm.intervals[k]) == pytest.approx((lo, hi), abs=1e-15)
            assert rec.delta > 0

    def test_no_ci_is_point(self):
        pm = build_perception_model(self.data, None, config("noCI"))
        counts = bin_empirical_probs(self.data, pm.partition)
        for (lo, hi), s in zip(pm.intervals, counts):
            assert lo == hi == s.k / s.n

    def test_empty_bins(self):
        d = synthetic(1_000, 4, 0, 25)
        for method in ("noCI", "oursNPE", "ours", "logRegCI"):
            pm = build_perception_model(d, None, config(method))
            assert tuple(pm.intervals[-1]) == (0.0, 1.0) and pm.provenance[-1].flagged
        pm = build_perception_model(d, TRUTH, config("GTPer"))
        assert pm.intervals[-1, 1] == pytest.approx(1 / (1 + np.exp(1.5)), abs=1e-12)

    def test_errors(self):
        with pytest.raises(MissingTruth):
            build_perception_model(self.data, None, config("GTPer"))
        ones = PerceptionDataset(self.data.x, np.ones(len(self.data), int))
        with pytest.raises(DegenerateData):
            build_perception_model(ones, None, config("ours"))
        with pytest.raises(DomainError):
            config("median")
        with pytest.raises(DomainError):
            config("ours", w_pe=1.5)
        with pytest.raises(DomainError):
            config("ours", alpha_mc=0.0)

    def test_nesting_across_methods(self):
        for width in (1, 5, 20):
            m = {k: build_perception_model(self.data, None, config(k, width))
                 for k in ("noCI", "oursNPE", "ours")}
            assert np.all(m["oursNPE"].intervals[:, 0] <= m["noCI"].intervals[:, 0])
            assert np.all(m["noCI"].intervals[:, 1] <= m["oursNPE"].intervals[:, 1])
            assert np.all(m["ours"].intervals[:, 0] <= m["oursNPE"].intervals[:, 0])
            assert np.all(m["oursNPE"].intervals[:, 1] <= m["ours"].intervals[:, 1])

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_w_pe_nesting(self, w1, w2):
        w1, w2 = min(w1, w2), max(w1, w2)
        a = build_perception_model(self.data, None, config("ours", 5, w_pe=w1))
        b = build_perception_model(self.data, None, config("ours", 5, w_pe=w2))
        assert np.all(b.intervals[:, 0] <= a.intervals[:, 0])
        assert np.all(a.intervals[:, 1] <= b.intervals[:, 1])

    def test_ground_truth_exact(self):
        pm = build_perception_model(self.data, TRUTH, config("GTPer", 7))
        xs = np.random.default_rng(0).uniform(0, 60, 1_000)
        idx = pm.partition.locate(xs.reshape(-1, 1))
        p = TRUTH(xs)
        assert np.all(pm.intervals[idx, 0] <= p) and np.all(p <= pm.intervals[idx, 1])

    def test_plain_callable_truth(self):
        pm = build_perception_model(self.data, lambda x: 1 / (1 + np.exp(0.1 * (x[:, 0] - 35))),
                                    config("GTPer"))
        ref = build_perception_model(self.data, TRUTH, config("GTPer"))
        np.testing.assert_allclose(pm.intervals, ref.intervals, atol=1e-15)

    def test_log_reg_band_brackets_fit(self):
        pm = build_perception_model(self.data, None, config("logRegCI"))
        assert np.all(pm.intervals[:, 0] < pm.intervals[:, 1])

    def test_json_schema(self):
        pm = build_perception_model(self.data, None, config("ours", 20))
        doc = json.loads(pm.to_json())
        assert sorted(doc) == ["alpha_mc", "bins", "method", "w_pe"]
        assert sorted(doc["bins"][0]) == ["delta", "flagged", "hi", "k", "lo", "lower", "n", "upper"]
        assert sum(b["n"] for b in doc["bins"]) == len(self.data)
        again = PerceptionModel.from_dict(doc)
        np.testing.assert_array_equal(again.intervals, pm.intervals)

    def test_every_method_builds(self):
        for method in METHODS:
            pm = build_perception_model(self.data, TRUTH, config(method, 2))
            assert np.all((0 <= pm.intervals) & (pm.intervals <= 1))
            assert np.all(pm.intervals[:, 0] <= pm.intervals[:, 1])


def manual_model(edges, intervals):
    part = BinPartition([edges])
    return PerceptionModel(part, np.asarray(intervals, dtype=float), [None] * part.n_bins,
                           "manual", 0.05, 1.0)


class TestCellIntervals:
    pm = manual_model([0, 10, 20], [(0.1, 0.2), (0.3, 0.4)])

    def test_inside_one_bin(self):
        assert detection_interval_for_cell(self.pm, Box([2], [3])) == [(0.1, 0.2)]

    def test_straddling(self):
        assert detection_interval_for_cell(self.pm, Box([8], [12])) == [(0.1, 0.2), (0.3, 0.4)]

    def test_shared_face_excluded(self):
        assert detection_interval_for_cell(self.pm, Box([10], [12])) == [(0.3, 0.4)]
        assert detection_interval_for_cell(self.pm, Box([5], [10])) == [(0.1, 0.2)]

    def test_point_cell(self):
        assert detection_interval_for_cell(self.pm, Box([15], [15])) == [(0.3, 0.4)]

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            detection_interval_for_cell(self.pm, Box([15], [25]))


CRASH, STOP = 1, 2
A0, A1, STAY = ActionLabel(0, 0), ActionLabel(1, 0), ActionLabel(reach=0)


def toy_mcpl(extra=None):
    rows = {(0, A1): {STOP: 1.0}, (0, A0): {CRASH: 1.0},
            (CRASH, STAY): {CRASH: 1.0}, (STOP, STAY): {STOP: 1.0}}
    rows.update(extra or {})
    return new_mdp(3, 0, rows, {CRASH: "collision", STOP: "stopped"})


class TestClosedLoop:
    pm = manual_model([0, 10, 20], [(0.2, 0.4), (0.5, 0.9)])

    def test_single_cell(self):
        prod = compose_closed_loop(toy_mcpl(), self.pm, {0: Box([2], [4])})
        s = safety_interval(prod, "collision")
        assert (s.p_min, s.p_max) == pytest.approx((0.2, 0.4), abs=1e-12)

    def test_overlap_doubles_perception_choices(self):
        prod = compose_closed_loop(toy_mcpl(), self.pm, {0: Box([5], [15])})
        assert len(list(prod.rows_of(0))) == 2
        s = safety_interval(prod, "collision")
        assert (s.p_min, s.p_max) == pytest.approx((0.2, 0.9), abs=1e-12)

    def test_labels_and_reachability(self):
        prod = compose_closed_loop(toy_mcpl(), self.pm, {0: Box([2], [4])})
        assert prod.reachable_from_initial().all()
        assert len(prod.states_with("collision")) == 1

    def test_zero_upper_bound_drops_edge(self):
        pm = manual_model([0, 10, 20], [(0.0, 0.0), (0.5, 0.9)])
        prod = compose_closed_loop(toy_mcpl(), pm, {0: Box([2], [4])})
        s = safety_interval(prod, "collision")
        assert (s.p_min, s.p_max) == (0.0, 0.0)
        assert prod.n_states == 3

    def test_missing_perception_action(self):
        rows = {(0, A1): {STOP: 1.0}, (CRASH, STAY): {CRASH: 1.0}, (STOP, STAY): {STOP: 1.0}}
        with pytest.raises(MissingPerceptionAction):
            compose_closed_loop(new_mdp(3, 0, rows), self.pm, {0: Box([2], [4])})

    def test_missing_or_outside_cells(self):
        with pytest.raises(OutOfBounds):
            compose_closed_loop(toy_mcpl(), self.pm, {})
        with pytest.raises(OutOfBounds):
            compose_closed_loop(toy_mcpl(), self.pm, {0: Box([15], [30])})

    def test_skeleton_reuse(self):
        sk = ClosedLoopSkeleton(toy_mcpl(), self.pm.partition, {0: Box([2], [4])})
        for lo, hi in ((0.1, 0.3), (0.6, 0.6)):
            pm = manual_model([0, 10, 20], [(lo, hi), (0.5, 0.9)])
            s = safety_interval(compose_closed_loop(toy_mcpl(), pm, None, sk), "collision")
            assert (s.p_min, s.p_max) == pytest.approx((lo, hi), abs=1e-12)


def random_controller(rng, n_live):
    """Random layered controller-plant model: every live state has detect and
    miss rows with a few reachability choices each, all moving forward."""
    crash, stop = n_live, n_live + 1
    rows = {}
    succ = {}
    for s in range(n_live):
        for per in (0, 1):
            targets = list(range(s + 1, n_live)) + [crash, stop]
            k = int(rng.integers(1, 3))
            picks = rng.choice(targets, size=min(k, len(targets)), replace=False)
            succ[(s, per)] = [int(t) for t in picks]
            for r, t in enumerate(succ[(s, per)]):
                rows[(s, ActionLabel(per, r))] = {int(t): 1.0}
    rows[(crash, STAY)] = {crash: 1.0}
    rows[(stop, STAY)] = {stop: 1.0}
    cells = {}
    for s in range(n_live):
        lo = rng.uniform(0, 55)
        cells[s] = Box([lo], [lo + rng.uniform(0, 5)])
    m = new_mdp(n_live + 2, 0, rows, {crash: "collision", stop: "stopped"})
    return m, succ, cells


def folded_model(n_live, succ, pm, cells, p_of_bin):
    """Point-probability product without intermediate states: one action per
    (perception bin, miss choice, detect choice)."""
    crash, stop = n_live, n_live + 1
    rows = {(crash, STAY): {crash: 1.0}, (stop, STAY): {stop: 1.0}}
    for s in range(n_live):
        bins = pm.partition.overlapping(cells[s])
        combos = itertools.product(bins, succ[(s, 0)], succ[(s, 1)])
        for i, (b, t0, t1) in enumerate(combos):
            p = p_of_bin[b]
            dist = {}
            dist[t0] = dist.get(t0, 0.0) + 1 - p
            dist[t1] = dist.get(t1, 0.0) + p
            rows[(s, ActionLabel(reach=i))] = {t: q for t, q in dist.items() if q > 0}
    return new_mdp(n_live + 2, 0, rows, {crash: "collision"})


def test_point_intervals_match_folded_product():
    rng = np.random.default_rng(12)
    edges = np.linspace(0, 60, 7)
    for _ in range(40):
        n_live = int(rng.integers(1, 7))
        mcpl, succ, cells = random_controller(rng, n_live)
        p = rng.random(6)
        pm = manual_model(edges, np.stack([p, p], axis=1))
        prod = compose_closed_loop(mcpl, pm, cells)
        ref = folded_model(n_live, succ, pm, cells, p)
        a = reach_interval(ReachQuery(prod, "collision"))
        b = reach_interval(ReachQuery(ref, "collision"))
        assert a.p_min == pytest.approx(b.p_min, abs=1e-12)
        assert a.p_max == pytest.approx(b.p_max, abs=1e-12)


def test_bin_containment_small():
    """Per-bin intervals of the full method contain the truth range in most
    resamples (short version of the acceptance run)."""
    part = partition_equal_width(BOUNDS, [5])
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for seed in range(20):
            pm = build_perception_model(synthetic(10_000, 100 + seed), None,
                                        AbstractionConfig("ours", part))
            ok = all(pm.intervals[k, 0] <= TRUTH.range_over_box(b)[0] and
                     TRUTH.range_over_box(b)[1] <= pm.intervals[k, 1]
                     for k, b in enumerate(part.bins))
            hits += ok
    assert hits >= 18
