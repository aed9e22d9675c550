import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pyrcpd.errors import ConfigError, DataError
from pyrcpd.evaluate import (
    EvalConfig,
    auc,
    auc_table_csv,
    match,
    nms,
    pr_area,
    report_json,
    to_input_time,
    tune_nms_window,
)

from oracles import auc_brute, match_brute, max_matching_size, nms_brute

scores_st = st.lists(st.integers(0, 5).map(float), min_size=0, max_size=30)
times_st = st.lists(st.integers(0, 60), max_size=6, unique=True).map(sorted)


class TestNms:
    def test_example(self):
        assert nms([0, 1, 0, 0, 2, 0], 1) == [(1, 1.0), (4, 2.0)]

    def test_constant_keeps_first(self):
        assert nms(np.full(10, 0.3), 2) == [(0, 0.3)]

    def test_wide_window_is_argmax(self):
        s = np.array([0.1, 0.7, 0.2, 0.7, 0.5])
        assert nms(s, 5) == [(1, 0.7)]

    def test_empty(self):
        assert nms([], 3) == []

    def test_bad_window(self):
        with pytest.raises(ValueError):
            nms([1.0], 0)

    @settings(max_examples=300)
    @given(s=scores_st, w=st.integers(1, 6))
    def test_oracle(self, s, w):
        assert nms(s, w) == nms_brute(s, w)


class TestMatch:
    def test_identity(self):
        m = match([3, 8, 20], [3, 8, 20], 0)
        assert m.precision == m.recall == 1.0

    @pytest.mark.parametrize("eta,tp", [(4, 1), (3, 0)])
    def test_distance(self, eta, tp):
        m = match([10], [14], eta)
        assert (m.tp, m.fp, m.fn) == (tp, 1 - tp, 1 - tp)

    def test_single_match(self):
        m = match([9, 11], [10], 2)
        assert (m.tp, m.fp, m.fn) == (1, 1, 0)
        assert m.pairs == [(0, 0)]

    def test_empty_sides(self):
        assert (match([], [1, 2], 5).fn, match([1], [], 5).fp) == (2, 1)

    @settings(max_examples=300)
    @given(d=times_st, t=times_st, eta=st.integers(0, 10))
    def test_oracle(self, d, t, eta):
        m = match(d, t, eta)
        assert (m.tp, m.fp, m.fn, m.pairs) == match_brute(d, t, eta)

    @settings(max_examples=100)
    @given(d=times_st, t=times_st, eta=st.integers(0, 10), shift=st.integers(-100, 100))
    def test_translation(self, d, t, eta, shift):
        a = match(d, t, eta)
        b = match([x + shift for x in d], [x + shift for x in t], eta)
        assert (a.tp, a.pairs) == (b.tp, b.pairs)

    @settings(max_examples=100)
    @given(d=st.lists(st.integers(0, 30), max_size=4, unique=True).map(sorted),
           t=st.lists(st.integers(0, 30), max_size=4, unique=True).map(sorted),
           eta=st.integers(0, 6))
    def test_greedy_within_half_of_optimum(self, d, t, eta):
        # greedy maximal matching is at least half the maximum matching
        tp = match(d, t, eta).tp
        best = max_matching_size(d, t, eta)
        assert 2 * tp >= best >= tp


class TestAuc:
    def test_perfect(self):
        scores = [np.eye(1, 40, 10)[0], np.eye(1, 40, 25)[0]]
        assert auc(scores, [[10], [25]], 0, 4).auc == 1.0

    def test_all_equal_rectangle(self):
        # one detection per series at index 0; two of three series have a truth there
        scores = [np.full(20, 0.5)] * 3
        rep = auc(scores, [[0, 15], [0], [9]], 0, 2)
        p, r = 2 / 3, 2 / 4
        assert rep.auc == pytest.approx(p * r, abs=1e-15)
        assert len(rep.precision) == 1

    def test_three_series_oracle(self, rng):
        scores = [rng.random(n) for n in (30, 41, 25)]
        truths = [[5 * 4 + 2, 70], [13], [40, 90]]
        for eta in (0, 4, 16, 64):
            got = auc(scores, truths, eta, 2, 4).auc
            assert abs(got - auc_brute(scores, truths, eta, 2, 4)) <= 1e-12

    def test_no_truths(self):
        with pytest.raises(DataError):
            auc([np.zeros(4)], [[]], 4, 1)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            auc([np.zeros(4)], [[1], [2]], 4, 1)

    def test_monotone_invariance(self, rng):
        scores = [rng.random(50) for _ in range(4)]
        truths = [sorted(rng.choice(50, 2, replace=False).tolist()) for _ in range(4)]
        a = auc(scores, truths, 2, 3).auc
        b = auc([np.exp(3 * s) - 7 for s in scores], truths, 2, 3).auc
        assert a == b

    @pytest.mark.parametrize("seed", range(10))
    def test_monotone_in_eta(self, seed):
        rng = np.random.default_rng(seed)
        scores = [rng.random(40) for _ in range(3)]
        truths = [sorted(rng.choice(160, 3, replace=False).tolist()) for _ in range(3)]
        vals = [auc(scores, truths, eta, 2, 4).auc for eta in (0, 2, 4, 8, 16, 32, 64, 128)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_ranges(self, rng):
        rep = auc([rng.random(60)], [[7, 100]], 8, 2, 4)
        assert 0 <= rep.auc <= 1
        assert np.all((rep.precision >= 0) & (rep.precision <= 1))
        assert np.all(np.diff(rep.recall) >= 0)


def test_pr_area_envelope():
    # the dip at recall 0.5 is lifted to the later precision 0.8
    assert pr_area([1.0, 0.4, 0.8], [0.25, 0.5, 0.75]) == pytest.approx(0.25 + 0.225 + 0.2)


def test_to_input_time():
    assert to_input_time([0, 1, 2], 16).tolist() == [8, 24, 40]


def test_tune_picks_best(rng):
    # two true peaks 3 steps apart: a wide window suppresses one of them
    s = np.zeros(40)
    s[[10, 13]] = 1.0, 0.9
    assert tune_nms_window([s], [[10, 13]], 0, 1, (1, 8)) == 1


def test_report_formats(rng):
    reps = [auc([rng.random(20)], [[5]], e, 2) for e in (0, 8)]
    doc = json.loads(report_json(reps, method="PRN"))
    assert doc["metric"] == "pr_auc" and [r["eta"] for r in doc["results"]] == [0, 8]
    csv = auc_table_csv({"PRN": {0: reps[0].auc, 8: reps[1].auc}}, (0, 8))
    assert csv.splitlines()[0] == "eta,PRN" and len(csv.splitlines()) == 3


@pytest.mark.parametrize("kw", [dict(nms_window=0), dict(etas=(-1,))])
def test_config_invalid(kw):
    with pytest.raises(ConfigError):
        EvalConfig(**kw).validate()
