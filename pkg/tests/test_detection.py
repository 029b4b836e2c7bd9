import math
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from memto.checkpoint import load_checkpoint
from memto.data import RawSeries, load_csv
from memto.detection import (
    AnomalyScoreSeries,
    anomaly_score,
    evaluate,
    isd,
    lsd,
    lsd_ratio,
    point_adjust,
    prf1,
    read_trace,
    score_series,
    score_windows,
    segments,
    select_threshold,
    threshold_from_pool,
    write_trace,
)

from oracles import brute_nearest_sq, brute_point_adjust, nearest_rank_threshold, softmax_direct

GOLDEN = Path(__file__).parent / "golden"

binary = st.lists(st.integers(0, 1), min_size=1, max_size=50)


def test_lsd_examples():
    items = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert lsd(np.array([[1.0, 1.0]]), items)[0] == 0.0
    q = np.array([[3.0, -1.0], [0.5, 0.5]])
    np.testing.assert_allclose(lsd(q, items[:1]), (q**2).sum(1))
    # equidistant query: tie goes to item 0, LSD 1 either way
    d, idx = brute_nearest_sq([1.0, 0.0], items.tolist())
    assert (d, idx) == (1.0, 0)
    assert lsd(np.array([[1.0, 0.0]]), items)[0] == 1.0
    with pytest.raises(ValueError):
        lsd(q, np.zeros((0, 2)))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_lsd_matches_brute_force(P, M, C, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(P, C))
    items = rng.normal(size=(M, C))
    got = lsd(q, items)
    for t in range(P):
        ref, _ = brute_nearest_sq(q[t].tolist(), items.tolist())
        assert got[t] == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_isd_examples():
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(isd(x, x), np.zeros(4))
    assert isd(np.array([[3.0]]), np.array([[0.0]]))[0] == 9.0
    assert isd(np.array([[1.0, 2.0]]), np.zeros((1, 2)))[0] == 5.0
    with pytest.raises(ValueError):
        isd(np.zeros((2, 2)), np.zeros((2, 3)))


def test_anomaly_score_examples():
    s = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(anomaly_score(np.full(4, 7.0), s), s / 4)
    np.testing.assert_array_equal(anomaly_score(np.array([0.3, 9.0]), np.zeros(2)), np.zeros(2))
    a = anomaly_score(np.array([0.0, math.log(9)]), np.array([2.0, 2.0]))
    w = softmax_direct([0.0, math.log(9)])
    np.testing.assert_allclose(a, [2 * w[0], 2 * w[1]], rtol=1e-12)
    np.testing.assert_allclose(a, [0.2, 1.8], rtol=1e-12)
    with pytest.raises(ValueError):
        anomaly_score(np.zeros(3), np.zeros(2))


def test_anomaly_score_is_per_window():
    l = np.array([[0.0, 1.0, 2.0], [5.0, 5.0, 5.0]])
    s = np.ones((2, 3))
    a = anomaly_score(l, s)
    np.testing.assert_allclose(a[0], anomaly_score(l[0], s[0]))
    np.testing.assert_allclose(a[1], np.full(3, 1 / 3))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31 - 1), st.floats(1e-3, 10))
def test_anomaly_score_properties(L, seed, bump):
    rng = np.random.default_rng(seed)
    l = rng.uniform(0, 20, L)
    s = rng.uniform(0, 5, L)
    a = anomaly_score(l, s)
    assert (a >= 0).all()
    w = anomaly_score(l, np.ones(L))
    assert w.sum() == pytest.approx(1.0, abs=1e-6)
    t = int(rng.integers(L))
    s2 = s.copy()
    s2[t] += bump
    # strict increase unless the softmax weight underflowed to zero
    if w[t] > 0:
        assert anomaly_score(l, s2)[t] > a[t]


def test_threshold_examples():
    pool = np.arange(1, 101, dtype=float)
    thr = threshold_from_pool(pool, 1.0)
    assert thr == 99.0 == nearest_rank_threshold(pool.tolist(), 1.0)
    assert int((pool > thr).sum()) == 1
    assert threshold_from_pool(pool, 100.0) == 1.0
    assert int((pool > 1.0).sum()) == 99
    assert select_threshold(pool[:60], pool[60:], 1.0) == 99.0
    with pytest.raises(ValueError):
        threshold_from_pool(np.array([]), 1.0)
    with pytest.raises(ValueError):
        threshold_from_pool(pool, 0.0)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=80),
    st.sampled_from([0.1, 0.5, 1.0, 2.5, 10.0, 33.3, 50.0, 100.0]),
)
def test_threshold_matches_enumeration(pool, p):
    thr = threshold_from_pool(np.array(pool), p)
    assert thr == nearest_rank_threshold(pool, p)
    above = sum(1 for v in pool if v > thr)
    assert above <= math.ceil(p / 100 * len(pool))
    # maximal: any lower pool value as threshold would break the bound or is not lower
    lower = [v for v in pool if v < thr]
    if lower:
        cand = max(lower)
        assert sum(1 for v in pool if v > cand) * 100 > p * len(pool) - 1e-9


def test_point_adjust_examples():
    np.testing.assert_array_equal(point_adjust([0, 0, 1, 0], [0, 1, 1, 0]), [0, 1, 1, 0])
    np.testing.assert_array_equal(point_adjust([1, 0, 1, 0], [0, 0, 0, 0]), [1, 0, 1, 0])
    np.testing.assert_array_equal(point_adjust([1, 0, 0, 0], [1, 1, 0, 1]), [1, 1, 0, 0])
    with pytest.raises(ValueError):
        point_adjust([0, 1], [0, 1, 1])


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_point_adjust_oracle_and_idempotence(data):
    n = data.draw(st.integers(1, 50))
    pred = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    gt = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    adj = point_adjust(pred, gt)
    assert adj.tolist() == brute_point_adjust(pred, gt)
    np.testing.assert_array_equal(point_adjust(adj, gt), adj)
    g = np.array(gt, bool)
    p = np.array(pred)
    assert (adj[~g] == p[~g]).all()
    assert (adj[g] >= p[g]).all()


def test_segments():
    assert segments([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert segments([0, 0]) == []


def test_prf1_examples():
    r = prf1([1, 0, 1], [1, 0, 1])
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    r = prf1([1, 1, 0, 0], [1, 0, 1, 0])
    assert (r.tp, r.fp, r.fn) == (1, 1, 1)
    assert (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5)
    r = prf1([0, 0, 0], [0, 1, 1])
    assert r.recall == 0.0 and r.f1 == 0.0 and r.precision == 0.0
    with pytest.raises(ValueError):
        prf1([0], [0, 1])


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_prf1_harmonic_mean(data):
    n = data.draw(st.integers(1, 40))
    pred = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    gt = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    r = prf1(pred, gt)
    for v in (r.precision, r.recall, r.f1):
        assert 0 <= v <= 1
    if r.precision + r.recall > 0:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


def test_lsd_ratio_examples():
    items = np.array([[0.0, 0.0], [5.0, 5.0]])
    rng = np.random.default_rng(0)
    q = rng.normal(size=(4000, 2))
    assert lsd_ratio(q[:2000], q[2000:], items) == pytest.approx(1.0, abs=0.1)
    assert lsd_ratio(items, rng.normal(size=(10, 2)) + 20, items) == 0.0
    with pytest.raises(ZeroDivisionError):
        lsd_ratio(q, items, items)


def golden_model():
    ckpt = load_checkpoint(GOLDEN / "tiny.memto")
    return ckpt, ckpt.build_model(torch.float64)


def test_score_series_length_and_purity():
    ckpt, model = golden_model()
    series = load_csv(GOLDEN / "tiny_series.csv", has_labels=True)
    before = model.memory.items.clone()
    a = score_series(model, series, ckpt.norm_stats)
    b = score_series(model, series, ckpt.norm_stats)
    assert len(a) == series.T == 21
    np.testing.assert_array_equal(a.scores, b.scores)
    assert torch.equal(model.memory.items, before)
    np.testing.assert_array_equal(a.labels, series.labels)


def test_score_series_golden():
    ckpt, model = golden_model()
    series = load_csv(GOLDEN / "tiny_series.csv", has_labels=True)
    ref = np.load(GOLDEN / "tiny_scores.npz")
    trace = score_series(model, series, ckpt.norm_stats)
    np.testing.assert_allclose(trace.scores, ref["score"], atol=1e-5)
    np.testing.assert_allclose(trace.lsd, ref["lsd"], atol=1e-5)
    np.testing.assert_allclose(trace.isd, ref["isd"], atol=1e-5)


def test_score_criteria():
    ckpt, model = golden_model()
    series = load_csv(GOLDEN / "tiny_series.csv", has_labels=True)
    both = score_series(model, series, ckpt.norm_stats, criterion="both")
    np.testing.assert_array_equal(score_series(model, series, ckpt.norm_stats, criterion="isd").scores, both.isd)
    np.testing.assert_array_equal(score_series(model, series, ckpt.norm_stats, criterion="lsd").scores, both.lsd)
    with pytest.raises(ValueError):
        score_series(model, RawSeries(np.zeros((10, 2))), ckpt.norm_stats)


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
def test_scoring_batch_size_invariant(dtype):
    ckpt = load_checkpoint(GOLDEN / "tiny.memto")
    model = ckpt.build_model(dtype)
    windows = np.random.default_rng(3).normal(size=(13, 8, 3))
    batched = score_windows(model, windows, batch_size=32)
    single = score_windows(model, windows, batch_size=1)
    for x, y in zip(batched, single):
        np.testing.assert_array_equal(x, y)


def test_evaluate_and_trace_roundtrip(tmp_path):
    labels = np.array([0, 0, 1, 1, 0, 0, 0, 1, 0, 0])
    scores = np.array([0.1, 0.2, 0.3, 5.0, 0.1, 0.2, 0.1, 0.2, 0.3, 0.1])
    test = AnomalyScoreSeries(scores, scores * 2, scores * 3, labels=labels)
    pool = np.linspace(0, 1, 100)
    res = evaluate(test, [pool], 1.0)
    assert res.threshold == threshold_from_pool(pool, 1.0)
    np.testing.assert_array_equal(test.raw_pred, (scores > res.threshold).astype(int))
    np.testing.assert_array_equal(test.adjusted_pred, [0, 0, 1, 1, 0, 0, 0, 0, 0, 0])
    assert (res.tp, res.fp, res.fn) == (2, 0, 1)
    write_trace(test, tmp_path / "t.csv")
    back = read_trace(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.scores, scores)
    np.testing.assert_array_equal(back.adjusted_pred, test.adjusted_pred)
    assert back.threshold == res.threshold
    with pytest.raises(ValueError):
        evaluate(test, [pool], 1.0, labels=labels[:5])


def test_perfect_detector():
    labels = np.zeros(200, int)
    labels[50:55] = 1
    labels[120] = 1
    scores = labels * 10.0
    res = evaluate(AnomalyScoreSeries(scores, scores, scores, labels=labels), [np.zeros(100)], 1.0)
    assert res.f1 == 1.0
