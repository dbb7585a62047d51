import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pefad import backbone as bb
from pefad import detection as det
from pefad.errors import InputError, MetricError


def pairwise_auc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def trapezoid_auc(scores, truth):
    scores, truth = np.asarray(scores), np.asarray(truth, bool)
    thresholds = np.concatenate([[np.inf], np.unique(scores)[::-1]])
    tpr = [np.sum((scores >= t) & truth) / truth.sum() for t in thresholds]
    fpr = [np.sum((scores >= t) & ~truth) / (~truth).sum() for t in thresholds]
    return float(np.sum(np.diff(fpr) * (np.array(tpr[1:]) + np.array(tpr[:-1])) / 2))


def scan_adjust(pred, truth):
    out = list(pred)
    i = 0
    while i < len(truth):
        if truth[i]:
            j = i
            while j < len(truth) and truth[j]:
                j += 1
            if any(pred[i:j]):
                out[i:j] = [1] * (j - i)
            i = j
        else:
            i += 1
    return out


def test_score_examples(monkeypatch):
    model = bb.build_model(bb.BackboneConfig(d_model=8, n_layers=1, n_heads=2, d_ff=8, l_p=2,
                                             tune_last_k=1, window=4), seed=0)
    series = np.array([[3.0], [0.0], [1.0], [2.0], [5.0], [1.0], [7.0]])
    monkeypatch.setattr(det, "reconstruct", lambda m, x: x)
    assert not det.score(model, series).any()
    monkeypatch.setattr(det, "reconstruct", lambda m, x: np.ones_like(x))
    s = det.score(model, series)
    assert s[0] == 2.0
    assert np.array_equal(s, [2, 1, 0, 1, 4, 0, 0])   # final point: trailing remainder scores 0
    with pytest.raises(InputError):
        det.score(model, series[:1])


def test_score_non_negative_on_real_model():
    model = bb.build_model(bb.BackboneConfig(d_model=8, n_layers=2, n_heads=2, d_ff=8, l_p=4,
                                             tune_last_k=1, window=16), seed=1)
    s = det.score(model, np.random.default_rng(0).normal(size=(50, 1)))
    assert s.shape == (50,) and np.all(s >= 0) and np.all(np.isfinite(s))


def test_threshold_top_r_contract():
    s = np.random.default_rng(0).normal(size=100)
    assert det.threshold_top_r(s, 2).sum() == 2
    assert det.threshold_top_r(np.ones(10), 10).tolist() == [1] + [0] * 9
    assert det.threshold_top_r(np.arange(7.0), 99.9).sum() == 7


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 500), st.floats(0.01, 99.99))
def test_threshold_count_property(n, r):
    import math
    from fractions import Fraction
    expected = math.ceil(Fraction(n) * Fraction(str(r)) / 100)
    assert det.threshold_top_r(np.zeros(n), r).sum() == expected


def test_point_adjust_examples():
    truth = np.array([0, 0, 0, 1, 1, 1, 1, 0, 0, 0])
    pred = np.array([0, 0, 0, 0, 1, 0, 0, 0, 1, 0])
    assert det.point_adjust(pred, truth).tolist() == [0, 0, 0, 1, 1, 1, 1, 0, 1, 0]
    miss = np.array([1, 0, 0, 0, 0, 0, 0, 0, 0, 0])
    assert det.point_adjust(miss, truth).tolist() == miss.tolist()
    with pytest.raises(InputError):
        det.point_adjust([0, 1], [0, 1, 0])


def test_point_adjust_matches_scan_reference():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        truth = (rng.random(n) < 0.3).astype(int)
        pred = (rng.random(n) < 0.2).astype(int)
        adj = det.point_adjust(pred, truth)
        assert adj.tolist() == scan_adjust(pred.tolist(), truth.tolist())
        tp0, fp0, _, _ = det.confusion(pred, truth)
        tp1, fp1, _, _ = det.confusion(adj, truth)
        assert tp1 >= tp0 and fp1 == fp0
        assert det.metrics(adj, truth)[1] >= det.metrics(pred, truth)[1]


def test_metrics_examples():
    assert det.metrics([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 1.0)
    p, r, f1 = det.metrics([0, 0, 0], [1, 0, 1])
    assert r == 0 and f1 == 0
    p, r, f1 = det.metrics([1, 1, 1, 0], [1, 1, 0, 1])
    assert p == pytest.approx(2 / 3) and r == pytest.approx(2 / 3) and f1 == pytest.approx(2 / 3)


def test_metrics_match_hand_counts():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 80))
        pred, truth = rng.integers(0, 2, n), rng.integers(0, 2, n)
        tp = sum(1 for a, b in zip(pred, truth) if a and b)
        fp = sum(1 for a, b in zip(pred, truth) if a and not b)
        fn = sum(1 for a, b in zip(pred, truth) if not a and b)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        assert det.metrics(pred, truth) == pytest.approx((p, r, f), abs=1e-15)


def test_auc_examples():
    assert det.auc_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert det.auc_roc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert det.auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert pairwise_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(MetricError):
        det.auc_roc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_and_trapezoid():
    rng = np.random.default_rng(3)
    for _ in range(60):
        n = int(rng.integers(2, 201))
        truth = rng.integers(0, 2, n)
        truth[0], truth[-1] = 0, 1
        scores = np.round(rng.normal(size=n), 1)   # rounding forces ties
        auc = det.auc_roc(scores, truth)
        assert abs(auc - pairwise_auc(scores, truth)) <= 1e-12
        assert abs(auc - trapezoid_auc(scores, truth)) <= 1e-12
        assert det.auc_roc(np.exp(3 * scores), truth) == auc


def test_evaluate_report_fields():
    truth = np.zeros(100, int)
    truth[40:45] = 1
    scores = np.zeros(100)
    scores[42] = 5.0
    rep = det.evaluate(scores, truth, det.DetectionConfig(r=1.0))
    assert (rep.tp, rep.fp, rep.fn) == (5, 0, 0)
    assert rep.f1 == 1.0 and 0 <= rep.auc <= 1 and rep.auc_pa == 1.0
    assert len(rep.csv_row()) == len(det.REPORT_FIELDS)
    assert "F1=1.0000" in rep.text()
