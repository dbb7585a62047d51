"""Reconstruction-error scoring, top-r% thresholding, point adjustment and metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .backbone import Backbone, reconstruct
from .errors import ConfigError, InputError, MetricError

REPORT_FIELDS = ("precision", "recall", "f1", "auc", "auc_pa", "tp", "fp", "fn", "tn")


@dataclass(frozen=True)
class DetectionConfig:
    r: float = 1.0
    point_adjust: bool = True

    def __post_init__(self):
        if not 0 < self.r < 100:
            raise ConfigError(f"detection.r must be in (0, 100), got {self.r}")


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    auc: float
    auc_pa: float
    tp: int
    fp: int
    fn: int
    tn: int

    def csv_row(self) -> list[str]:
        return [repr(float(v)) if isinstance(v, float) else str(v) for v in asdict(self).values()]

    def text(self) -> str:
        return (f"P={self.precision:.4f} R={self.recall:.4f} F1={self.f1:.4f} "
                f"AUC={self.auc:.4f} (adjusted {self.auc_pa:.4f})  "
                f"TP={self.tp} FP={self.fp} FN={self.fn} TN={self.tn}")


def score(model: Backbone, test_series) -> np.ndarray:
    """Per-point outlier score: mean absolute reconstruction error over dimensions.

    The series is cut into the model's window length; points in a trailing
    partial window score 0.
    """
    cfg = model.config
    x = np.asarray(test_series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < cfg.l_p:
        raise InputError(f"test series of {len(x)} steps is shorter than one patch ({cfg.l_p})")
    out = np.zeros(len(x))
    w = cfg.window
    n_full = len(x) // w
    spans = [(i * w, w) for i in range(n_full)]
    tail = len(x) - n_full * w
    if tail >= cfg.l_p:
        spans.append((n_full * w, (tail // cfg.l_p) * cfg.l_p))
    groups: dict[int, list[int]] = {}
    for start, length in spans:
        groups.setdefault(length, []).append(start)
    for length, starts in groups.items():
        p = length // cfg.l_p
        batch = np.stack([x[s:s + length] for s in starts]).reshape(len(starts), p, cfg.patch_width)
        recon = reconstruct(model, batch).reshape(len(starts), length, x.shape[1])
        for s, r in zip(starts, recon):
            out[s:s + length] = np.abs(x[s:s + length] - r).mean(axis=1)
    return out


def n_flagged(n: int, r: float) -> int:
    return min(n, math.ceil(Fraction(n) * Fraction(str(r)) / 100))


def threshold_top_r(scores, r: float) -> np.ndarray:
    """Label the ceil(n*r/100) highest scores; ties go to the earlier index."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise InputError("cannot threshold an empty score series")
    k = n_flagged(len(s), r)
    order = np.argsort(-s, kind="stable")
    pred = np.zeros(len(s), dtype=np.int64)
    pred[order[:k]] = 1
    return pred


def segments(labels) -> list[tuple[int, int]]:
    """Maximal runs of 1s as half-open (start, end) pairs."""
    y = np.asarray(labels).astype(np.int8)
    edges = np.diff(np.concatenate([[0], y, [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def point_adjust(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise InputError(f"pred has {len(pred)} points but truth has {len(truth)}")
    out = pred.copy()
    for start, end in segments(truth):
        if out[start:end].any():
            out[start:end] = 1
    return out


def adjust_scores(scores, truth) -> np.ndarray:
    """Score-level point adjustment: each true segment takes its maximum score."""
    out = np.asarray(scores, dtype=np.float64).copy()
    for start, end in segments(truth):
        out[start:end] = out[start:end].max()
    return out


def confusion(pred, truth) -> tuple[int, int, int, int]:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return tp, fp, fn, tn


def metrics(pred, truth) -> tuple[float, float, float]:
    """Precision, recall and F1 (0 whenever a denominator is 0)."""
    tp, fp, fn, _ = confusion(pred, truth)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def auc_roc(scores, truth) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined unless truth has both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(scores, truth, config: DetectionConfig) -> EvalReport:
    truth = np.asarray(truth, dtype=np.int64)
    pred = threshold_top_r(scores, config.r)
    if config.point_adjust:
        pred = point_adjust(pred, truth)
    p, r, f1 = metrics(pred, truth)
    tp, fp, fn, tn = confusion(pred, truth)
    auc = auc_roc(scores, truth)
    auc_pa = auc_roc(adjust_scores(scores, truth), truth)
    return EvalReport(p, r, f1, auc, auc_pa, tp, fp, fn, tn)
