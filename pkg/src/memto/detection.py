"""Anomaly scoring, thresholding and point-adjusted evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import NormalizationStats, RawSeries, normalize, window

CRITERIA = ("both", "isd", "lsd")
TRACE_COLUMNS = ("index", "score", "lsd", "isd", "threshold", "raw_pred", "adjusted_pred", "label")


def lsd(q: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Squared distance from each query to its nearest item (lowest index on ties).

    ``q`` is (..., C), ``items`` is M x C.
    """
    items = np.asarray(items, dtype=np.float64)
    if items.ndim != 2 or items.shape[0] == 0:
        raise ValueError("memory must hold at least one item")
    q = np.asarray(q, dtype=np.float64)
    d = ((q[..., None, :] - items) ** 2).sum(-1)
    return np.take_along_axis(d, d.argmin(-1)[..., None], -1)[..., 0]


def isd(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return ((x - x_hat) ** 2).sum(-1)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def anomaly_score(lsd_vals: np.ndarray, isd_vals: np.ndarray) -> np.ndarray:
    """Per-window softmax of LSD over timestamps, times ISD. Last axis is time."""
    lsd_vals = np.asarray(lsd_vals, dtype=np.float64)
    isd_vals = np.asarray(isd_vals, dtype=np.float64)
    if lsd_vals.shape != isd_vals.shape:
        raise ValueError(f"length mismatch {lsd_vals.shape} vs {isd_vals.shape}")
    return softmax(lsd_vals, axis=-1) * isd_vals


@dataclass
class AnomalyScoreSeries:
    scores: np.ndarray
    lsd: np.ndarray
    isd: np.ndarray
    threshold: float = math.nan
    raw_pred: Optional[np.ndarray] = None
    adjusted_pred: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    criterion: str = "both"

    def __len__(self) -> int:
        return len(self.scores)


@torch.no_grad()
def score_windows(model, windows: np.ndarray, batch_size: int = 32) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode forward over N x L x n windows; returns (score, lsd, isd), each N x L.

    Windows run through the model one at a time: float32 kernels round
    differently per batch shape, and scores must not depend on
    ``batch_size``, which is accepted only for interface symmetry.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    items = model.memory.items.detach().double().numpy()
    lsds, isds = [], []
    for w in windows:
        xb = torch.from_numpy(np.ascontiguousarray(w[None])).to(dtype)
        out = model(xb)
        lsds.append(lsd(out.queries.double().numpy(), items))
        isds.append(isd(xb.double().numpy(), out.reconstruction.double().numpy()))
    l = np.concatenate(lsds)
    s = np.concatenate(isds)
    return anomaly_score(l, s), l, s


def score_series(
    model,
    series: RawSeries,
    stats: Optional[NormalizationStats] = None,
    batch_size: int = 32,
    criterion: str = "both",
) -> AnomalyScoreSeries:
    """Score every timestamp of ``series``; memory is left untouched."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    if series.n != model.cfg.n:
        raise ValueError(f"data has {series.n} channels, checkpoint expects {model.cfg.n}")
    if stats is not None:
        series = normalize(series, stats)
    batch = window(series, model.cfg.L, "score")
    a, l, s = score_windows(model, batch.windows, batch_size)
    T = series.T
    a, l, s = a.reshape(-1)[:T], l.reshape(-1)[:T], s.reshape(-1)[:T]
    chosen = {"both": a, "isd": s, "lsd": l}[criterion]
    return AnomalyScoreSeries(chosen.copy(), l, s, labels=series.labels, criterion=criterion)


def select_threshold(train_scores, val_scores, p_percent: float) -> float:
    pool = np.concatenate([np.ravel(train_scores), np.ravel(val_scores)])
    return threshold_from_pool(pool, p_percent)


def threshold_from_pool(pool, p_percent: float) -> float:
    """Nearest-rank (100 - p) percentile of the pooled scores.

    Points strictly above the returned value are flagged, so at most
    ``floor(p% * |pool|)`` pool points exceed it.
    """
    pool = np.sort(np.ravel(np.asarray(pool, dtype=np.float64)))
    if pool.size == 0:
        raise ValueError("empty score pool")
    if not 0 < p_percent <= 100:
        raise ValueError(f"p_percent must lie in (0, 100], got {p_percent}")
    frac = (100 - Fraction(str(p_percent))) / 100
    rank = max(1, math.ceil(frac * pool.size))
    return float(pool[rank - 1])


def segments(gt) -> list[tuple[int, int]]:
    """Maximal runs of ones as half-open (start, stop) pairs."""
    gt = np.asarray(gt).astype(bool)
    padded = np.concatenate([[False], gt, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def point_adjust(pred, gt) -> np.ndarray:
    pred = np.asarray(pred).astype(np.int64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {gt.shape}")
    out = pred.copy()
    for start, stop in segments(gt):
        if out[start:stop].any():
            out[start:stop] = 1
    return out


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    threshold: float = math.nan
    p_percent: Optional[float] = None
    lsd_ratio: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def prf1(pred, gt) -> EvalResult:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {gt.shape}")
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return EvalResult(p, r, f, tp, fp, fn)


def evaluate(test: AnomalyScoreSeries, pool_scores: Sequence[np.ndarray], p_percent: float, labels=None) -> EvalResult:
    """Threshold ``test`` from the pooled scores, point-adjust, and score it.

    Fills ``threshold``, ``raw_pred`` and ``adjusted_pred`` on ``test``.
    """
    labels = test.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise ValueError("evaluation needs ground-truth labels")
    if len(labels) != len(test):
        raise ValueError(f"labels length {len(labels)} != scores length {len(test)}")
    thr = threshold_from_pool(np.concatenate([np.ravel(p) for p in pool_scores]), p_percent)
    raw = (test.scores > thr).astype(np.int64)
    adj = point_adjust(raw, labels)
    test.threshold, test.raw_pred, test.adjusted_pred, test.labels = thr, raw, adj, np.asarray(labels)
    res = prf1(adj, labels)
    res.threshold = thr
    res.p_percent = p_percent
    return res


def lsd_ratio(normal_queries, abnormal_queries, items) -> float:
    """Mean normal LSD over mean abnormal LSD for a frozen memory."""
    normal = lsd(normal_queries, items)
    abnormal = lsd(abnormal_queries, items)
    if normal.size == 0 or abnormal.size == 0:
        raise ValueError("both query sets must be nonempty")
    denom = abnormal.mean()
    if denom == 0:
        raise ZeroDivisionError("mean abnormal LSD is zero")
    return float(normal.mean() / denom)


@torch.no_grad()
def encode_series(model, series: RawSeries, stats: Optional[NormalizationStats] = None, batch_size: int = 32) -> np.ndarray:
    """Eval-mode queries for every timestamp (T x C)."""
    if stats is not None:
        series = normalize(series, stats)
    batch = window(series, model.cfg.L, "score")
    model.eval()
    dtype = next(model.parameters()).dtype
    qs = []
    for w in batch.windows:
        qs.append(model.encode(torch.from_numpy(np.ascontiguousarray(w[None])).to(dtype)).double().numpy())
    return np.concatenate(qs).reshape(-1, model.cfg.C)[: series.T]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_trace(trace: AnomalyScoreSeries, path) -> None:
    T = len(trace)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t in range(T):
            w.writerow(
                [
                    t,
                    _fmt(float(trace.scores[t])),
                    _fmt(float(trace.lsd[t])),
                    _fmt(float(trace.isd[t])),
                    _fmt(float(trace.threshold)),
                    "" if trace.raw_pred is None else int(trace.raw_pred[t]),
                    "" if trace.adjusted_pred is None else int(trace.adjusted_pred[t]),
                    "" if trace.labels is None else int(trace.labels[t]),
                ]
            )


def read_trace(path) -> AnomalyScoreSeries:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    missing = set(TRACE_COLUMNS) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: trace is missing columns {sorted(missing)}")

    def col(name, conv):
        vals = [r[name] for r in rows]
        if any(v == "" for v in vals):
            return None
        return np.array([conv(v) for v in vals])

    thr = rows[0]["threshold"]
    return AnomalyScoreSeries(
        col("score", float),
        col("lsd", float),
        col("isd", float),
        float(thr) if thr else math.nan,
        col("raw_pred", int),
        col("adjusted_pred", int),
        col("label", int),
    )
