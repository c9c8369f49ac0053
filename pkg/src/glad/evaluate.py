"""Scoring, thresholds and metrics for the edge and interval protocols."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .graph import GraphSnapshot
from .ingest import Label
from .model import ModelParams, edge_score, forward, prepare_sequence

logger = logging.getLogger(__name__)

MIN_WINDOWS = 10


class SplitError(ValueError):
    pass


def split_sequences(windows: list) -> tuple[list, list, list]:
    """Contiguous chronological 6:1:3 split (floors for train and val)."""
    n = len(windows)
    if n < MIN_WINDOWS:
        raise SplitError(f"need at least {MIN_WINDOWS} windows to split, got {n}")
    n_train = 6 * n // 10
    n_val = n // 10
    return (list(windows[:n_train]), list(windows[n_train:n_train + n_val]),
            list(windows[n_train + n_val:]))


def normal_only(snapshots: list[GraphSnapshot]) -> list[GraphSnapshot]:
    return [s for s in snapshots if s.window_label is not Label.ANOMALOUS]


# ---------------------------------------------------------------- scoring

@dataclass
class EdgeScore:
    id: int
    t: int
    i: int
    j: int
    w: int
    score: float
    label: int  # 1 anomalous, 0 normal


@dataclass
class IntervalScore:
    t: int
    distance2: float | None  # None for empty windows
    label: int
    verdict: int


def edge_scores(params: ModelParams, snapshots: list[GraphSnapshot]) -> list[EdgeScore]:
    """Score every edge of a chronological run, each window conditioned on
    the earlier windows of the same run only."""
    seq = prepare_sequence(snapshots, params.config.d_in)
    if not seq.snapshots:
        return []
    w = params.tensors()
    H = forward(seq, w, params.config)
    edges = seq.global_edges()
    f = edge_score(H, edges, w["w1"], w["w2"], params.config.mu).data[:, 0]
    out = []
    k = 0
    for snap in seq.snapshots:
        labels = snap.edge_labels or [Label.NORMAL] * snap.m
        for (i, j, wt), lab in zip(snap.edges, labels):
            out.append(EdgeScore(k, snap.t, int(i), int(j), int(wt), float(f[k]),
                                 int(lab is Label.ANOMALOUS)))
            k += 1
    return out


def graph_representations(params: ModelParams, snapshots: list[GraphSnapshot]):
    """Max-pooled representation per nonempty snapshot, with their indices."""
    seq = prepare_sequence(snapshots, params.config.d_in)
    if not seq.snapshots:
        return seq, np.zeros((0, params.config.d_out))
    H = forward(seq, params.tensors(), params.config)
    return seq, ad.segment_maxpool(H, seq.offsets).data


def interval_scores(params: ModelParams, snapshots: list[GraphSnapshot]) -> list[IntervalScore]:
    """Squared distance of each window's representation to the center.

    Empty windows get no score and a normal verdict.
    """
    if params.center is None or params.radius2 is None:
        raise ValueError("model has no hypersphere center; train it first")
    seq, reps = graph_representations(params, snapshots)
    d2 = np.sum((reps - params.center) ** 2, axis=1)
    by_t = {s.t: float(d) for s, d in zip(seq.snapshots, d2)}
    out = []
    for s in snapshots:
        lab = int(s.window_label is Label.ANOMALOUS)
        d = by_t.get(s.t)
        verdict = int(d is not None and d > params.radius2)
        out.append(IntervalScore(s.t, d, lab, verdict))
    return out


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float | None  # None when labels are all one class
    aupr: float | None
    threshold: float
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return asdict(self)


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney statistic from average ranks; tied pairs count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)  # average ranks, so sums are exact halves
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float | None:
    """Mean of the precision at each positive, ranking by descending score
    and breaking ties by position in the input (stable)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        return None
    order = np.argsort(-s, kind="stable")
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, 1):
        if y[idx]:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / n_pos


def confusion(scores, labels, threshold: float) -> tuple[int, int, int]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pred = s > threshold
    return int(np.sum(pred & y)), int(np.sum(pred & ~y)), int(np.sum(~pred & y))


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def compute_metrics(scores, labels, threshold: float) -> MetricsReport:
    y = np.asarray(labels, dtype=bool)
    p, r, f = prf(*confusion(scores, labels, threshold))
    return MetricsReport(p, r, f, roc_auc(scores, labels), average_precision(scores, labels),
                         float(threshold), int(y.sum()), int((~y).sum()))


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints between consecutive distinct scores, plus one threshold
    below the minimum (everything flagged) and the maximum itself (nothing)."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    if u.size == 0:
        return np.array([0.0])
    below = u[0] - max(1.0, abs(u[0]))
    return np.concatenate([[below], (u[:-1] + u[1:]) / 2.0, [u[-1]]])


def choose_threshold(scores, labels, prior: float = 0.05) -> float:
    """Threshold with the best F-1 on ``scores``; ties go to higher
    precision, then to the higher threshold.

    Without any positive label the ``1 - prior`` quantile is returned.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.size == 0:
        raise ValueError("no scores to choose a threshold from")
    if not y.any():
        logger.warning("no positive labels for threshold selection; using the %.3f quantile",
                       1.0 - prior)
        return float(np.quantile(s, 1.0 - prior))
    best, best_key = None, None
    for thr in candidate_thresholds(s):
        p, _, f = prf(*confusion(s, y, thr))
        key = (f, p, thr)
        if best_key is None or key > best_key:
            best, best_key = float(thr), key
    return best


# ---------------------------------------------------------------- reports

def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_dict(protocol: str, metrics: MetricsReport, extra: dict | None = None) -> dict:
    out = {"protocol": protocol}
    out.update(metrics.to_dict())
    if extra:
        out.update(extra)
    return out


def write_report(report: dict, json_path, text_path=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(render_table(report))


def render_table(report: dict) -> str:
    keys = ["protocol", "precision", "recall", "f1", "auc", "aupr", "threshold", "n_pos", "n_neg"]
    keys += sorted(k for k in report if k not in keys)
    width = max(len(k) for k in keys)
    lines = [f"{k.ljust(width)}  {_fmt(report.get(k))}" for k in keys]
    return "\n".join(lines) + "\n"
