"""Brute-force references for the ranking metrics, written independently of
the library: pair counting for ROC AUC and an exhaustive walk of the
precision-recall curve for average precision."""

import math
from fractions import Fraction


def auc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    if not pos or not neg:
        return None
    wins = Fraction(0)
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                wins += Fraction(1, 2)
    return wins / (len(pos) * len(neg))


def ap_curve(scores, labels):
    """Walk cut-offs in (score desc, input position asc) order; AP is the sum
    of precision times recall increment. Returns (exact Fraction, float fsum
    of the per-positive precisions divided by the positive count)."""
    n_pos = sum(1 for y in labels if y)
    if n_pos in (0, len(labels)):
        return None, None
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    exact = Fraction(0)
    per_pos = []
    tp = 0
    prev_recall = Fraction(0)
    for cut, k in enumerate(order, 1):
        if labels[k]:
            tp += 1
        recall = Fraction(tp, n_pos)
        precision = Fraction(tp, cut)
        exact += (recall - prev_recall) * precision
        if recall != prev_recall:
            per_pos.append(tp / cut)
        prev_recall = recall
    return exact, math.fsum(per_pos) / n_pos


def f1_at(scores, labels, thr):
    tp = sum(1 for s, y in zip(scores, labels) if s > thr and y)
    fp = sum(1 for s, y in zip(scores, labels) if s > thr and not y)
    fn = sum(1 for s, y in zip(scores, labels) if s <= thr and y)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0
