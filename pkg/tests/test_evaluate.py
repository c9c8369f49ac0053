import logging
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ap_curve, auc_pairs, f1_at
from glad.evaluate import (SplitError, average_precision, candidate_thresholds, choose_threshold,
                           compute_metrics, edge_scores, interval_scores, normal_only, render_table,
                           report_dict, roc_auc, split_sequences, write_report)
from glad.ingest import Label
from glad.model import ModelConfig
from glad.train import TrainConfig, train


def random_instance(rng: random.Random):
    n = rng.randint(1, 12)
    levels = rng.choice([2, 3, 5, 100])  # few levels force ties
    scores = [rng.randrange(levels) / 4.0 for _ in range(n)]
    labels = [rng.random() < 0.4 for _ in range(n)]
    return scores, labels


def test_metrics_match_brute_force_oracle():
    rng = random.Random(2024)
    checked = 0
    for _ in range(500):
        s, y = random_instance(rng)
        a = auc_pairs(s, y)
        assert roc_auc(s, y) == (None if a is None else float(a))
        exact, fl = ap_curve(s, y)
        got = average_precision(s, y)
        assert got == fl
        if exact is not None:
            assert abs(got - float(exact)) < 1e-15
            checked += 1
    assert checked > 300


def test_split_sizes():
    assert [len(x) for x in split_sequences(list(range(10)))] == [6, 1, 3]
    assert [len(x) for x in split_sequences(list(range(100)))] == [60, 10, 30]
    assert [len(x) for x in split_sequences(list(range(200)))] == [120, 20, 60]
    with pytest.raises(SplitError):
        split_sequences(list(range(9)))


def test_split_is_contiguous():
    tr, va, te = split_sequences(list(range(37)))
    assert tr + va + te == list(range(37))


def test_separated_and_tied_cases():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert average_precision([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert roc_auc([1, 2], [1, 1]) is None
    assert average_precision([1, 2], [0, 0]) is None


def test_ap_tie_order_is_input_order():
    # tied scores: the positive listed first is counted first
    assert average_precision([1.0, 1.0], [1, 0]) == 1.0
    assert average_precision([1.0, 1.0], [0, 1]) == 0.5


def test_f1_definition():
    m = compute_metrics([0.1, 0.7, 0.8, 0.3], [0, 1, 0, 1], 0.5)
    assert (m.precision, m.recall) == (0.5, 0.5)
    assert m.f1 == pytest.approx(0.5)
    m0 = compute_metrics([0.1, 0.2], [1, 0], 0.9)
    assert m0.f1 == 0.0


def test_threshold_prefers_precision_then_higher():
    s = [0.1, 0.4, 0.6, 0.9]
    y = [1, 0, 0, 1]
    # F-1 is 2/3 both when flagging only 0.9 (precision 1) and when flagging
    # everything (precision 1/2); the precise cut wins
    thr = choose_threshold(s, y)
    assert f1_at(s, y, thr) == max(f1_at(s, y, t) for t in candidate_thresholds(s))
    assert thr == pytest.approx(0.75)


def test_threshold_fallback_quantile(caplog):
    s = np.arange(100.0)
    with caplog.at_level(logging.WARNING):
        thr = choose_threshold(s, np.zeros(100), prior=0.1)
    assert thr == pytest.approx(np.quantile(s, 0.9))
    assert "no positive labels" in caplog.text


scores_st = st.lists(st.integers(0, 6).map(lambda x: x / 3.0), min_size=2, max_size=12)


@settings(max_examples=150, deadline=None)
@given(scores_st, st.data())
def test_monotone_transform_invariance(s, data):
    y = data.draw(st.lists(st.booleans(), min_size=len(s), max_size=len(s)))
    t = [2 * x + 1 for x in s]
    assert roc_auc(s, y) == roc_auc(t, y)
    assert average_precision(s, y) == average_precision(t, y)


@settings(max_examples=150, deadline=None)
@given(scores_st, st.data())
def test_chosen_threshold_beats_every_observed_value(s, data):
    y = data.draw(st.lists(st.booleans(), min_size=len(s), max_size=len(s)))
    if not any(y):
        return
    best = f1_at(s, y, choose_threshold(s, y))
    assert all(best >= f1_at(s, y, v) for v in s)


@settings(max_examples=100, deadline=None)
@given(scores_st, st.data())
def test_metrics_ranges(s, data):
    y = data.draw(st.lists(st.booleans(), min_size=len(s), max_size=len(s)))
    m = compute_metrics(s, y, 0.5)
    for v in (m.precision, m.recall, m.f1):
        assert 0.0 <= v <= 1.0
    for v in (m.auc, m.aupr):
        assert v is None or 0.0 <= v <= 1.0


def test_reports(tmp_path):
    rep = report_dict("edge", compute_metrics([0.1, 0.9], [0, 1], 0.5), {"n_windows": 2})
    write_report(rep, tmp_path / "e.json", tmp_path / "e.txt")
    text = (tmp_path / "e.txt").read_text()
    assert text.splitlines()[0].split() == ["protocol", "edge"]
    assert "n_windows" in render_table(rep)
    assert '"protocol": "edge"' in (tmp_path / "e.json").read_text()


def test_scoring_end_to_end(snapshots):
    cfg = ModelConfig(d_in=16, d_hidden=8, attn_dim=4, ffn_dim=6)
    params, _ = train(normal_only(snapshots), TrainConfig(seed=1, epochs=2, k=2), cfg)
    es = edge_scores(params, snapshots)
    assert len(es) == sum(s.m for s in snapshots)
    assert [e.id for e in es] == list(range(len(es)))
    assert sum(e.label for e in es) >= 1
    iv = interval_scores(params, snapshots)
    assert [x.label for x in iv] == [int(s.window_label is Label.ANOMALOUS) for s in snapshots]
    assert all(x.verdict == int(x.distance2 > params.radius2) for x in iv)
