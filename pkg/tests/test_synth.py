import json

import pytest

from glad.embed import Embedder
from glad.ingest import Label, LogRecord
from glad.pipeline import build_graphs, extract_fields, parse_records
from glad.synth import SynthConfig, anomaly_count, generate_synthetic, write_synthetic


def to_records(rows):
    alias = {"normal": Label.NORMAL, "anomaly": Label.ANOMALOUS}
    return [LogRecord(r["msg"], r["ts"], r["src"], alias[r["label"]]) for r in rows]


def test_rate_zero_all_normal():
    rows = generate_synthetic(SynthConfig(windows=20, rate=0.0))
    assert {r["label"] for r in rows} == {"normal"}


def test_anomaly_count_rounding():
    assert anomaly_count(200, 0.05) == 10
    assert anomaly_count(10, 0.05) == 1  # 0.5 rounds up
    assert anomaly_count(10, 0.04) == 0


def test_two_hundred_windows_give_ten_anomalous():
    rows = generate_synthetic(SynthConfig())
    bad = {r["ts"] // 60_000 for r in rows if r["label"] == "anomaly"}
    assert len(bad) == 10
    assert max(r["ts"] for r in rows) < 200 * 60_000


def test_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_synthetic(SynthConfig(windows=30, seed=4), a)
    write_synthetic(SynthConfig(windows=30, seed=4), b)
    assert a.read_bytes() == b.read_bytes()
    write_synthetic(SynthConfig(windows=30, seed=5), b)
    assert a.read_bytes() != b.read_bytes()
    assert set(json.loads(a.read_text().splitlines()[0])) == {"ts", "msg", "label", "src"}


def test_invalid_config():
    with pytest.raises(ValueError):
        SynthConfig(rate=2.0).validate()
    with pytest.raises(ValueError):
        SynthConfig(coordinators=1, kinds=["cross"]).validate()


@pytest.fixture(scope="module")
def synth_graphs():
    rows = generate_synthetic(SynthConfig(windows=40, rate=0.1, seed=11))
    _, parsed = parse_records(to_records(rows))
    return build_graphs(extract_fields(parsed), Embedder(32), 60_000)


def _pairs(snap):
    return {(snap.nodes[i].text, snap.nodes[j].text): lab
            for (i, j, _), lab in zip(snap.edges, snap.edge_labels)}


def test_graph_shape_of_normal_windows(synth_graphs):
    normal = [s for s in synth_graphs if s.window_label is Label.NORMAL]
    assert {(s.n, s.m) for s in normal} == {(12, 15)}


def test_cross_injection_creates_unseen_pair(synth_graphs):
    """Scan the corpus: the worker edge of a cross anomaly never occurs in a
    normal window."""
    normal_pairs = set()
    for s in synth_graphs:
        if s.window_label is Label.NORMAL:
            normal_pairs |= set(_pairs(s))
    cross = [s for s in synth_graphs if s.window_label is Label.ANOMALOUS and s.m > 15]
    assert len(cross) == 2
    for s in cross:
        new = [p for p, lab in _pairs(s).items() if p not in normal_pairs]
        assert len(new) == 1 and _pairs(s)[new[0]] is Label.ANOMALOUS


def test_inflate_injection_weight(synth_graphs):
    inflated = [s for s in synth_graphs if s.window_label is Label.ANOMALOUS and s.m == 15]
    assert len(inflated) == 2
    for s in inflated:
        w = s.edges[:, 2]
        bad = [lab is Label.ANOMALOUS for lab in s.edge_labels]
        normal_max = max(w[k] for k in range(len(w)) if not bad[k])
        assert min(w[k] for k in range(len(w)) if bad[k]) > 5 * normal_max
