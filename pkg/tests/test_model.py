import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glad import autodiff as ad
from glad.autodiff import Tensor
from glad.graph import with_self_loops
from glad.model import (ModelConfig, ModelParams, edge_score, encode_gcn, encode_snapshot, fingerprint,
                        forward, gcn_layer, load_model, position_embedding, prepare_sequence, save_model,
                        set_transformer, short_term_encode, short_windows)

SMALL = dict(d_in=16, d_hidden=8, attn_dim=4, ffn_dim=6, k=2, history=4)


def small_params(seed=0, **kw):
    cfg = ModelConfig(**{**SMALL, **kw})
    return ModelParams.init(cfg, seed)


def test_gcn_layer_path_graph_oracle():
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    A_hat, D_hat = with_self_loops(A)
    H, W = np.eye(3), np.eye(3)
    s6 = 1 / np.sqrt(6)
    expected = np.array([[1 / 2, s6, 0], [s6, 1 / 3, s6], [0, s6, 1 / 2]])
    out = gcn_layer(Tensor(H), A_hat, D_hat, Tensor(W)).data
    assert np.max(np.abs(out - expected)) < 1e-12


def test_position_embedding_values():
    pe = position_embedding(1, 4)
    # components: sin(1), cos(1), sin(1/100), cos(1/100)
    assert np.allclose(pe, [np.sin(1), np.cos(1), np.sin(0.01), np.cos(0.01)], atol=1e-15)
    assert np.allclose(position_embedding(0, 6), [0, 1, 0, 1, 0, 1])
    with pytest.raises(ValueError):
        position_embedding(-1, 4)


def test_batched_gcn_matches_per_snapshot(snapshots):
    p = small_params()
    seq = prepare_sequence(snapshots, 16)
    Z = encode_gcn(seq, p.tensors(), p.config).data
    for s, off in zip(seq.snapshots, seq.offsets):
        assert np.allclose(Z[off:off + s.n], encode_snapshot(s, p).data, atol=1e-12)


def test_short_term_batch_matches_per_window(snapshots):
    p = small_params()
    seq = prepare_sequence(snapshots, 16)
    w = p.tensors()
    E = np.random.default_rng(0).normal(size=(seq.n_rows, 8))
    got = short_term_encode(E, seq, w, p.config).data
    for s, rows in enumerate(short_windows(seq, p.config.k)):
        last = np.arange(seq.offsets[s], seq.offsets[s + 1])
        q = np.searchsorted(rows, last)
        ref = set_transformer(E[rows], seq.order[rows], w, "short", p.config.attn_layers,
                              query_rows=q).data
        assert np.allclose(got[last], ref, atol=1e-12)


def test_forward_is_causal(snapshots):
    p = small_params()
    full = forward(prepare_sequence(snapshots, 16), p.tensors(), p.config).data
    head = forward(prepare_sequence(snapshots[:3], 16), p.tensors(), p.config).data
    assert np.allclose(full[:head.shape[0]], head, atol=1e-12)


def test_node_permutation_equivariance(snapshots):
    p = small_params()
    seq = prepare_sequence(snapshots, 16)
    w = p.tensors()
    E = np.random.default_rng(1).normal(size=(seq.n_rows, 8))
    perm = np.arange(seq.n_rows)
    a, b = seq.offsets[2], seq.offsets[3]
    perm[a:b] = perm[a:b][::-1]
    out = set_transformer(E, seq.order, w, "long", 2).data
    out_p = set_transformer(E[perm], seq.order[perm], w, "long", 2).data
    assert np.allclose(out[perm], out_p, atol=1e-12)


def test_output_width():
    p = small_params()
    assert p.config.d_out == 16
    q = small_params(temporal=False)
    assert q.config.d_out == 8 and not any(k.startswith(("long", "short")) for k in q.weights)


def test_edge_score_formula():
    H = np.array([[1.0, 0.0], [0.0, 2.0]])
    w1, w2 = np.array([[0.5, 0.0]]), np.array([[0.0, 0.25]])
    f = edge_score(H, [[0, 1, 3]], w1, w2, 0.3).data[0, 0]
    assert f == pytest.approx(3 / (1 + np.exp(-(0.5 + 0.5 - 0.3))), rel=1e-15)


def test_regularized_names_skip_biases():
    p = small_params()
    names = p.regularized()
    assert "long.0.b1" not in names and "long.0.ff1" in names and "w1" in names


def test_save_load_bytes_identical(tmp_path, snapshots):
    p = small_params(3)
    p.center = np.arange(16.0)
    p.radius2 = 1.5
    p.meta = {"k": 1}
    save_model(p, tmp_path / "a.bin")
    q = load_model(tmp_path / "a.bin")
    save_model(q, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert q.config == p.config and q.radius2 == 1.5 and np.array_equal(q.center, p.center)
    seq = prepare_sequence(snapshots, 16)
    assert np.array_equal(forward(seq, p.tensors(), p.config).data, forward(seq, q.tensors(), q.config).data)


def test_fingerprint_stable():
    assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})


def test_empty_windows_leave_position_gaps(snapshots):
    from glad.embed import Embedder
    from glad.graph import build_snapshot

    empty = build_snapshot([], Embedder(16), t=snapshots[-1].t + 1)
    seq = prepare_sequence(snapshots[:2] + [empty] + [snapshots[2]], 16)
    assert len(seq.snapshots) == 3
    assert seq.positions.tolist() == [0, 1, snapshots[2].t - snapshots[0].t]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_full_model_gradient(seed):
    """Reverse-mode gradient of the edge score through every layer."""
    from glad.embed import Embedder
    from glad.graph import build_snapshot
    from conftest import small_window
    import random

    rng = random.Random(seed)
    snaps = [build_snapshot(small_window(rng), Embedder(16), t) for t in range(2)]
    p = small_params(seed, d_hidden=4, attn_dim=2, ffn_dim=3, attn_layers=1)
    seq = prepare_sequence(snaps, 16)
    names = ["gcn.1", "long.0.q", "short.0.ff2", "w1"]

    def loss(ts):
        w = p.tensors()
        w.update(dict(zip(names, ts)))
        H = forward(seq, w, p.config)
        return ad.total(edge_score(H, seq.global_edges(), w["w1"], w["w2"], 0.3))

    assert ad.grad_check(loss, [p.weights[n] for n in names]) < 1e-4
