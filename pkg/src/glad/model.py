"""Temporal-attentive graph encoder and edge scoring head.

A sequence of snapshots is encoded in one pass: the rows of all nonempty
snapshots are stacked, the GCN runs block-diagonally, and two attention
stacks read the stacked rows under causal masks. The long-term stack sees
up to ``history`` earlier snapshots; the short-term stack is re-run on each
window of the last ``k`` snapshots and keeps the rows of the newest one.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphSnapshot, normalized_adjacency, with_self_loops

MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    d_in: int = 768
    d_hidden: int = 1024
    gcn_layers: int = 2
    attn_layers: int = 2
    attn_dim: int = 64
    ffn_dim: int = 128
    k: int = 5
    history: int = 64
    temporal: bool = True
    mu: float = 0.3
    # multiplier on unit-norm node attributes; None means sqrt(d_in)
    attr_scale: float | None = None

    @property
    def input_scale(self) -> float:
        return float(np.sqrt(self.d_in)) if self.attr_scale is None else float(self.attr_scale)

    @property
    def d_out(self) -> int:
        return 2 * self.d_hidden if self.temporal else self.d_hidden


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _he(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    center: np.ndarray | None = None
    radius2: float | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        c = config
        w: dict[str, np.ndarray] = {}
        dims = [c.d_in] + [c.d_hidden] * c.gcn_layers
        for l in range(c.gcn_layers):
            w[f"gcn.{l}"] = _he(rng, dims[l], dims[l + 1])
        if c.temporal:
            for stack in ("long", "short"):
                for l in range(c.attn_layers):
                    p = f"{stack}.{l}."
                    w[p + "q"] = _glorot(rng, c.d_hidden, c.attn_dim)
                    w[p + "k"] = _glorot(rng, c.d_hidden, c.attn_dim)
                    w[p + "v"] = _glorot(rng, c.d_hidden, c.attn_dim)
                    w[p + "o"] = _glorot(rng, c.attn_dim, c.d_hidden)
                    w[p + "ff1"] = _glorot(rng, c.d_hidden, c.ffn_dim)
                    w[p + "b1"] = np.zeros((1, c.ffn_dim))
                    w[p + "ff2"] = _glorot(rng, c.ffn_dim, c.d_hidden)
                    w[p + "b2"] = np.zeros((1, c.d_hidden))
        w["w1"] = _glorot(rng, 1, c.d_out)
        w["w2"] = _glorot(rng, 1, c.d_out)
        return cls(config, w)

    def regularized(self) -> list[str]:
        """Names entering the L2 term: every weight matrix, no biases."""
        return [k for k in self.weights if not k.rsplit(".", 1)[-1].startswith("b")]

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.weights.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                           None if self.center is None else self.center.copy(),
                           self.radius2, dict(self.meta))


# ---------------------------------------------------------------- building blocks

def gcn_layer(H, A_hat, D_hat, W) -> Tensor:
    """``relu(D^-1/2 A_hat D^-1/2 H W)`` for one dense graph."""
    inv = 1.0 / np.sqrt(np.diag(np.asarray(D_hat, dtype=np.float64)))
    norm = inv[:, None] * np.asarray(A_hat, dtype=np.float64) * inv[None, :]
    return ad.relu(ad.matmul(norm, ad.matmul(H, W)))


def position_embedding(p: int, d: int) -> np.ndarray:
    """Sinusoidal embedding: ``sin`` at even and ``cos`` at odd components."""
    if p < 0:
        raise ValueError("position must be >= 0")
    i = np.arange(d) // 2
    angle = p / np.power(10000.0, 2 * i / d)
    return np.where(np.arange(d) % 2 == 0, np.sin(angle), np.cos(angle))


def attention_layer(Xq, Xkv, mask, w: dict[str, Tensor], prefix: str) -> Tensor:
    """Single-head scaled dot-product attention, residual, then a
    relu feed-forward with its own residual."""
    Q = Xq @ w[prefix + "q"]
    K = Xkv @ w[prefix + "k"]
    V = Xkv @ w[prefix + "v"]
    scores = ad.scale(Q @ ad.transpose(K), 1.0 / np.sqrt(Q.shape[1]))
    att = ad.softmax_rows(scores, mask) @ V
    Y = Xq + att @ w[prefix + "o"]
    hidden = ad.relu(Y @ w[prefix + "ff1"] + w[prefix + "b1"])
    return Y + (hidden @ w[prefix + "ff2"] + w[prefix + "b2"])


def set_transformer(E, order, w: dict[str, Tensor], prefix: str, layers: int,
                    window: int | None = None, query_rows=None) -> Tensor:
    """Stack of attention layers over rows tagged with sequence order.

    A row attends to rows whose order is not later than its own (and, given
    ``window``, fewer than ``window`` steps earlier). Rows sharing an order
    value see each other symmetrically, so permuting them permutes the
    output. ``query_rows`` restricts the last layer's output to those rows.
    """
    E = ad.as_tensor(E)
    order = np.asarray(order)
    allowed = order[None, :] <= order[:, None]
    if window is not None:
        allowed &= order[None, :] > order[:, None] - window
    H = E
    for l in range(layers):
        if l == layers - 1 and query_rows is not None:
            q = np.asarray(query_rows, dtype=np.intp)
            H = attention_layer(ad.take_rows(H, q), H, allowed[q], w, f"{prefix}.{l}.")
        else:
            H = attention_layer(H, H, allowed, w, f"{prefix}.{l}.")
    return H


def edge_score(H, edges, w1, w2, mu: float) -> Tensor:
    """``w * sigmoid(w1.h_i + w2.h_j - mu)`` for each ``(i, j, w)`` row."""
    edges = np.asarray(edges).reshape(-1, 3)
    H = ad.as_tensor(H)
    u = H @ ad.transpose(ad.as_tensor(w1))
    v = H @ ad.transpose(ad.as_tensor(w2))
    logits = ad.take_rows(u, edges[:, 0]) + ad.take_rows(v, edges[:, 1]) - mu
    return ad.mul(ad.sigmoid(logits), edges[:, 2:3].astype(np.float64))


# ---------------------------------------------------------------- sequences

@dataclass
class Sequence:
    """Nonempty snapshots of one chronological run, stacked row-wise."""

    snapshots: list[GraphSnapshot]
    X: np.ndarray
    offsets: np.ndarray
    blocks: list
    order: np.ndarray  # per row: ordinal of its snapshot
    positions: np.ndarray  # per snapshot: window index relative to the first
    X_unique: np.ndarray | None = None
    X_inverse: np.ndarray | None = None

    def __post_init__(self):
        if self.X_unique is None and self.X.shape[0] == 0:
            self.X_unique, self.X_inverse = self.X, np.zeros(0, dtype=np.intp)
        elif self.X_unique is None:
            uniq, inv = np.unique(self.X, axis=0, return_inverse=True)
            self.X_unique, self.X_inverse = uniq, inv.reshape(-1)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def global_edges(self) -> np.ndarray:
        rows = [s.edges + np.array([off, off, 0]) for s, off in zip(self.snapshots, self.offsets)]
        return np.vstack(rows) if rows else np.zeros((0, 3), dtype=np.int64)

    def edge_snapshot(self) -> np.ndarray:
        return np.concatenate([np.full(s.m, k) for k, s in enumerate(self.snapshots)]
                              or [np.zeros(0, dtype=int)]).astype(int)


def prepare_sequence(snapshots: list[GraphSnapshot], d_in: int | None = None) -> Sequence:
    """Stack the nonempty snapshots. Positions count windows from the first
    snapshot given, so skipped empty windows leave gaps instead of shifting
    later graphs."""
    t0 = snapshots[0].t if snapshots else 0
    snaps = [s for s in snapshots if not s.is_empty]
    if not snaps:
        d = d_in or 0
        return Sequence([], np.zeros((0, d)), np.zeros(1, dtype=int), [],
                        np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    sizes = [s.n for s in snaps]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    blocks = [(int(off), normalized_adjacency(s.A)) for s, off in zip(snaps, offsets)]
    order = np.repeat(np.arange(len(snaps)), sizes)
    positions = np.array([s.t - t0 for s in snaps], dtype=int)
    return Sequence(snaps, np.vstack([s.X for s in snaps]), offsets, blocks, order, positions)


def encode_snapshot(snapshot: GraphSnapshot, params: ModelParams) -> Tensor:
    """GCN embedding ``Z_t`` of one snapshot (zero rows when empty)."""
    w = params.tensors()
    if snapshot.is_empty:
        return Tensor(np.zeros((0, params.config.d_hidden)))
    A_hat, D_hat = with_self_loops(snapshot.A)
    H = Tensor(snapshot.X * params.config.input_scale)
    for l in range(params.config.gcn_layers):
        H = gcn_layer(H, A_hat, D_hat, w[f"gcn.{l}"])
    return H


def encode_gcn(seq: Sequence, w: dict[str, Tensor], config: ModelConfig) -> Tensor:
    # the same node text recurs across windows, so the first projection only
    # needs the distinct attribute rows
    HW = ad.take_rows(Tensor(seq.X_unique * config.input_scale) @ w["gcn.0"], seq.X_inverse)
    H = ad.relu(ad.propagate(seq.blocks, HW))
    for l in range(1, config.gcn_layers):
        H = ad.relu(ad.propagate(seq.blocks, H @ w[f"gcn.{l}"]))
    return H


def short_windows(seq: Sequence, k: int) -> list[np.ndarray]:
    """Row indices of snapshots ``s-k+1..s`` for each snapshot ``s``."""
    return [np.arange(seq.offsets[max(0, s - k + 1)], seq.offsets[s + 1])
            for s in range(len(seq.snapshots))]


def short_term_encode(E, seq: Sequence, w: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Short-term stack for every snapshot of ``seq`` in one pass.

    Same result as calling :func:`set_transformer` on each window of the last
    ``k`` snapshots with ``query_rows`` set to the newest snapshot's rows, but
    row-wise projections run once over all windows' rows stacked together.
    """
    E = ad.as_tensor(E)
    windows = short_windows(seq, config.k)
    tags = [seq.order[g] for g in windows]
    sizes = np.diff(seq.offsets)
    X, index = E, windows
    layers = config.attn_layers
    for l in range(layers):
        p = f"short.{l}."
        if l == layers - 1:
            picks = [idx[len(idx) - n:] for idx, n in zip(index, sizes)]
            sel = [np.arange(len(idx) - n, len(idx)) for idx, n in zip(index, sizes)]
        else:
            picks = index
            sel = [np.arange(len(idx)) for idx in index]
        rows = np.concatenate(picks)
        Xq = ad.take_rows(X, rows)
        Q = Xq @ w[p + "q"]
        K = X @ w[p + "k"]
        V = X @ w[p + "v"]
        bounds = np.concatenate([[0], np.cumsum([len(x) for x in picks])])
        plan = [(np.arange(bounds[g], bounds[g + 1]), index[g],
                 tags[g][sel[g]][:, None] >= tags[g][None, :]) for g in range(len(index))]
        Y = Xq + ad.grouped_attention(Q, K, V, plan) @ w[p + "o"]
        hidden = ad.relu(Y @ w[p + "ff1"] + w[p + "b1"])
        X = Y + (hidden @ w[p + "ff2"] + w[p + "b2"])
        index = [np.arange(bounds[g], bounds[g + 1]) for g in range(len(index))]
    return X


def temporal_encode(Z, seq: Sequence, w: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Concatenate long-term and short-term attention outputs per row."""
    pe = np.array([position_embedding(int(p), config.d_hidden) for p in seq.positions])
    E = Z + pe[seq.order]
    long_term = set_transformer(E, seq.order, w, "long", config.attn_layers,
                                window=config.history)
    short_term = short_term_encode(E, seq, w, config)
    return ad.concat_cols(long_term, short_term)


def forward(seq: Sequence, w: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Final node representations for every stacked row of ``seq``."""
    Z = encode_gcn(seq, w, config)
    if not config.temporal:
        return Z
    return temporal_encode(Z, seq, w, config)


# ---------------------------------------------------------------- persistence

def _npz_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    # fixed timestamps keep the archive byte-identical across runs
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]),
                                          allow_pickle=False)
    return buf.getvalue()


def save_model(params: ModelParams, path) -> None:
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(params.config),
        "radius2": params.radius2,
        "meta": params.meta,
    }
    arrays = {f"w/{k}": v for k, v in params.weights.items()}
    if params.center is not None:
        arrays["center"] = params.center
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"),
                                     dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(_npz_bytes(arrays))


def load_model(path) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode("utf-8"))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header.get('format_version')}")
        weights = {k[2:]: z[k] for k in z.files if k.startswith("w/")}
        center = z["center"] if "center" in z.files else None
    return ModelParams(ModelConfig(**header["config"]), weights, center,
                       header["radius2"], header.get("meta", {}))


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]
