"""Per-window event/field graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import Embedder, NodeKey
from .fields import ParsedLog
from .ingest import Label


@dataclass
class GraphSnapshot:
    t: int
    nodes: list[NodeKey]
    X: np.ndarray  # n x d
    edges: np.ndarray  # m x 3 int: i, j, w with i < j
    contributors: list[frozenset] = field(default_factory=list)
    record_labels: list[Label] = field(default_factory=list)
    edge_labels: list[Label] | None = None
    window_label: Label = Label.NORMAL
    start_ms: int = 0

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def A(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=np.int64)
        if self.m:
            i, j, w = self.edges.T
            A[i, j] = w
            A[j, i] = w
        return A

    def degrees(self) -> np.ndarray:
        """Weighted degrees, self-loops excluded."""
        d = np.zeros(self.n)
        if self.m:
            np.add.at(d, self.edges[:, 0], self.edges[:, 2])
            np.add.at(d, self.edges[:, 1], self.edges[:, 2])
        return d

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j, _ in self.edges}

    @property
    def is_empty(self) -> bool:
        return self.n == 0


def build_snapshot(window: list[ParsedLog], embedder: Embedder, t: int = 0,
                   start_ms: int = 0, dim: int | None = None) -> GraphSnapshot:
    """One node per distinct template and per distinct (type, text) field;
    each field mention adds 1 to its (event, field) edge weight."""
    events = sorted({(p.template_id, p.template) for p in window})
    fields = sorted({(m.field_type.value, m.text) for p in window for m in p.mentions})
    nodes = [NodeKey.event(text) for _, text in events]
    nodes += [NodeKey.field(ft, text) for ft, text in fields]
    index = {("event", tid): k for k, (tid, _) in enumerate(events)}
    for k, f in enumerate(fields):
        index[("field",) + f] = len(events) + k

    weights: dict[tuple[int, int], int] = {}
    contrib: dict[tuple[int, int], set] = {}
    for r, p in enumerate(window):
        i = index[("event", p.template_id)]
        for m in p.mentions:
            j = index[("field", m.field_type.value, m.text)]
            weights[(i, j)] = weights.get((i, j), 0) + 1
            contrib.setdefault((i, j), set()).add(r)
    keys = sorted(weights)
    edges = np.array([(i, j, weights[(i, j)]) for i, j in keys], dtype=np.int64).reshape(-1, 3)

    d = dim if dim is not None else embedder.dim
    X = np.array([embedder.node(k) for k in nodes]).reshape(len(nodes), d)
    labels = [p.record.label for p in window]
    window_label = Label.ANOMALOUS if any(l is Label.ANOMALOUS for l in labels) else Label.NORMAL
    snap = GraphSnapshot(t, nodes, X, edges, [frozenset(contrib[k]) for k in keys],
                         labels, None, window_label, start_ms)
    snap.edge_labels = label_edges(snap)
    return snap


def label_edges(snapshot: GraphSnapshot) -> list[Label]:
    """An edge is anomalous iff any record that produced it is anomalous."""
    rl = snapshot.record_labels
    return [Label.ANOMALOUS if any(rl[r] is Label.ANOMALOUS for r in c) else Label.NORMAL
            for c in snapshot.contributors]


def with_self_loops(A) -> tuple[np.ndarray, np.ndarray]:
    """Return ``A + I`` and its diagonal degree matrix."""
    A = np.asarray(A, dtype=np.float64)
    A_hat = A + np.eye(A.shape[0])
    return A_hat, np.diag(A_hat.sum(axis=1))


def normalized_adjacency(A) -> np.ndarray:
    """Symmetric normalisation ``D^-1/2 (A + I) D^-1/2``."""
    A_hat, D_hat = with_self_loops(A)
    inv_sqrt = 1.0 / np.sqrt(np.diag(D_hat))
    return inv_sqrt[:, None] * A_hat * inv_sqrt[None, :]


# ---------------------------------------------------------------- persistence

def _snapshot_json(s: GraphSnapshot) -> dict:
    return {
        "t": s.t,
        "start_ms": s.start_ms,
        "window_label": s.window_label.value,
        "nodes": [{"kind": k.kind, "type": k.field_type, "text": k.text} for k in s.nodes],
        "edges": s.edges.tolist(),
        "labels": [l.value for l in (s.edge_labels or [])],
    }


def save_snapshots(snapshots, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for s in snapshots:
        stem = f"snapshot_{s.t:06d}"
        (out / f"{stem}.json").write_text(json.dumps(_snapshot_json(s)) + "\n", encoding="utf-8")
        np.save(out / f"{stem}.npy", s.X)
        index.append(stem)
    (out / "index.json").write_text(json.dumps({"snapshots": index}, indent=1) + "\n",
                                    encoding="utf-8")


def load_snapshots(in_dir) -> list[GraphSnapshot]:
    src = Path(in_dir)
    stems = json.loads((src / "index.json").read_text(encoding="utf-8"))["snapshots"]
    snaps = []
    for stem in stems:
        d = json.loads((src / f"{stem}.json").read_text(encoding="utf-8"))
        nodes = [NodeKey(n["kind"], n["type"], n["text"]) for n in d["nodes"]]
        edges = np.array(d["edges"], dtype=np.int64).reshape(-1, 3)
        X = np.load(src / f"{stem}.npy")
        labels = [Label(l) for l in d["labels"]]
        snaps.append(GraphSnapshot(d["t"], nodes, X, edges, [], [], labels,
                                   Label(d["window_label"]), d["start_ms"]))
    return snaps
