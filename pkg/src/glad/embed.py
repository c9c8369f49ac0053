"""Node attribute texts and their fixed-size vectors.

Vectors come from signed feature hashing of word unigrams and character
trigrams, L2-normalised. A table of precomputed vectors can override the
hashed ones text by text.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import FieldType, Prompt, build_prompt

DEFAULT_DIM = 768
HASH_SEED = b"glad-node-v1"


@dataclass(frozen=True, order=True)
class NodeKey:
    kind: str  # "event" | "field"
    field_type: str  # FieldType value, "" for events
    text: str

    def __post_init__(self):
        if self.kind not in ("event", "field"):
            raise ValueError(f"bad node kind {self.kind!r}")
        if (self.kind == "field") != bool(self.field_type):
            raise ValueError("field nodes need a field type, event nodes must not have one")

    @classmethod
    def event(cls, template_text: str) -> "NodeKey":
        return cls("event", "", template_text)

    @classmethod
    def field(cls, field_type, text: str) -> "NodeKey":
        return cls("field", FieldType(field_type).value, text)


def node_text(key: NodeKey) -> str:
    """Events use their template verbatim, fields their positive P1 prompt."""
    if key.kind == "event":
        return key.text
    return build_prompt(key.text, FieldType(key.field_type), Prompt.P1, positive=True)


def _features(text: str):
    for word in text.lower().split():
        yield "w:" + word
        padded = f"<{word}>"
        for i in range(len(padded) - 2):
            yield "c:" + padded[i:i + 3]


def embed(text: str, d: int = DEFAULT_DIM) -> np.ndarray:
    if d < 8:
        raise ValueError("dimension must be >= 8")
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    v = np.zeros(d)
    for feat in _features(text):
        h = int.from_bytes(hashlib.blake2b(feat.encode("utf-8"), digest_size=8,
                                           key=HASH_SEED).digest(), "little")
        v[(h >> 1) % d] += 1.0 if h & 1 else -1.0
    norm = np.linalg.norm(v)
    # opposite-signed collisions can cancel everything; leave that as zeros
    return v / norm if norm > 0 else v


def load_embeddings(path, d: int | None = None) -> dict[str, np.ndarray]:
    """Read ``text<TAB>f1 ... fd`` rows (TSV) or an ``.npz`` with ``texts`` and
    ``vectors`` arrays."""
    path = Path(path)
    table: dict[str, np.ndarray] = {}
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            rows = zip((str(t) for t in z["texts"]), np.asarray(z["vectors"], dtype=np.float64))
            rows = list(rows)
    else:
        rows = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            text, _, rest = line.partition("\t")
            try:
                vec = np.array(rest.replace("\t", " ").split(), dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad number: {exc}") from exc
            rows.append((text, vec))
    for text, vec in rows:
        if d is None:
            d = len(vec)
        if len(vec) != d:
            raise ValueError(f"dimension mismatch for {text!r}: {len(vec)} != {d}")
        if text in table:
            raise ValueError(f"duplicate text {text!r}")
        table[text] = vec
    return table


class Embedder:
    """Callable mapping node text to a vector, with per-text overrides."""

    def __init__(self, dim: int = DEFAULT_DIM, overrides: dict[str, np.ndarray] | None = None):
        self.dim = dim
        self.overrides = dict(overrides or {})
        for text, vec in self.overrides.items():
            if len(vec) != dim:
                raise ValueError(f"override for {text!r} has dimension {len(vec)}, expected {dim}")
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_file(cls, path, dim: int = DEFAULT_DIM) -> "Embedder":
        return cls(dim, load_embeddings(path, dim))

    def __call__(self, text: str) -> np.ndarray:
        if text in self.overrides:
            return self.overrides[text]
        if text not in self._cache:
            self._cache[text] = embed(text, self.dim)
        return self._cache[text]

    def node(self, key: NodeKey) -> np.ndarray:
        return self(node_text(key))
