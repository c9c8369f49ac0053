"""Online event-template mining with a fixed-depth prefix tree.

Messages are routed by token count, then by their leading tokens, to a leaf
holding candidate templates; the most similar candidate above the threshold
absorbs the message (differing positions become ``<*>``), otherwise a new
template is created.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

WILDCARD = "<*>"

_MASKS = [
    re.compile(r"^\d+$"),
    re.compile(r"^(0x)?[0-9a-fA-F]{8,}$"),
    re.compile(r"^\d{1,3}(\.\d{1,3}){3}(:\d+)?$"),
    re.compile(r"^[a-zA-Z][\w+.-]*://\S*$"),
    re.compile(r"^~?(/[^/\s]*)+/?$"),
]


def mask_token(token: str) -> str:
    """Replace digits-only, long hex, IP and path/URL tokens with the wildcard."""
    for rx in _MASKS:
        if rx.match(token):
            return WILDCARD
    return token


def template_id(tokens) -> str:
    return hashlib.sha1(" ".join(tokens).encode("utf-8")).hexdigest()[:8]


@dataclass
class EventTemplate:
    template_id: str
    tokens: list[str]
    support: int

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


class _Cluster:
    __slots__ = ("tokens", "support")

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.support = 0

    @property
    def id(self):
        return template_id(self.tokens)


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self):
        self.children = {}
        self.clusters = []


class TemplateMiner:
    """Drain-style parser state.

    ``depth`` counts the root and leaf levels, so ``depth - 2`` leading tokens
    are used as tree keys.
    """

    def __init__(self, depth: int = 4, similarity: float = 0.5, max_children: int = 100):
        if depth < 3:
            raise ValueError("depth must be >= 3")
        self.depth = depth
        self.similarity = similarity
        self.max_children = max_children
        self._root = _Node()
        self._clusters: list[_Cluster] = []

    def _leaf(self, tokens):
        node = self._root.children.setdefault(len(tokens), _Node())
        for tok in tokens[: self.depth - 2]:
            key = WILDCARD if any(c.isdigit() for c in tok) else tok
            if key not in node.children:
                if len(node.children) >= self.max_children - 1 and key != WILDCARD:
                    key = WILDCARD
                node.children.setdefault(key, _Node())
            node = node.children[key]
        return node

    def add(self, message: str) -> _Cluster:
        """Parse one message and return the internal cluster it joined."""
        tokens = [mask_token(t) for t in message.split()]
        if not tokens:
            raise ValueError("message has no tokens")
        leaf = self._leaf(tokens)
        best, best_sim = None, -1.0
        for cl in leaf.clusters:
            sim = sum(a == b for a, b in zip(cl.tokens, tokens)) / len(tokens)
            if sim > best_sim:
                best, best_sim = cl, sim
        if best is None or best_sim < self.similarity:
            best = _Cluster(tokens)
            leaf.clusters.append(best)
            self._clusters.append(best)
        else:
            best.tokens = [a if a == b else WILDCARD for a, b in zip(best.tokens, tokens)]
        best.support += 1
        return best

    def parse_message(self, message: str) -> str:
        """Parse one message; returns the current id of its template."""
        return self.add(message).id

    def templates(self) -> list[EventTemplate]:
        return [EventTemplate(c.id, list(c.tokens), c.support) for c in self._clusters]

    def get_template(self, tid: str) -> EventTemplate:
        for c in self._clusters:
            if c.id == tid:
                return EventTemplate(c.id, list(c.tokens), c.support)
        raise KeyError(f"unknown template id {tid!r}")

    def __len__(self):
        return len(self._clusters)


def save_templates(templates, path) -> None:
    rows = [{"template_id": t.template_id, "tokens": t.tokens, "support": t.support}
            for t in templates]
    Path(path).write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")


def load_templates(path) -> list[EventTemplate]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return [EventTemplate(r["template_id"], list(r["tokens"]), int(r["support"])) for r in rows]
