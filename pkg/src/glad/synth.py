"""Labelled coordinator/worker request logs with injected relation anomalies.

Each coordinator has its own message template and its own pool of workers;
users are shared by all coordinators. In a normal window every (worker, user)
pair of every coordinator issues a small, balanced number of requests.
Anomalous windows get one of two injections, alternating by occurrence:

``inflate``  one worker of one coordinator receives ten times its usual
             request count, the extra requests all coming from one user;
``cross``    a coordinator sends requests to a worker owned by a different
             coordinator, a pairing no normal window contains.

Only the injected lines are labelled ``anomaly``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

TEMPLATES = [
    "gateway dispatched order request to worker {w} for user {u}",
    "catalog lookup forwarded to worker {w} user {u} completed",
    "payment coordinator scheduled charge job on worker {w} for user {u} with priority normal",
    "inventory sync batch queued at worker {w} by user {u}",
]


@dataclass
class SynthConfig:
    windows: int = 200
    rate: float = 0.05
    seed: int = 7
    interval_ms: int = 60_000
    coordinators: int = 3
    workers: int = 2  # per coordinator
    users: int = 3  # shared pool
    base_min: int = 2  # requests per (worker, user) pair and window
    base_max: int = 4
    inflation: int = 10
    kinds: list[str] = field(default_factory=lambda: ["inflate", "cross"])

    def validate(self) -> None:
        if self.windows < 1:
            raise ValueError("windows must be >= 1")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        if not 1 <= self.coordinators <= len(TEMPLATES):
            raise ValueError(f"coordinators must lie in [1, {len(TEMPLATES)}]")
        if min(self.workers, self.users, self.base_min) < 1 or self.base_max < self.base_min:
            raise ValueError("pool sizes and base counts must be positive, base_min <= base_max")
        if self.inflation < 2:
            raise ValueError("inflation must be >= 2")
        bad = set(self.kinds) - {"inflate", "cross"}
        if bad or not self.kinds:
            raise ValueError(f"unknown anomaly kinds {sorted(bad)}")
        if "cross" in self.kinds and self.coordinators < 2:
            raise ValueError("cross anomalies need at least two coordinators")


def anomaly_count(windows: int, rate: float) -> int:
    """Round half up, so 200 windows at 5% give exactly 10."""
    return min(windows, int(math.floor(windows * rate + 0.5)))


def anomalous_windows(cfg: SynthConfig, rng: random.Random) -> list[int]:
    """One anomalous window per equal-width stratum of the timeline, which
    spreads them over every chronological split."""
    n = anomaly_count(cfg.windows, cfg.rate)
    picks = []
    for s in range(n):
        lo = s * cfg.windows // n
        hi = (s + 1) * cfg.windows // n
        picks.append(rng.randrange(lo, hi))
    return picks


def worker(c: int, k: int) -> str:
    return f"w{c}{k}"


def user(k: int) -> str:
    return f"u{k}"


def _window_lines(cfg: SynthConfig, rng: random.Random, kind: str | None):
    """(coordinator, message, anomalous) triples for one window."""
    out = []
    counts = {}
    for c in range(cfg.coordinators):
        for a in range(cfg.workers):
            for b in range(cfg.users):
                n = rng.randint(cfg.base_min, cfg.base_max)
                counts[(c, a, b)] = n
                msg = TEMPLATES[c].format(w=worker(c, a), u=user(b))
                out += [(c, msg, False)] * n
    if kind == "inflate":
        c = rng.randrange(cfg.coordinators)
        a = rng.randrange(cfg.workers)
        b = rng.randrange(cfg.users)
        base = sum(counts[(c, a, j)] for j in range(cfg.users))
        msg = TEMPLATES[c].format(w=worker(c, a), u=user(b))
        out += [(c, msg, True)] * ((cfg.inflation - 1) * base)
    elif kind == "cross":
        c = rng.randrange(cfg.coordinators)
        other = (c + 1 + rng.randrange(cfg.coordinators - 1)) % cfg.coordinators
        a = rng.randrange(cfg.workers)
        b = rng.randrange(cfg.users)
        n = rng.randint(cfg.base_min, cfg.base_max)
        msg = TEMPLATES[c].format(w=worker(other, a), u=user(b))
        out += [(c, msg, True)] * n
    return out


def generate_synthetic(cfg: SynthConfig) -> list[dict]:
    """Records as ``{ts, msg, label, src}`` dicts, sorted by timestamp."""
    cfg.validate()
    rng = random.Random(cfg.seed)
    kinds = {}
    for n, t in enumerate(anomalous_windows(cfg, rng)):
        kinds[t] = cfg.kinds[n % len(cfg.kinds)]
    records = []
    for t in range(cfg.windows):
        lines = _window_lines(cfg, rng, kinds.get(t))
        rng.shuffle(lines)
        start = t * cfg.interval_ms
        # spread lines over the window; the very first line sits at 0
        offsets = sorted(rng.randrange(cfg.interval_ms) for _ in lines)
        if t == 0 and offsets:
            offsets[0] = 0
        for off, (c, msg, bad) in zip(offsets, lines):
            records.append({"ts": start + off, "msg": msg,
                            "label": "anomaly" if bad else "normal", "src": f"coord-{c}"})
    return records


def write_synthetic(cfg: SynthConfig, path) -> int:
    records = generate_synthetic(cfg)
    with open(Path(path), "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return len(records)
