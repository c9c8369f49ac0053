"""One-class training: margin edge loss on sampled negatives plus a
hypersphere loss on pooled graph representations, optimised with AdamW."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphSnapshot
from .model import ModelConfig, ModelParams, Sequence, edge_score, fingerprint, forward, prepare_sequence

logger = logging.getLogger(__name__)

MAX_RETRIES = 10


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    seed: int
    lr: float = 1e-3
    epochs: int = 100
    gamma: float = 0.5
    mu: float = 0.3
    alpha: float = 1.0
    lambda_: float = 5e-7  # "lambda" in config files
    k: int = 5
    percentile: float = 0.95
    svdd_c_weight: float = 1.0
    history_budget: int = 64
    batch_windows: int = 0  # 0: one full-sequence step per epoch
    negatives: int = 1  # sampled negatives per positive edge
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.percentile <= 1:
            raise ValueError("percentile must lie in (0, 1]")
        if self.epochs < 1 or self.k < 1 or self.history_budget < 1 or self.negatives < 1:
            raise ValueError("epochs, k, history_budget and negatives must be >= 1")
        if self.lr <= 0 or self.batch_windows < 0:
            raise ValueError("lr must be > 0 and batch_windows >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        if "seed" not in d:
            raise ValueError("train.seed is required")
        return cls(**d)


# ---------------------------------------------------------------- negatives

@dataclass(frozen=True)
class NegativeEdge:
    i: int
    j: int
    w: int
    replaced_i: bool
    flagged: bool  # retries ran out; pair may exist or be a self-pair


def sample_negative(edge, snapshot: GraphSnapshot, rng: np.random.Generator,
                    degrees=None, existing=None) -> NegativeEdge | None:
    """Corrupt one endpoint of ``edge``; the side is a Bernoulli draw with
    probability ``d_i / (d_i + d_j)`` of replacing ``i``.

    Returns None when the snapshot has fewer than 3 nodes.
    """
    n = snapshot.n
    if n < 3:
        return None
    i, j, w = (int(x) for x in edge)
    d = snapshot.degrees() if degrees is None else degrees
    existing = snapshot.edge_set() if existing is None else existing
    p_i = d[i] / (d[i] + d[j])
    for attempt in range(MAX_RETRIES + 1):
        replace_i = rng.random() < p_i
        old = i if replace_i else j
        new = int(rng.integers(n - 1))
        new += new >= old  # uniform over the other n - 1 nodes
        a, b = (new, j) if replace_i else (i, new)
        a, b = min(a, b), max(a, b)
        if a != b and (a, b) not in existing:
            return NegativeEdge(a, b, w, replace_i, False)
    return NegativeEdge(a, b, w, replace_i, True)


def sample_negatives(seq: Sequence, rng: np.random.Generator, per_edge: int = 1):
    """Negatives for every edge of the sequence, in global row indices.

    Returns ``(pos, neg, flagged)`` where row ``r`` of ``neg`` corrupts row
    ``r`` of ``pos``.
    """
    pos, neg, flagged = [], [], 0
    for snap, off in zip(seq.snapshots, seq.offsets):
        if snap.n < 3 or snap.m == 0:
            continue
        deg = snap.degrees()
        existing = snap.edge_set()
        for e in snap.edges:
            for _ in range(per_edge):
                ne = sample_negative(e, snap, rng, deg, existing)
                pos.append((e[0] + off, e[1] + off, e[2]))
                neg.append((ne.i + off, ne.j + off, ne.w))
                flagged += ne.flagged
    shape = (-1, 3)
    return (np.array(pos, dtype=np.int64).reshape(shape),
            np.array(neg, dtype=np.int64).reshape(shape), flagged)


# ---------------------------------------------------------------- losses

def retained_pairs(f_pos, f_neg) -> np.ndarray:
    """Indices of pairs kept for the loss: a pair whose positive already
    scores above its negative is dropped."""
    f_pos = np.asarray(f_pos, dtype=np.float64).reshape(-1)
    f_neg = np.asarray(f_neg, dtype=np.float64).reshape(-1)
    return np.flatnonzero(~(f_pos > f_neg))


def pair_losses(f_pos: Tensor, f_neg: Tensor, gamma: float) -> tuple[np.ndarray, Tensor]:
    """Retained pair indices and the summed hinge ``max(0, gamma + f+ - f-)``."""
    keep = retained_pairs(f_pos.data, f_neg.data)
    if keep.size == 0:
        return keep, Tensor(0.0)
    margin = ad.take_rows(f_pos, keep) - ad.take_rows(f_neg, keep) + gamma
    return keep, ad.total(ad.hinge(margin))


def graph_repr(H) -> Tensor:
    """Column-wise max over a snapshot's node rows."""
    return ad.maxpool_cols(H)


def nearest_rank(values, q: float) -> float:
    """Value at rank ``ceil(q * n)`` of the ascending sample."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ValueError("nearest_rank of an empty sample")
    # round away float noise such as 0.95 * 20 = 19.000000000000004
    rank = max(1, math.ceil(round(q * v.size, 9)))
    return float(v[min(rank, v.size) - 1])


def svdd_state(reps, percentile: float, center=None) -> tuple[np.ndarray, float]:
    """Center (mean of ``reps`` unless given) and squared radius at the
    nearest-rank percentile of squared distances."""
    reps = np.asarray(reps, dtype=np.float64)
    c = reps.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    d2 = np.sum((reps - c) ** 2, axis=1)
    return c, nearest_rank(d2, percentile)


def svdd_loss(reps: Tensor, center, radius2: float, c_weight: float) -> Tensor:
    """``R^2 + C * mean(max(0, |r - c|^2 - R^2))``; R is a constant here."""
    reps = ad.as_tensor(reps)
    diff = reps - np.asarray(center, dtype=np.float64).reshape(1, -1)
    d2 = ad.matmul(ad.mul(diff, diff), np.ones((reps.shape[1], 1)))
    slack = ad.mean(ad.hinge(d2 - radius2))
    return ad.scale(slack, c_weight) + radius2


def l2_penalty(weights: dict[str, np.ndarray], names, lam: float) -> float:
    return 0.5 * lam * math.fsum(float(np.sum(weights[n] ** 2)) for n in names)


def total_loss(loss_e, loss_g, weights: dict, names, alpha: float, lam: float) -> float:
    """``L_e + alpha * L_g + (lambda / 2) * sum of squared weights``."""
    return float(loss_e) + alpha * float(loss_g) + l2_penalty(weights, names, lam)


# ---------------------------------------------------------------- optimiser

class AdamW:
    """Adam on the loss gradient plus decoupled decay ``lr * lambda * W`` on
    the regularised weights. The decay stands in for the gradient of the
    L2 term, which is therefore left out of the backward pass."""

    def __init__(self, names, decayed, lr, lam, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.lam, self.b1, self.b2, self.eps = lr, lam, beta1, beta2, eps
        self.decayed = set(decayed)
        self.m = {n: None for n in names}
        self.v = {n: None for n in names}
        self.t = 0

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, g in grads.items():
            if self.m[n] is None:
                self.m[n] = np.zeros_like(g)
                self.v[n] = np.zeros_like(g)
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            w = weights[n]
            if n in self.decayed and self.lam:
                w -= self.lr * self.lam * w
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- loop

@dataclass
class EpochLog:
    epoch: int
    loss_e: float
    loss_g: float
    reg: float
    total: float
    radius2: float
    mean_dist: float
    norm_dist: float
    retained: int
    pairs: int
    flagged: int
    val_f1: float | None = None
    val_auc: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def model_config_for(cfg: TrainConfig, base: ModelConfig | None = None) -> ModelConfig:
    """Model config with the trainer-owned fields (k, history, mu) applied."""
    base = base or ModelConfig()
    d = asdict(base)
    d.update(k=cfg.k, history=cfg.history_budget, mu=cfg.mu)
    return ModelConfig(**d)


def _batches(snapshots, size):
    if size <= 0:
        return [snapshots]
    return [snapshots[a:a + size] for a in range(0, len(snapshots), size)]


def train(snapshots: list[GraphSnapshot], cfg: TrainConfig, model_config: ModelConfig | None = None,
          val_snapshots: list[GraphSnapshot] | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> tuple[ModelParams, list[EpochLog]]:
    """Fit a model on normal windows; returns the parameters and the
    per-epoch log. ``val_snapshots`` (labelled) adds validation edge F-1."""
    from .evaluate import choose_threshold, compute_metrics, edge_scores

    cfg.validate()
    mcfg = model_config_for(cfg, model_config)
    params = ModelParams.init(mcfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    seqs = [prepare_sequence(b, mcfg.d_in) for b in _batches(snapshots, cfg.batch_windows)]
    seqs = [s for s in seqs if s.snapshots]
    if not seqs:
        raise ValueError("no nonempty training snapshots")
    decayed = params.regularized()
    opt = AdamW(list(params.weights), decayed, cfg.lr, cfg.lambda_, cfg.beta1, cfg.beta2, cfg.eps)
    center = None
    radius2 = 0.0
    first_mean = None
    logs: list[EpochLog] = []

    for epoch in range(1, cfg.epochs + 1):
        le_sum = lg_sum = 0.0
        kept = n_pairs = n_flag = 0
        epoch_reps = []
        for seq in seqs:
            w = params.tensors(requires_grad=True)
            H = forward(seq, w, mcfg)
            pos, neg, flagged = sample_negatives(seq, rng, cfg.negatives)
            f_pos = edge_score(H, pos, w["w1"], w["w2"], mcfg.mu)
            f_neg = edge_score(H, neg, w["w1"], w["w2"], mcfg.mu)
            keep, loss_e = pair_losses(f_pos, f_neg, cfg.gamma)
            reps = ad.segment_maxpool(H, seq.offsets)
            if center is None and len(seqs) == 1:
                center, radius2 = svdd_state(reps.data, cfg.percentile)
            if center is not None:
                _, radius2 = svdd_state(reps.data, cfg.percentile, center)
                loss_g = svdd_loss(reps, center, radius2, cfg.svdd_c_weight)
            else:
                loss_g = Tensor(0.0)
            loss = loss_e + ad.scale(loss_g, cfg.alpha) if cfg.alpha else loss_e
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            ad.backward(loss)
            grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                     for n, t in w.items()}
            opt.step(params.weights, grads)
            le_sum += loss_e.item()
            lg_sum += loss_g.item()
            kept += int(keep.size)
            n_pairs += len(pos)
            n_flag += flagged
            epoch_reps.append(reps.data)
        reps_all = np.vstack(epoch_reps)
        if center is None:
            # mini-batch mode: the center comes from the whole first epoch
            center, radius2 = svdd_state(reps_all, cfg.percentile)
        d2 = np.sum((reps_all - center) ** 2, axis=1)
        mean_dist = float(d2.mean())
        if first_mean is None:
            first_mean = mean_dist
        reg = l2_penalty(params.weights, decayed, cfg.lambda_)
        log = EpochLog(epoch, le_sum, lg_sum, reg, le_sum + cfg.alpha * lg_sum + reg,
                       float(radius2), mean_dist,
                       mean_dist / first_mean if first_mean > 0 else 0.0,
                       kept, n_pairs, n_flag)
        if not math.isfinite(log.total):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        if val_snapshots:
            scored = edge_scores(params, val_snapshots)
            if scored:
                s = [e.score for e in scored]
                y = [e.label for e in scored]
                m = compute_metrics(s, y, choose_threshold(s, y))
                log.val_f1, log.val_auc = m.f1, m.auc
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log)
        logger.info("epoch %d loss %.6g (edge %.6g, sphere %.6g)", epoch, log.total,
                    log.loss_e, log.loss_g)

    # final hypersphere radius for the trained weights
    reps_final = np.vstack([ad.segment_maxpool(forward(s, params.tensors(), mcfg), s.offsets).data
                            for s in seqs])
    _, radius2 = svdd_state(reps_final, cfg.percentile, center)
    params.center = center
    params.radius2 = radius2
    params.meta = {"train": cfg.to_dict(), "train_fingerprint": fingerprint(cfg.to_dict()),
                   "epochs_run": cfg.epochs}
    return params, logs
