"""Stage functions and the cached end-to-end run.

Every stage reads the previous stage's artifact from disk and writes its own,
so any stage can be re-run or inspected in isolation. A stage is skipped when
its stamp (a hash of its inputs and settings) matches the stamp left by the
previous run and its outputs still exist.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import asdict
from pathlib import Path

from .config import PipelineConfig
from .embed import Embedder
from .evaluate import (choose_threshold, compute_metrics, edge_scores, interval_scores,
                       normal_only, report_dict, split_sequences, write_report)
from .fields import ParsedLog, Prompt, Ruleset, TableScorer, extract_rules, extract_with_scorer
from .graph import GraphSnapshot, build_snapshot, load_snapshots, save_snapshots
from .ingest import LogRecord, read_logs_with_stats, window_segment
from .model import ModelParams, load_model, save_model
from .templates import TemplateMiner, save_templates
from .train import EpochLog, TrainConfig, train

logger = logging.getLogger(__name__)

STAGES = ["parse", "extract", "build-graphs", "split", "train", "eval"]


class StageError(RuntimeError):
    """A pipeline stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------- jsonl helpers

def write_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_parsed(path) -> list[ParsedLog]:
    return [ParsedLog.from_dict(d) for d in read_jsonl(path)]


def write_parsed(parsed: list[ParsedLog], path) -> None:
    write_jsonl((p.to_dict() for p in parsed), path)


# ---------------------------------------------------------------- stages

def parse_records(records: list[LogRecord], depth=4, similarity=0.5, max_children=100):
    """Mine templates over all records; each record gets the template its
    cluster has once the whole file is parsed."""
    miner = TemplateMiner(depth, similarity, max_children)
    clusters = [miner.add(r.raw_text) for r in records]
    parsed = []
    for rec, cl in zip(records, clusters):
        parsed.append(ParsedLog(rec, cl.id, " ".join(cl.tokens), []))
    return miner.templates(), parsed


def extract_fields(parsed: list[ParsedLog], backend="rules", ruleset: Ruleset | None = None,
                   scorer=None, prompt: str = "P1", max_span: int = 5) -> list[ParsedLog]:
    out = []
    for p in parsed:
        if backend == "rules":
            mentions = extract_rules(p.record.raw_text, ruleset)
        else:
            mentions = extract_with_scorer(p.record.raw_text, scorer, Prompt(prompt), max_span)
        out.append(ParsedLog(p.record, p.template_id, p.template, mentions))
    return out


def load_scorer(path) -> TableScorer:
    """Prompt score table: JSON ``{"scores": {prompt: score}, "default": x}``
    or a flat ``{prompt: score}`` mapping."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if "scores" in d:
        return TableScorer(d["scores"], float(d.get("default", -1e9)))
    return TableScorer(d)


def build_graphs(parsed: list[ParsedLog], embedder: Embedder, window_ms: int) -> list[GraphSnapshot]:
    by_record = {id(p.record): p for p in parsed}
    records = sorted((p.record for p in parsed), key=lambda r: r.timestamp)
    snaps = []
    for win in window_segment(records, window_ms):
        logs = [by_record[id(r)] for r in win.records]
        snaps.append(build_snapshot(logs, embedder, win.window_index, win.start_ms))
    return snaps


def split_indices(snapshots: list[GraphSnapshot]) -> dict[str, list[int]]:
    tr, va, te = split_sequences([s.t for s in snapshots])
    return {"train": tr, "val": va, "test": te}


def select(snapshots: list[GraphSnapshot], ts) -> list[GraphSnapshot]:
    wanted = set(ts)
    return [s for s in snapshots if s.t in wanted]


def train_model(snapshots, split: dict, cfg: TrainConfig, model_config, log_path=None):
    """Train on the normal windows of the train part, reporting validation
    edge metrics every epoch; the log file is rewritten from scratch."""
    train_snaps = normal_only(select(snapshots, split["train"]))
    val_snaps = select(snapshots, split["val"])
    fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None

    def on_epoch(log: EpochLog):
        if fh is not None:
            fh.write(log.to_json() + "\n")
            fh.flush()

    try:
        return train(train_snaps, cfg, model_config, val_snapshots=val_snaps, on_epoch=on_epoch)
    finally:
        if fh is not None:
            fh.close()


def edge_report(params: ModelParams, val_snaps, test_snaps, prior: float = 0.05) -> dict:
    """Edge metrics on ``test_snaps`` at the threshold picked on ``val_snaps``."""
    val = edge_scores(params, val_snaps)
    if not val:
        raise ValueError("validation windows hold no edges; cannot choose a threshold")
    thr = choose_threshold([e.score for e in val], [e.label for e in val], prior)
    test = edge_scores(params, test_snaps)
    if not test:
        raise ValueError("no edges to evaluate")
    m = compute_metrics([e.score for e in test], [e.label for e in test], thr)
    return report_dict("edge", m, {"n_windows": len(test_snaps)})


def interval_report(params: ModelParams, test_snaps) -> dict:
    """Window metrics with the hypersphere radius as threshold; empty
    windows are left out of the metrics."""
    scored = interval_scores(params, test_snaps)
    kept = [s for s in scored if s.distance2 is not None]
    if not kept:
        raise ValueError("no nonempty windows to evaluate")
    m = compute_metrics([s.distance2 for s in kept], [s.label for s in kept], params.radius2)
    return report_dict("interval", m, {"n_windows": len(test_snaps),
                                       "n_skipped": len(scored) - len(kept)})


def write_reports(reports: dict[str, dict], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for protocol, rep in reports.items():
        write_report(rep, out / f"{protocol}.json", out / f"{protocol}.txt")


# ---------------------------------------------------------------- caching

def file_digest(path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    if p.is_dir():
        for f in sorted(x for x in p.rglob("*") if x.is_file()):
            h.update(str(f.relative_to(p)).encode())
            h.update(f.read_bytes())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


class Runner:
    """Runs the stages of one config, skipping those whose stamp matches."""

    def __init__(self, cfg: PipelineConfig, force: bool = False):
        self.cfg = cfg
        self.force = force
        self.work = cfg.base_dir / cfg.paths.work_dir
        self.stamp_dir = self.work / ".stamps"
        self.ran: list[str] = []
        self.skipped: list[str] = []
        self.stamps: dict[str, str] = {}

    def _stamp(self, stage: str, key: dict) -> str:
        # upstream stamps chain the keys, so a change invalidates everything after it
        key = dict(key, upstream=[self.stamps[s] for s in STAGES[:STAGES.index(stage)]
                                  if s in self.stamps])
        return _digest(key)

    def _fresh(self, stage: str, stamp: str, outputs) -> bool:
        if self.force:
            return False
        f = self.stamp_dir / f"{stage}.stamp"
        return (f.is_file() and f.read_text(encoding="utf-8").strip() == stamp
                and all(Path(o).exists() for o in outputs))

    def _run(self, stage: str, key: dict, outputs, fn) -> None:
        stamp = self._stamp(stage, key)
        self.stamps[stage] = stamp
        if self._fresh(stage, stamp, outputs):
            logger.info("%s: up to date", stage)
            self.skipped.append(stage)
            return
        logger.info("%s: running", stage)
        f = self.stamp_dir / f"{stage}.stamp"
        if f.exists():
            f.unlink()
        try:
            fn()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        self.stamp_dir.mkdir(parents=True, exist_ok=True)
        f.write_text(stamp + "\n", encoding="utf-8")
        self.ran.append(stage)

    def run(self) -> dict[str, dict]:
        cfg = self.cfg
        self.work.mkdir(parents=True, exist_ok=True)
        P = cfg.path
        parsed_path, fields_path, graphs_dir = P("parsed"), P("fields"), P("graphs")
        split_path = self.work / "split.json"
        model_path, log_path, reports_dir = P("model"), P("train_log"), P("reports")

        def do_parse():
            records, _ = read_logs_with_stats(P("input"), cfg.ingest)
            if not records:
                raise ValueError(f"no usable records in {P('input')}")
            templates, parsed = parse_records(records, cfg.parse.depth, cfg.parse.similarity,
                                              cfg.parse.max_children)
            save_templates(templates, P("templates"))
            write_parsed(parsed, parsed_path)

        self._run("parse", {"input": file_digest(P("input")), "ingest": asdict(cfg.ingest),
                            "parse": asdict(cfg.parse)},
                  [P("templates"), parsed_path], do_parse)

        def do_extract():
            ruleset = Ruleset.load(P("ruleset")) if P("ruleset") else None
            scorer = load_scorer(P("scores")) if cfg.extract.backend == "scorer" else None
            out = extract_fields(read_parsed(parsed_path), cfg.extract.backend, ruleset, scorer,
                                 cfg.extract.prompt, cfg.extract.max_span)
            write_parsed(out, fields_path)

        self._run("extract", {"extract": asdict(cfg.extract),
                              "ruleset": file_digest(P("ruleset")) if P("ruleset") else None,
                              "scores": file_digest(P("scores")) if P("scores") else None},
                  [fields_path], do_extract)

        def do_build():
            emb = (Embedder.from_file(P("embeddings"), cfg.embed.dim) if P("embeddings")
                   else Embedder(cfg.embed.dim))
            if graphs_dir.exists():
                shutil.rmtree(graphs_dir)
            save_snapshots(build_graphs(read_parsed(fields_path), emb, cfg.window_ms), graphs_dir)

        self._run("build-graphs", {"window_ms": cfg.window_ms, "embed": asdict(cfg.embed),
                                   "embeddings": file_digest(P("embeddings")) if P("embeddings") else None},
                  [graphs_dir / "index.json"], do_build)

        state = {}

        def snapshots():
            if "snaps" not in state:
                state["snaps"] = load_snapshots(graphs_dir)
            return state["snaps"]

        def do_split():
            split_path.write_text(json.dumps(split_indices(snapshots()), sort_keys=True) + "\n",
                                  encoding="utf-8")

        self._run("split", {}, [split_path], do_split)

        def do_train():
            split = json.loads(split_path.read_text(encoding="utf-8"))
            params, _ = train_model(snapshots(), split, cfg.train, cfg.model_config(), log_path)
            save_model(params, model_path)

        self._run("train", {"train": cfg.train.to_dict(), "model": asdict(cfg.model_config())},
                  [model_path, log_path], do_train)

        def do_eval():
            split = json.loads(split_path.read_text(encoding="utf-8"))
            params = load_model(model_path)
            val, test = select(snapshots(), split["val"]), select(snapshots(), split["test"])
            reports = {}
            if "edge" in cfg.eval.protocols:
                reports["edge"] = edge_report(params, val, test, cfg.eval.prior)
            if "interval" in cfg.eval.protocols:
                reports["interval"] = interval_report(params, test)
            if reports_dir.exists():
                shutil.rmtree(reports_dir)
            write_reports(reports, reports_dir)

        self._run("eval", {"eval": asdict(cfg.eval)},
                  [reports_dir / f"{p}.json" for p in cfg.eval.protocols], do_eval)

        return {p: json.loads((reports_dir / f"{p}.json").read_text(encoding="utf-8"))
                for p in cfg.eval.protocols}


def run_pipeline(cfg: PipelineConfig, force: bool = False) -> dict[str, dict]:
    """Validate ``cfg`` then run every stage; returns the reports by protocol."""
    cfg.validate()
    return Runner(cfg, force).run()
