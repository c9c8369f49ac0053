"""``glad`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 bad input data,
4 numeric failure during training or scoring.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .config import ConfigError, PipelineConfig, default_config, dumps_config, load_config, tomllib
from .embed import Embedder
from .evaluate import SplitError, edge_scores, interval_scores
from .fields import (Prompt, Ruleset, RulesetError, ScorerError, generate_training_pairs,
                     write_prompt_pairs)
from .graph import load_snapshots, save_snapshots
from .ingest import IngestConfig, IngestError, read_logs_with_stats
from .model import ModelConfig, load_model, save_model
from .synth import SynthConfig, write_synthetic
from .templates import save_templates
from .train import TrainConfig, TrainingDiverged

logger = logging.getLogger("glad")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, pl.StageError):
        return exit_code(exc.cause)
    if isinstance(exc, (ConfigError, UsageError)):
        return EXIT_USAGE
    if isinstance(exc, (TrainingDiverged, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_DATA


# ---------------------------------------------------------------- helpers

def _ingest_config(args) -> IngestConfig:
    cfg = IngestConfig(format=args.format, strict=args.strict)
    if args.pattern:
        cfg.pattern = args.pattern
    if args.ts_format:
        cfg.ts_format = args.ts_format
    return cfg


def _train_config(path, seed=None) -> tuple[TrainConfig, ModelConfig]:
    """Read a train config: either a full pipeline config or a flat table
    whose keys mirror TrainConfig (an optional ``[model]`` table is allowed)."""
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if "train" in data and isinstance(data["train"], dict):
        if seed is not None:
            data["train"]["seed"] = seed
        cfg = PipelineConfig.from_dict(data, Path(path).parent)
        cfg.validate(check_paths=False)
        return cfg.train, cfg.model_config()
    model = data.pop("model", {})
    if seed is not None:
        data["seed"] = seed
    try:
        tc = TrainConfig.from_dict(data)
        tc.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = {"window_ms": 60_000, "train": tc.to_dict(), "model": model}
    if "d_in" in model:
        base["embed"] = {"dim": model["d_in"]}
    pc = PipelineConfig.from_dict(base)
    return tc, pc.model_config()


def _load_split(graphs_dir, snaps, which: str):
    if which == "all":
        return snaps
    split = pl.split_indices(snaps)
    return pl.select(snaps, split[which])


# ---------------------------------------------------------------- commands

def cmd_parse(args) -> int:
    records, rejected = read_logs_with_stats(args.input, _ingest_config(args))
    if not records:
        raise IngestError(f"no usable records in {args.input}")
    templates, parsed = pl.parse_records(records, args.depth, args.similarity, args.max_children)
    save_templates(templates, args.templates_out)
    pl.write_parsed(parsed, args.parsed_out)
    print(f"{len(records)} records ({rejected} rejected), {len(templates)} templates")
    return 0


def cmd_extract(args) -> int:
    ruleset = Ruleset.load(args.ruleset) if args.ruleset else None
    scorer = None
    if args.backend == "scorer":
        if not args.scores:
            raise UsageError("--backend scorer needs --scores")
        scorer = pl.load_scorer(args.scores)
    out = pl.extract_fields(pl.read_parsed(args.parsed), args.backend, ruleset, scorer,
                            args.prompt)
    pl.write_parsed(out, args.out)
    print(f"{len(out)} records, {sum(len(p.mentions) for p in out)} field mentions")
    return 0


def cmd_gen_prompts(args) -> int:
    pairs = []
    for n, p in enumerate(pl.read_parsed(args.fields)):
        pairs += generate_training_pairs(p.record.raw_text, p.mentions, args.ratio,
                                         args.seed + n, Prompt(args.prompt))
    write_prompt_pairs(pairs, args.out)
    print(f"{len(pairs)} prompt pairs")
    return 0


def cmd_build_graphs(args) -> int:
    emb = Embedder.from_file(args.embeddings, args.dim) if args.embeddings else Embedder(args.dim)
    snaps = pl.build_graphs(pl.read_parsed(args.parsed), emb, args.window_ms)
    save_snapshots(snaps, args.out)
    print(f"{len(snaps)} snapshots, {sum(s.is_empty for s in snaps)} empty")
    return 0


def cmd_train(args) -> int:
    tc, mc = _train_config(args.config, args.seed)
    snaps = load_snapshots(args.graphs)
    if args.all:
        split = {"train": [s.t for s in snaps], "val": []}
    else:
        split = pl.split_indices(snaps)
    if mc.d_in != snaps[0].X.shape[1]:
        raise ConfigError(f"model d_in {mc.d_in} does not match graph attributes {snaps[0].X.shape[1]}")
    log = args.log or str(Path(args.out).with_name("train_log.jsonl"))
    params, logs = pl.train_model(snaps, split, tc, mc, log)
    save_model(params, args.out)
    print(f"trained {len(logs)} epochs, final loss {logs[-1].total:.6g}, R^2 {params.radius2:.6g}")
    return 0


def cmd_score(args) -> int:
    params = load_model(args.model)
    snaps = _load_split(args.graphs, load_snapshots(args.graphs), args.split)
    if args.protocol == "edge":
        rows = [vars(e) for e in edge_scores(params, snaps)]
    else:
        rows = [vars(s) for s in interval_scores(params, snaps)]
    if args.out:
        pl.write_jsonl(rows, args.out)
    else:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    params = load_model(args.model)
    snaps = load_snapshots(args.graphs)
    split = pl.split_indices(snaps)
    test = pl.select(snaps, split[args.split])
    protocols = ["edge", "interval"] if args.protocol == "both" else [args.protocol]
    reports = {}
    for p in protocols:
        if p == "edge":
            reports[p] = pl.edge_report(params, pl.select(snaps, split["val"]), test, args.prior)
        else:
            reports[p] = pl.interval_report(params, test)
    if args.out_dir:
        pl.write_reports(reports, args.out_dir)
    for rep in reports.values():
        print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(windows=args.windows, rate=args.rate, seed=args.seed,
                      interval_ms=args.interval_ms)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n = write_synthetic(cfg, args.out)
    print(f"wrote {n} records to {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    runner = pl.Runner(cfg, force=args.force)
    cfg.validate()
    reports = runner.run()
    for stage in pl.STAGES:
        state = "ran" if stage in runner.ran else "cached"
        print(f"{stage:<13} {state}")
    for p, rep in reports.items():
        print(f"{p}: f1 {rep['f1']:.4f} auc {rep['auc']} aupr {rep['aupr']}")
    return 0


def cmd_config_validate(args) -> int:
    cfg = load_config(args.config)
    cfg.validate(check_paths=not args.no_paths)
    print(f"{args.config}: ok")
    return 0


def cmd_config_init(args) -> int:
    cfg = default_config(args.seed, args.input)
    text = dumps_config(cfg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glad", description="Log relation-anomaly detection.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("parse", help="read logs and mine event templates")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "text"], default="jsonl")
    p.add_argument("--pattern", help="text mode regex with named groups ts and msg")
    p.add_argument("--ts-format", help="epoch_ms, epoch_s or a strptime format")
    p.add_argument("--strict", action="store_true", help="abort on the first unparsable line")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--similarity", type=float, default=0.5)
    p.add_argument("--max-children", type=int, default=100)
    p.add_argument("--templates-out", default="templates.json")
    p.add_argument("--parsed-out", default="parsed.jsonl")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("extract", help="extract typed fields from parsed records")
    p.add_argument("--parsed", default="parsed.jsonl")
    p.add_argument("--backend", choices=["rules", "scorer"], default="rules")
    p.add_argument("--ruleset", help="JSON ruleset; default is the built-in one")
    p.add_argument("--scores", help="prompt score table for the scorer backend")
    p.add_argument("--prompt", choices=["P1", "P2"], default="P1")
    p.add_argument("--out", default="fields.jsonl")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gen-prompts", help="export prompt pairs for an external scorer")
    p.add_argument("--fields", default="fields.jsonl")
    p.add_argument("--ratio", type=int, default=3, help="negatives per positive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompt", choices=["P1", "P2"], default="P1")
    p.add_argument("--out", default="prompts.jsonl")
    p.set_defaults(func=cmd_gen_prompts)

    p = sub.add_parser("build-graphs", help="build one graph per time window")
    p.add_argument("--parsed", default="fields.jsonl", help="records with field mentions")
    p.add_argument("--out", default="graphs")
    p.add_argument("--window-ms", type=int, default=60_000)
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--embeddings", help="optional JSONL of precomputed text vectors")
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", help="train a model on the normal training windows")
    p.add_argument("--graphs", default="graphs")
    p.add_argument("--config", required=True, help="TOML with train keys (seed is required)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", default="model.bin")
    p.add_argument("--log", help="per-epoch log (default: train_log.jsonl next to --out)")
    p.add_argument("--all", action="store_true", help="train on every window, no split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write raw edge or interval scores")
    p.add_argument("--model", required=True)
    p.add_argument("--graphs", default="graphs")
    p.add_argument("--protocol", choices=["edge", "interval"], default="edge")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--out", help="JSONL output (default stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="metrics on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--graphs", default="graphs")
    p.add_argument("--protocol", choices=["edge", "interval", "both"], default="both")
    p.add_argument("--split", choices=["val", "test"], default="test")
    p.add_argument("--prior", type=float, default=0.05,
                   help="anomaly prior for the edge threshold when validation has no positives")
    p.add_argument("--out-dir", help="write <protocol>.json and .txt reports here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a labelled synthetic log corpus")
    p.add_argument("--windows", type=int, default=200)
    p.add_argument("--rate", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--interval-ms", type=int, default=60_000)
    p.add_argument("--out", default="synth.jsonl")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run every stage from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("config", help="check or create a config file")
    csub = p.add_subparsers(dest="config_command", metavar="ACTION")
    csub.required = True
    c = csub.add_parser("validate", help="check a config file")
    c.add_argument("config")
    c.add_argument("--no-paths", action="store_true", help="skip the input path checks")
    c.set_defaults(func=cmd_config_validate)
    c = csub.add_parser("init", help="print a config with every default filled in")
    c.add_argument("--seed", type=int, default=7)
    c.add_argument("--input", default="")
    c.add_argument("--out")
    c.set_defaults(func=cmd_config_init)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"glad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"glad: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except pl.StageError as exc:
        print(f"glad: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (IngestError, RulesetError, ScorerError, SplitError,
            OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"glad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
