"""Pipeline configuration: a TOML tree with one table per stage.

Relative paths are resolved against the directory of the config file.
Every artifact path defaults to a file under ``paths.work_dir``::

    [paths]
    input = "synth.jsonl"
    work_dir = "run"
    ruleset = ""        # empty: built-in rules
    embeddings = ""     # empty: hashed attributes only

    [train]
    seed = 7            # required
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ingest import IngestConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


ARTIFACTS = {
    "templates": "templates.json",
    "parsed": "parsed.jsonl",
    "fields": "fields.jsonl",
    "graphs": "graphs",
    "model": "model.npz",
    "train_log": "train_log.jsonl",
    "reports": "reports",
}


@dataclass
class PathsConfig:
    input: str = ""
    work_dir: str = "glad-run"
    ruleset: str = ""
    embeddings: str = ""
    scores: str = ""  # prompt score table for the scorer backend
    templates: str = ""
    parsed: str = ""
    fields: str = ""
    graphs: str = ""
    model: str = ""
    train_log: str = ""
    reports: str = ""


@dataclass
class ParseConfig:
    depth: int = 4
    similarity: float = 0.5
    max_children: int = 100


@dataclass
class ExtractConfig:
    backend: str = "rules"  # rules | scorer
    prompt: str = "P1"
    max_span: int = 5


@dataclass
class EmbedConfig:
    dim: int = 768


@dataclass
class EvalConfig:
    protocols: list[str] = field(default_factory=lambda: ["edge", "interval"])
    prior: float = 0.05  # anomaly prior used when validation has no positives


@dataclass
class PipelineConfig:
    train: TrainConfig
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    window_ms: int = 60_000
    parse: ParseConfig = field(default_factory=ParseConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    # ------------------------------------------------------------ paths

    def path(self, name: str) -> Path:
        """Resolved path of an input or artifact; empty optional inputs give None."""
        raw = getattr(self.paths, name)
        if not raw:
            if name not in ARTIFACTS:
                return None
            raw = str(Path(self.paths.work_dir) / ARTIFACTS[name])
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    # ------------------------------------------------------------ (de)serialisation

    def to_dict(self) -> dict:
        ingest = asdict(self.ingest)
        ingest["normal_labels"] = list(ingest["normal_labels"])
        model = asdict(self.model)
        # k, history and mu are owned by the train table
        for key in ("k", "history", "mu"):
            model.pop(key)
        if model["attr_scale"] is None:
            model.pop("attr_scale")
        return {
            "window_ms": self.window_ms,
            "paths": asdict(self.paths),
            "ingest": ingest,
            "parse": asdict(self.parse),
            "extract": asdict(self.extract),
            "embed": asdict(self.embed),
            "model": model,
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "PipelineConfig":
        d = dict(d)
        known = {"window_ms", "paths", "ingest", "parse", "extract", "embed", "model", "train", "eval"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config tables: {sorted(unknown)}")
        if "train" not in d or "seed" not in d["train"]:
            raise ConfigError("train.seed is required")

        def build(kind, key):
            table = d.get(key, {})
            if not isinstance(table, dict):
                raise ConfigError(f"[{key}] must be a table")
            names = {f.name for f in fields(kind)}
            bad = set(table) - names
            if bad:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
            try:
                return kind(**table)
            except TypeError as exc:
                raise ConfigError(f"[{key}]: {exc}") from exc

        ingest = dict(d.get("ingest", {}))
        if "normal_labels" in ingest:
            ingest["normal_labels"] = tuple(ingest["normal_labels"])
        try:
            train = TrainConfig.from_dict(d["train"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[train]: {exc}") from exc
        cfg = cls(
            train=train,
            paths=build(PathsConfig, "paths"),
            ingest=build(IngestConfig, "ingest") if not ingest else _ingest(ingest),
            window_ms=int(d.get("window_ms", 60_000)),
            parse=build(ParseConfig, "parse"),
            extract=build(ExtractConfig, "extract"),
            embed=build(EmbedConfig, "embed"),
            model=build(ModelConfig, "model"),
            eval=build(EvalConfig, "eval"),
            base_dir=Path(base_dir),
        )
        return cfg

    def model_config(self) -> ModelConfig:
        d = asdict(self.model)
        d.update(d_in=self.embed.dim, k=self.train.k, history=self.train.history_budget,
                 mu=self.train.mu)
        return ModelConfig(**d)

    # ------------------------------------------------------------ checks

    def validate(self, check_paths: bool = True) -> None:
        if self.window_ms <= 0:
            raise ConfigError("window_ms must be positive")
        try:
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(f"[train]: {exc}") from exc
        if self.extract.backend not in ("rules", "scorer"):
            raise ConfigError(f"extract.backend must be 'rules' or 'scorer', got {self.extract.backend!r}")
        if self.extract.prompt not in ("P1", "P2"):
            raise ConfigError("extract.prompt must be 'P1' or 'P2'")
        if self.ingest.format not in ("jsonl", "text"):
            raise ConfigError(f"ingest.format must be 'jsonl' or 'text', got {self.ingest.format!r}")
        bad = set(self.eval.protocols) - {"edge", "interval"}
        if bad:
            raise ConfigError(f"unknown eval protocols {sorted(bad)}")
        if self.embed.dim != self.model.d_in:
            raise ConfigError(f"embed.dim ({self.embed.dim}) must equal model.d_in ({self.model.d_in})")
        if self.extract.backend == "scorer" and not self.paths.scores:
            raise ConfigError("the scorer backend needs paths.scores")
        if not check_paths:
            return
        if not self.paths.input:
            raise ConfigError("paths.input is required")
        for name in ("input", "ruleset", "embeddings", "scores"):
            p = self.path(name)
            if p is not None and not p.is_file():
                raise ConfigError(f"paths.{name} does not exist: {p}")


def _ingest(table: dict) -> IngestConfig:
    names = {f.name for f in fields(IngestConfig)}
    bad = set(table) - names
    if bad:
        raise ConfigError(f"unknown keys in [ingest]: {sorted(bad)}")
    return IngestConfig(**table)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return PipelineConfig.from_dict(data, base_dir=path.parent)


def dumps_config(cfg: PipelineConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def default_config(seed: int = 7, input_path: str = "") -> PipelineConfig:
    cfg = PipelineConfig(train=TrainConfig(seed=seed))
    cfg.paths.input = input_path
    return cfg
