"""Typed field mentions in log messages.

Two extraction backends share one output type: a regex ruleset, and a
prompt-scoring procedure that ranks every candidate span against one
positive prompt per field type plus a negative prompt, using any callable
that returns a log-probability for a prompt string.
"""

from __future__ import annotations

import functools
import json
import math
import random
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .ingest import Label, LogRecord

MAX_SPAN = 5


class FieldType(str, Enum):
    IP = "ip"
    EMAIL = "email"
    PID = "pid"
    UID = "uid"
    USER_NAME = "user_name"
    TIMESTAMP = "timestamp"
    SERVICE = "service"
    SERVER = "server"
    FILE_PATH = "file_path"
    URL = "url"
    PORT = "port"
    SESSION = "session"
    DURATION = "duration"
    DOMAIN = "domain"
    VERSION = "version"


FIELD_TYPES = list(FieldType)
_TYPE_ORDER = {ft: i for i, ft in enumerate(FIELD_TYPES)}


class Prompt(str, Enum):
    P1 = "P1"
    P2 = "P2"


class RulesetError(ValueError):
    pass


class ScorerError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldMention:
    start: int
    end: int  # exclusive
    text: str
    field_type: FieldType
    score: float = math.inf
    from_rule: bool = True

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def overlaps(self, other: "FieldMention") -> bool:
        return self.start < other.end and other.start < self.end

    def to_dict(self) -> dict:
        return {"span": [self.start, self.end], "text": self.text,
                "type": self.field_type.value,
                "score": None if math.isinf(self.score) else self.score,
                "rule": self.from_rule}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldMention":
        score = math.inf if d.get("score") is None else float(d["score"])
        return cls(d["span"][0], d["span"][1], d["text"], FieldType(d["type"]),
                   score, bool(d.get("rule", True)))


@dataclass(frozen=True)
class PromptPair:
    message: str
    prompt: str
    polarity: str  # "positive" | "negative"
    span: tuple[int, int]
    field_type: FieldType | None = None

    def __post_init__(self):
        if (self.polarity == "positive") != (self.field_type is not None):
            raise ValueError("positive pairs need a field type, negative pairs must not have one")

    def to_dict(self) -> dict:
        return {"message": self.message, "prompt": self.prompt, "polarity": self.polarity}


@dataclass
class ParsedLog:
    """A record bound to its event template and its field mentions."""

    record: LogRecord
    template_id: str
    template: str
    mentions: list[FieldMention]

    def to_dict(self) -> dict:
        r = self.record
        return {"ts": r.timestamp, "msg": r.raw_text, "src": r.source_id,
                "label": r.label.value, "template_id": self.template_id,
                "template": self.template,
                "mentions": [m.to_dict() for m in self.mentions]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParsedLog":
        rec = LogRecord(d["msg"], int(d["ts"]), d.get("src", ""), Label(d.get("label", "unlabeled")))
        return cls(rec, d["template_id"], d["template"],
                   [FieldMention.from_dict(m) for m in d.get("mentions", [])])


_TOKEN_RX = re.compile(r"[^\s=,;\[\]()\"']+")


def tokenize(message: str) -> list[str]:
    """Whitespace split that also drops ``= , ; [ ] ( ) " '`` separators."""
    return _TOKEN_RX.findall(message)


def enumerate_spans(tokens, max_n: int = MAX_SPAN) -> list[tuple[int, int]]:
    """All contiguous spans of length 1..max_n, shortest first, then left to right."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    n = len(tokens)
    return [(i, i + k) for k in range(1, max_n + 1) for i in range(n - k + 1)]


def _article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def build_prompt(text: str, field_type: FieldType | None = None,
                 template: Prompt | str = Prompt.P1, positive: bool = True) -> str:
    template = Prompt(template)
    if positive:
        if field_type is None:
            raise ValueError("a positive prompt needs a field type")
        name = FieldType(field_type).value
        if template is Prompt.P1:
            return f"{text} is {_article(name)} {name} entity"
        return f"{name} = {text}"
    if template is Prompt.P1:
        return f"{text} is not a named entity"
    return f"{text} = none"


def _resolve(cands: list[FieldMention], key) -> list[FieldMention]:
    chosen: list[FieldMention] = []
    for c in sorted(cands, key=key):
        if not any(c.overlaps(o) for o in chosen):
            chosen.append(c)
    return sorted(chosen, key=lambda m: m.start)


# ---------------------------------------------------------------- rules

_B = r"(?<![^ ])"  # token start
_E = r"(?![^ ])"  # token end

DEFAULT_RULES: dict[str, list[str]] = {
    "ip": [_B + r"(?:\d{1,3}\.){3}\d{1,3}" + _E],
    "email": [_B + r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+" + _E],
    "pid": [r"\bpid (?P<v>\d+)" + _E],
    "uid": [r"\buid (?P<v>\d+)" + _E],
    "user_name": [r"\b(?:user|username) (?P<v>[A-Za-z_][\w.-]*)" + _E,
                  r"\bfor (?P<v>[a-z_][\w.-]*) (?:to|from)\b"],
    "timestamp": [_B + r"\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?)?" + _E,
                  _B + r"\d{2}:\d{2}:\d{2}(?:\.\d+)?" + _E],
    "service": [r"\b(?:service|svc|daemon) (?P<v>[A-Za-z][\w.-]*)" + _E],
    "server": [r"\b(?:server|host|node|worker) (?P<v>[A-Za-z][\w.-]*)" + _E],
    "file_path": [_B + r"~?(?:/[\w.@+-]+)+/?" + _E],
    "url": [_B + r"[a-zA-Z][\w+.-]*://\S+" + _E],
    "port": [r"\bport (?P<v>\d{1,5})" + _E],
    "session": [r"\bsession (?:id )?(?P<v>[\w-]+)" + _E],
    "duration": [_B + r"\d+(?:\.\d+)?(?:ms|us|s|sec|secs|seconds|min|mins)" + _E],
    "domain": [_B + r"(?:[a-z0-9-]+\.)+(?:com|org|net|io|edu|gov|local|internal|lan)" + _E],
    "version": [_B + r"v?\d+\.\d+\.\d+(?:[-+.][\w.]+)?" + _E,
                r"\bversion (?P<v>v?\d+(?:\.\d+)+)" + _E],
}


class Ruleset:
    """Compiled mapping from field type to regex list.

    A pattern's named group ``v`` (when present) is the field value, otherwise
    the whole match. Matches run over the space-joined token string and are
    kept only when they cover whole tokens.
    """

    def __init__(self, rules: dict[str, list[str]]):
        self.patterns: list[tuple[FieldType, re.Pattern]] = []
        for name, pats in rules.items():
            try:
                ft = FieldType(name)
            except ValueError as exc:
                raise RulesetError(f"unknown field type {name!r}") from exc
            for p in pats:
                try:
                    self.patterns.append((ft, re.compile(p)))
                except re.error as exc:
                    raise RulesetError(f"bad pattern for {name}: {p!r}: {exc}") from exc

    @classmethod
    @functools.lru_cache(maxsize=1)
    def default(cls) -> "Ruleset":
        return cls(DEFAULT_RULES)

    @classmethod
    def load(cls, path) -> "Ruleset":
        try:
            rules = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RulesetError(f"cannot load ruleset {path}: {exc}") from exc
        if not isinstance(rules, dict):
            raise RulesetError("ruleset must map field types to pattern lists")
        return cls(rules)


def extract_rules(message: str, ruleset: Ruleset | None = None) -> list[FieldMention]:
    """Rule-based mentions; overlaps go to the longest, then leftmost, then
    earliest-declared field type."""
    ruleset = ruleset or Ruleset.default()
    tokens = tokenize(message)
    joined = " ".join(tokens)
    starts, ends = {}, {}
    pos = 0
    for i, tok in enumerate(tokens):
        starts[pos] = i
        ends[pos + len(tok)] = i + 1
        pos += len(tok) + 1
    cands = []
    for ft, rx in ruleset.patterns:
        for m in rx.finditer(joined):
            g = "v" if "v" in rx.groupindex and m.group("v") is not None else 0
            a, b = m.span(g)
            if a not in starts or b not in ends:
                continue
            i, j = starts[a], ends[b]
            if 1 <= j - i <= MAX_SPAN:
                cands.append(FieldMention(i, j, " ".join(tokens[i:j]), ft))
    return _resolve(cands, key=lambda c: (-(c.end - c.start), c.start, _TYPE_ORDER[c.field_type]))


# ---------------------------------------------------------------- scorer

Scorer = Callable[[str], float]


def extract_with_scorer(message: str, scorer: Scorer, template: Prompt | str = Prompt.P1,
                        max_n: int = MAX_SPAN) -> list[FieldMention]:
    """Assign each candidate span the label whose prompt scores highest.

    Scores are summed token log-probabilities as returned by ``scorer``; no
    length normalisation is applied. The negative prompt is tried first, so a
    tie with a field type leaves the span unlabelled. Overlapping winners are
    resolved by higher score, then longer span, then leftmost.
    """
    tokens = tokenize(message)
    cands = []
    for i, j in enumerate_spans(tokens, max_n):
        text = " ".join(tokens[i:j])
        try:
            best_score = scorer(build_prompt(text, None, template, positive=False))
            best_type = None
            for ft in FIELD_TYPES:
                s = scorer(build_prompt(text, ft, template, positive=True))
                if s > best_score:
                    best_score, best_type = s, ft
        except Exception as exc:
            raise ScorerError(f"scorer failed on span {i}:{j} ({text!r}) of {message!r}") from exc
        if best_type is not None:
            cands.append(FieldMention(i, j, text, best_type, float(best_score), from_rule=False))
    return _resolve(cands, key=lambda c: (-c.score, -(c.end - c.start), c.start))


class TableScorer:
    """Scorer backed by a ``{prompt: score}`` table with a default for misses.

    Handy for tests and for replaying scores computed offline.
    """

    def __init__(self, table: dict[str, float], default: float = -1e9):
        self.table = dict(table)
        self.default = default

    def __call__(self, prompt: str) -> float:
        return self.table.get(prompt, self.default)


# ---------------------------------------------------------------- training pairs

def generate_training_pairs(message: str, gold: Iterable[FieldMention], ratio: int = 3,
                            seed: int = 0, template: Prompt | str = Prompt.P1,
                            max_n: int = MAX_SPAN) -> list[PromptPair]:
    """One positive pair per gold mention plus ``ratio`` times as many negative
    pairs drawn without replacement from non-gold spans (fewer when the
    message runs out of spans)."""
    tokens = tokenize(message)
    gold = list(gold)
    pairs = [PromptPair(message, build_prompt(g.text, g.field_type, template, True),
                        "positive", g.span, g.field_type) for g in gold]
    if not gold:
        return pairs
    gold_spans = {g.span for g in gold}
    pool = [s for s in enumerate_spans(tokens, max_n) if s not in gold_spans]
    k = min(ratio * len(gold), len(pool))
    for i, j in random.Random(seed).sample(pool, k):
        text = " ".join(tokens[i:j])
        pairs.append(PromptPair(message, build_prompt(text, None, template, False),
                                "negative", (i, j)))
    return pairs


def write_prompt_pairs(pairs: Iterable[PromptPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_dict()) + "\n")
