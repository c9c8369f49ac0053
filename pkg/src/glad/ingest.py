"""Reading raw log files and cutting them into fixed-interval windows."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_MS = 60_000


class IngestError(Exception):
    """Unreadable input or, in strict mode, an unparsable line."""


class Label(str, Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    UNLABELED = "unlabeled"


_LABEL_ALIASES = {
    "normal": Label.NORMAL,
    "anomaly": Label.ANOMALOUS,
    "anomalous": Label.ANOMALOUS,
    "unlabeled": Label.UNLABELED,
    "": Label.UNLABELED,
}


@dataclass(frozen=True)
class LogRecord:
    raw_text: str
    timestamp: int
    source_id: str = ""
    label: Label = Label.UNLABELED

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if not self.raw_text.strip():
            raise ValueError("raw_text is empty")

    @property
    def is_anomalous(self) -> bool:
        return self.label is Label.ANOMALOUS


@dataclass
class LogWindow:
    window_index: int
    start_ms: int
    end_ms: int
    records: list[LogRecord] = field(default_factory=list)


@dataclass
class IngestConfig:
    """How to read one input file.

    ``format`` is ``"jsonl"`` or ``"text"``. In text mode ``pattern`` must be a
    regex with named groups ``ts`` and ``msg`` (and optionally ``label`` and
    ``src``); ``ts_format`` is a ``strptime`` format, or one of
    ``"epoch_ms"`` / ``"epoch_s"``.
    """

    format: str = "jsonl"
    ts_field: str = "ts"
    msg_field: str = "msg"
    label_field: str = "label"
    src_field: str = "src"
    pattern: str = r"^(?P<ts>\S+)\s+(?P<msg>.*)$"
    ts_format: str = "epoch_ms"
    normal_labels: tuple[str, ...] = ("normal", "-")
    strict: bool = False


def parse_timestamp(value, ts_format: str = "epoch_ms") -> int:
    """Convert an integer-ms or RFC-3339 value to epoch milliseconds."""
    if isinstance(value, bool):
        raise ValueError(f"not a timestamp: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"not a timestamp: {value!r}")
        return int(value)
    if not isinstance(value, str):
        raise ValueError(f"not a timestamp: {value!r}")
    text = value.strip()
    if ts_format == "epoch_ms" and re.fullmatch(r"\d+", text):
        return int(text)
    if ts_format == "epoch_s" and re.fullmatch(r"\d+(\.\d+)?", text):
        return int(round(float(text) * 1000))
    if ts_format not in ("epoch_ms", "epoch_s"):
        dt = datetime.strptime(text, ts_format)
    else:
        # 3.10's fromisoformat does not take a trailing Z
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def _jsonl_record(line: str, cfg: IngestConfig) -> LogRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    ts = parse_timestamp(obj[cfg.ts_field])
    raw_label = str(obj.get(cfg.label_field, "") or "").strip().lower()
    if raw_label not in _LABEL_ALIASES:
        raise ValueError(f"unknown label {raw_label!r}")
    return LogRecord(str(obj[cfg.msg_field]), ts, str(obj.get(cfg.src_field, "")),
                     _LABEL_ALIASES[raw_label])


def _text_record(line: str, cfg: IngestConfig, regex: re.Pattern) -> LogRecord:
    m = regex.match(line)
    if m is None:
        raise ValueError("line does not match the timestamp pattern")
    groups = m.groupdict()
    ts = parse_timestamp(groups["ts"], cfg.ts_format)
    label = Label.UNLABELED
    if groups.get("label") is not None:
        label = Label.NORMAL if groups["label"] in cfg.normal_labels else Label.ANOMALOUS
    return LogRecord(groups["msg"], ts, groups.get("src") or "", label)


def read_logs_with_stats(path, cfg: IngestConfig | None = None) -> tuple[list[LogRecord], int]:
    """Like :func:`read_logs` but also returns the number of rejected lines."""
    cfg = cfg or IngestConfig()
    if cfg.format not in ("jsonl", "text"):
        raise IngestError(f"unknown format {cfg.format!r}")
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    regex = re.compile(cfg.pattern) if cfg.format == "text" else None
    records, rejected = [], 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            if regex is None:
                rec = _jsonl_record(line, cfg)
            else:
                rec = _text_record(line, cfg, regex)
        except (ValueError, KeyError, TypeError) as exc:
            if cfg.strict:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            rejected += 1
            continue
        records.append(rec)
    if rejected:
        logger.warning("%s: rejected %d unparsable line(s)", path, rejected)
    # sorted() is stable, so ties keep file order
    return sorted(records, key=lambda r: r.timestamp), rejected


def read_logs(path, cfg: IngestConfig | None = None) -> list[LogRecord]:
    """Read a JSONL or plain-text log file into records sorted by timestamp."""
    return read_logs_with_stats(path, cfg)[0]


def window_segment(records: list[LogRecord], interval_ms: int = DEFAULT_WINDOW_MS) -> list[LogWindow]:
    """Tumbling half-open windows anchored at the first record's timestamp.

    Empty windows between occupied ones are kept so that window indices map
    directly to wall-clock offsets.
    """
    if interval_ms <= 0:
        raise ValueError("interval_ms must be positive")
    if not records:
        return []
    t0 = records[0].timestamp
    count = (records[-1].timestamp - t0) // interval_ms + 1
    windows = [LogWindow(k, t0 + k * interval_ms, t0 + (k + 1) * interval_ms)
               for k in range(count)]
    for rec in records:
        k = (rec.timestamp - t0) // interval_ms
        if k < 0:
            raise ValueError("records are not sorted by timestamp")
        windows[k].records.append(rec)
    return windows


def label_window(window: LogWindow) -> Label:
    """A window is anomalous iff it holds at least one anomalous record."""
    if any(r.is_anomalous for r in window.records):
        return Label.ANOMALOUS
    return Label.NORMAL
