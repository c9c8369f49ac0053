import random

import numpy as np
import pytest

from glad.embed import Embedder
from glad.fields import FieldMention, FieldType, ParsedLog
from glad.graph import build_snapshot
from glad.ingest import Label, LogRecord

FAILED_LOGIN_LINES = [
    "FAILED LOGIN for della to imap://localhost/",
    "FAILED LOGIN for bob to imap://remote/",
]


def template_corpus(seed: int = 3) -> list[str]:
    """20 lines from 4 known templates, 5 lines each, shuffled."""
    rng = random.Random(seed)
    names = ["alice", "bob", "carol", "dave", "erin", "frank"]
    lines = list(FAILED_LOGIN_LINES)
    for _ in range(3):
        lines.append(f"FAILED LOGIN for {rng.choice(names)} to imap://h{rng.randint(1, 9)}.lan/")
    for _ in range(5):
        lines.append(f"session opened for user {rng.choice(names)} by uid {rng.randint(100, 999)}")
    for _ in range(5):
        ip = ".".join(str(rng.randint(1, 254)) for _ in range(4))
        lines.append(f"connection from {ip} port {rng.randint(1024, 65535)} closed")
    for _ in range(5):
        lines.append(f"disk quota exceeded on volume {rng.choice(['alpha', 'beta', 'gamma'])}"
                     f" usage {rng.randint(90, 99)} percent")
    rng.shuffle(lines)
    return lines


def parsed_log(tid: str, template: str, mentions, label=Label.NORMAL, ts=0, msg="m") -> ParsedLog:
    ms = [FieldMention(k, k + 1, text, FieldType(ft)) for k, (ft, text) in enumerate(mentions)]
    return ParsedLog(LogRecord(msg, ts, "", label), tid, template, ms)


def small_window(rng: random.Random, anomalous: bool = False) -> list[ParsedLog]:
    """A few logs over 2 templates and a handful of fields."""
    logs = []
    for _ in range(rng.randint(3, 6)):
        tid = rng.choice(["aaaa0001", "bbbb0002"])
        ms = [("server", rng.choice(["w1", "w2"])), ("user_name", rng.choice(["u1", "u2"]))]
        logs.append(parsed_log(tid, f"tpl {tid}", ms))
    if anomalous:
        logs.append(parsed_log("aaaa0001", "tpl aaaa0001", [("server", "w9")], Label.ANOMALOUS))
    return logs


@pytest.fixture
def embedder():
    return Embedder(16)


@pytest.fixture
def snapshots(embedder):
    rng = random.Random(0)
    return [build_snapshot(small_window(rng, anomalous=(t == 4)), embedder, t, t * 1000)
            for t in range(6)]


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        hi = f()
        x[idx] = old - eps
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
