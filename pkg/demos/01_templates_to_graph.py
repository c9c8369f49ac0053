"""
From raw log lines to one attributed graph
==========================================

A handful of messages are mined into templates, typed fields are pulled
out of each message, and one time window becomes a weighted event/field
graph. Run with ``python3 demos/01_templates_to_graph.py``.
"""

import numpy as np

from glad.embed import Embedder
from glad.fields import ParsedLog, extract_rules
from glad.graph import build_snapshot, normalized_adjacency
from glad.ingest import LogRecord
from glad.templates import TemplateMiner

lines = [
    "FAILED LOGIN for della to imap://localhost/",
    "FAILED LOGIN for bob to imap://remote/",
    "connection from 10.0.0.7 port 5514 closed",
    "connection from 10.0.0.9 port 6001 closed",
    "FAILED LOGIN for della to imap://remote/",
]

# mine templates; variable tokens collapse to <*> as more lines arrive
miner = TemplateMiner()
for line in lines:
    miner.add(line)
for t in miner.templates():
    print(f"{t.template_id}  support={t.support}  {t.text}")

# the final template of each line, plus its typed field mentions
records = [LogRecord(line, 1000 * k) for k, line in enumerate(lines)]
parsed = []
for rec in records:
    cl = miner.add(rec.raw_text)  # re-adding a seen line only bumps support
    parsed.append(ParsedLog(rec, cl.id, " ".join(cl.tokens), extract_rules(rec.raw_text)))
for p in parsed[:2]:
    print(p.record.raw_text, "->", [(m.text, m.field_type.value) for m in p.mentions])

# one window: event nodes first, then field nodes; weights count co-occurrences
snap = build_snapshot(parsed, Embedder(32), t=0)
for key in snap.nodes:
    print("node", key)
print("edges (i, j, weight):")
print(snap.edges)

# the symmetric normalisation the graph convolution multiplies by
np.set_printoptions(precision=3, suppress=True)
print(normalized_adjacency(snap.A))
