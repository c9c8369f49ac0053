"""
Detecting injected relations on a small synthetic workload
==========================================================

A scaled-down version of the full pipeline: 60 windows, a narrow model and
20 epochs so it finishes in seconds. Numbers from a model this small are
noisy; the point is the flow from logs to the two reports.
"""

import tempfile
from pathlib import Path

from glad.config import default_config
from glad.evaluate import render_table
from glad.pipeline import run_pipeline
from glad.synth import SynthConfig, write_synthetic

work = Path(tempfile.mkdtemp(prefix="glad-demo-"))
n = write_synthetic(SynthConfig(windows=60, rate=0.1, seed=3), work / "synth.jsonl")
print(f"{n} log lines in {work}")

cfg = default_config(seed=3, input_path="synth.jsonl")
cfg.base_dir = work
cfg.paths.work_dir = "run"
cfg.embed.dim = cfg.model.d_in = 64
cfg.model.d_hidden = 32
cfg.train.epochs = 20
cfg.validate()

reports = run_pipeline(cfg)
for protocol, rep in reports.items():
    print(render_table(rep))

# per-epoch training log: edge loss, sphere loss, normalised distance
log = (work / "run" / "train_log.jsonl").read_text().splitlines()
print(log[0])
print(log[-1])
