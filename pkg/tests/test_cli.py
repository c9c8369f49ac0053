import json

import pytest

from glad.cli import build_parser, main

SMALL_MODEL = "[model]\nd_in = 32\nd_hidden = 16\nattn_dim = 8\nffn_dim = 8\n"


def config_text(input_path="synth.jsonl", extra=""):
    return (f'window_ms = 60000\n[paths]\ninput = "{input_path}"\nwork_dir = "run"\n{extra}'
            f"[embed]\ndim = 32\n{SMALL_MODEL}[train]\nseed = 3\nepochs = 2\n")


@pytest.fixture
def corpus(tmp_path):
    assert main(["synth", "--windows", "30", "--rate", "0.1", "--seed", "2",
                 "--out", str(tmp_path / "synth.jsonl")]) == 0
    return tmp_path / "synth.jsonl"


def subcommands():
    ap = build_parser()
    sub = next(a for a in ap._actions if a.dest == "command")
    names = [[n] for n in sub.choices if n != "config"]
    return [[]] + names + [["config"], ["config", "validate"], ["config", "init"]]


@pytest.mark.parametrize("cmd", subcommands(), ids=lambda c: " ".join(c) or "glad")
def test_help_everywhere(cmd, capsys):
    assert main(cmd + ["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["train"]) == 2
    assert main(["synth", "--rate", "3"]) == 2


def test_config_init_and_validate(tmp_path, corpus, capsys):
    cfg = tmp_path / "c.toml"
    assert main(["config", "init", "--seed", "4", "--input", "synth.jsonl", "--out", str(cfg)]) == 0
    assert main(["config", "validate", str(cfg)]) == 0
    (tmp_path / "bad.toml").write_text("[train]\nlr = 1\n")
    assert main(["config", "validate", str(tmp_path / "bad.toml")]) == 2


def test_pipeline_runs_caches_and_forces(tmp_path, corpus, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(config_text())
    assert main(["pipeline", "--config", str(cfg)]) == 0
    reports = tmp_path / "run" / "reports"
    first = {p.name: p.read_bytes() for p in reports.iterdir()}
    assert set(first) == {"edge.json", "edge.txt", "interval.json", "interval.txt"}
    for name in ("edge.json", "interval.json"):
        rep = json.loads(first[name])
        assert all(isinstance(rep[k], float) for k in ("precision", "recall", "f1", "threshold"))
    capsys.readouterr()

    assert main(["pipeline", "--config", str(cfg)]) == 0
    assert "ran" not in capsys.readouterr().out
    assert {p.name: p.read_bytes() for p in reports.iterdir()} == first

    assert main(["pipeline", "--config", str(cfg), "--force"]) == 0
    out = capsys.readouterr().out
    assert out.count(" ran") == 6
    assert {p.name: p.read_bytes() for p in reports.iterdir()} == first
    log = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 2 and json.loads(log[0])["epoch"] == 1


def test_changed_setting_reruns_from_that_stage(tmp_path, corpus, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(config_text())
    assert main(["pipeline", "--config", str(cfg)]) == 0
    capsys.readouterr()
    cfg.write_text(config_text().replace("epochs = 2", "epochs = 1"))
    assert main(["pipeline", "--config", str(cfg)]) == 0
    lines = dict(l.split() for l in capsys.readouterr().out.splitlines() if len(l.split()) == 2)
    assert lines["build-graphs"] == "cached" and lines["train"] == "ran" and lines["eval"] == "ran"


def test_missing_ruleset_stops_before_any_stage(tmp_path, corpus, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(config_text(extra='ruleset = "missing.json"\n'))
    assert main(["pipeline", "--config", str(cfg)]) == 2
    assert "ruleset" in capsys.readouterr().err
    assert not (tmp_path / "run" / "parsed.jsonl").exists()


def test_stage_error_names_the_stage(tmp_path, capsys):
    data = tmp_path / "tiny.jsonl"
    data.write_text("".join(json.dumps({"ts": k, "msg": f"worker w{k} up"}) + "\n" for k in range(5)))
    cfg = tmp_path / "c.toml"
    cfg.write_text(config_text("tiny.jsonl"))
    assert main(["pipeline", "--config", str(cfg)]) == 3
    assert "stage 'split'" in capsys.readouterr().err


def test_numeric_failure_exit_4(tmp_path, corpus):
    cfg = tmp_path / "c.toml"
    cfg.write_text(config_text().replace("epochs = 2", "epochs = 3\nlr = 1e300"))
    assert main(["pipeline", "--config", str(cfg)]) == 4


def test_data_error_exit_3(tmp_path):
    assert main(["parse", "--input", str(tmp_path / "nope.jsonl")]) == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"ts": "x", "msg": "m"}\n')
    assert main(["parse", "--input", str(bad), "--strict"]) == 3


def test_stage_commands_chain(tmp_path, corpus, capsys):
    d = tmp_path
    assert main(["parse", "--input", str(corpus), "--templates-out", str(d / "t.json"),
                 "--parsed-out", str(d / "p.jsonl")]) == 0
    assert len(json.loads((d / "t.json").read_text())) == 3
    assert main(["extract", "--parsed", str(d / "p.jsonl"), "--out", str(d / "f.jsonl")]) == 0
    assert main(["gen-prompts", "--fields", str(d / "f.jsonl"), "--out", str(d / "pp.jsonl")]) == 0
    first = json.loads((d / "pp.jsonl").read_text().splitlines()[0])
    assert set(first) == {"message", "prompt", "polarity"}
    assert main(["build-graphs", "--parsed", str(d / "f.jsonl"), "--out", str(d / "g"), "--dim", "32"]) == 0
    (d / "train.toml").write_text("seed = 3\nepochs = 2\n" + SMALL_MODEL)
    assert main(["train", "--graphs", str(d / "g"), "--config", str(d / "train.toml"),
                 "--out", str(d / "model.bin")]) == 0
    assert len((d / "train_log.jsonl").read_text().splitlines()) == 2
    assert main(["score", "--model", str(d / "model.bin"), "--graphs", str(d / "g"),
                 "--protocol", "interval", "--out", str(d / "s.jsonl")]) == 0
    rows = [json.loads(l) for l in (d / "s.jsonl").read_text().splitlines()]
    assert len(rows) == 30 - 18 - 3 and set(rows[0]) == {"t", "distance2", "label", "verdict"}
    capsys.readouterr()
    assert main(["eval", "--model", str(d / "model.bin"), "--graphs", str(d / "g"),
                 "--protocol", "edge", "--out-dir", str(d / "rep")]) == 0
    rep = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert rep["protocol"] == "edge" and (d / "rep" / "edge.txt").exists()


def test_scorer_backend_needs_table(tmp_path, corpus):
    assert main(["parse", "--input", str(corpus), "--templates-out", str(tmp_path / "t.json"),
                 "--parsed-out", str(tmp_path / "p.jsonl")]) == 0
    assert main(["extract", "--parsed", str(tmp_path / "p.jsonl"), "--backend", "scorer"]) == 2
    table = tmp_path / "scores.json"
    table.write_text(json.dumps({"scores": {"w00 is a server entity": 1.0}, "default": -10.0}))
    assert main(["extract", "--parsed", str(tmp_path / "p.jsonl"), "--backend", "scorer",
                 "--scores", str(table), "--out", str(tmp_path / "f.jsonl")]) == 0
    rows = [json.loads(l) for l in (tmp_path / "f.jsonl").read_text().splitlines()]
    texts = {m["text"] for r in rows for m in r["mentions"]}
    assert texts == {"w00"}
