import csv
import io
import json

import numpy as np
import pytest

from oiaedl.cli import main

MODEL = {"encoder_hidden_dims": [8], "selector_hidden_dim": 4, "head_hidden_dim": 8}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "gen.json").write_text(json.dumps({"n_train": 24, "n_val": 8, "n_test": 8, "seed": 3}))
    (root / "train.json").write_text(json.dumps({"model": MODEL, "train": {"max_epochs": 2}}))
    assert main(["gen", "--config", str(root / "gen.json"), "--out", str(root / "data")]) == 0
    assert main(["train", "--phase", "1", "--config", str(root / "train.json"),
                 "--data", str(root / "data"), "--out", str(root / "p1")]) == 0
    return root


def _lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestPipeline:
    def test_gen_outputs(self, run):
        assert len((run / "data" / "dataset.jsonl").read_text().splitlines()) == 40
        assert json.loads((run / "data" / "generator.json").read_text())["n_train"] == 24

    def test_train_outputs(self, run):
        for name in ("phase1_best.ckpt", "phase1_log.jsonl", "phase1_config.json"):
            assert (run / "p1" / name).exists()
        assert [r["epoch"] for r in _lines(run / "p1" / "phase1_log.jsonl")] == [1, 2]

    def test_eval_report(self, run):
        out = run / "report.jsonl"
        assert main(["eval", "--checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--data", str(run / "data"), "--format", "json-lines",
                     "--report", str(out)]) == 0
        rows = _lines(out)
        assert rows and all(r["split"] == "test" for r in rows)
        for r in rows:
            for key in ("precision", "recall", "f1", "accuracy", "auc"):
                if key in r:
                    assert 0.0 <= r[key] <= 1.0
        assert {r["head"] for r in rows if r["group"] == "action"} >= {"forward", "stop", "left",
                                                                       "right", "micro", "macro"}

    def test_eval_csv(self, run, capsys):
        assert main(["eval", "--checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--data", str(run / "data" / "dataset.jsonl"), "--split", "val",
                     "--stress", "corrupt:0.7"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) > 25 and rows[0]["split"] == "val"

    def test_phase2(self, run):
        assert main(["train", "--phase", "2", "--strategies", "sp,rw",
                     "--config", str(run / "train.json"), "--data", str(run / "data"),
                     "--init-checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--out", str(run / "p2")]) == 0
        log = _lines(run / "p2" / "phase2_log.jsonl")
        assert log[0]["epoch"] == 0 and "tau_m" in log[1]

    def test_inspect(self, run):
        out = run / "inspect.jsonl"
        assert main(["inspect", "--checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--data", str(run / "data"), "--ids", "3", "--format", "json-lines",
                     "--report", str(out)]) == 0
        rows = _lines(out)
        sel = [r for r in rows if r["kind"] == "selector"]
        heads = [r for r in rows if r["kind"] != "selector"]
        assert len(sel) == 4 and len(heads) == 25
        for r in sel:
            w = np.array(r["weights"].split(), dtype=float)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            assert "global" in r["ranking"].split()
        for r in heads:
            assert r["id"] == 3
            s = r["alpha_present"] + r["alpha_absent"]
            assert r["uncertainty"] == pytest.approx(2 / s, rel=1e-12)
            assert r["p_present"] == pytest.approx(r["alpha_present"] / s, rel=1e-12)
            assert 0.0 <= r["entropy_bits"] <= 1.0

    def test_sweep(self, run, capsys):
        assert main(["sweep-threshold", "--checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--data", str(run / "data"), "--split", "all"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert rows and "tau_m" in rows[0]


class TestExitCodes:
    def test_phase2_needs_init(self, run):
        assert main(["train", "--phase", "2", "--data", str(run / "data"),
                     "--out", str(run / "x")]) == 1

    def test_strategies_with_phase1(self, run):
        assert main(["train", "--phase", "1", "--strategies", "rw", "--data", str(run / "data"),
                     "--out", str(run / "x")]) == 1

    def test_unknown_subcommand(self):
        assert main(["bogus"]) == 1

    def test_unknown_flag(self, run):
        assert main(["gen", "--out", str(run / "x"), "--colour", "red"]) == 1

    def test_missing_checkpoint(self, run):
        assert main(["eval", "--checkpoint", str(run / "missing.ckpt"),
                     "--data", str(run / "data")]) == 2

    def test_bad_dataset(self, run):
        bad = run / "bad.jsonl"
        bad.write_text('{"id": 0\n')
        assert main(["eval", "--checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--data", str(bad)]) == 2

    def test_unknown_inspect_id(self, run):
        assert main(["inspect", "--checkpoint", str(run / "p1" / "phase1_best.ckpt"),
                     "--data", str(run / "data"), "--ids", "999"]) == 2
