"""End-to-end command-line checks: synth -> train -> eval -> inspect ->
summarize on a tiny planted dataset, plus usage-error and determinism
contracts. Everything runs in-process through cli.main for speed."""

import filecmp
import json
import os
import re

import pytest

from dialfuse.cli import main

TINY_SYNTH = [
    "train_dialogues=4",
    "dev_dialogues=2",
    "test_dialogues=2",
    "turns_per_dialogue=6",
    "n_slots=4",
    "text_layers=2",
    "speech_layers=2",
    "speech_frames=4",
    "text_tokens=6",
    "dim=8",
    "noise_std=0.05",
    "seed=3",
]

TINY_TRAIN = ["epochs=3", "learning_rate=0.05", "batch_size=8", "early_stop_patience=3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-data") / "synth"
    assert main(["synth", "--out", str(out)] + TINY_SYNTH) == 0
    return out


@pytest.fixture(scope="module")
def a1_run(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli-a1") / "run"
    code = main(
        ["train", "--data", str(data_dir), "--arch", "a1", "--seed", "0",
         "--out", str(out)] + TINY_TRAIN
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def a4_run(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli-a4") / "run"
    code = main(
        ["train", "--data", str(data_dir), "--arch", "a4", "--seed", "0",
         "--out", str(out)] + TINY_TRAIN
    )
    assert code == 0
    return out


class TestSynthCommand:
    def test_layout(self, data_dir):
        for name in ("corpus.jsonl", "manifest.jsonl", "policy.json"):
            assert (data_dir / name).is_file()
        assert any((data_dir / "embx").iterdir())

    def test_rerun_is_idempotent(self, data_dir, capsys):
        before = sorted(
            p.relative_to(data_dir) for p in data_dir.rglob("*") if p.is_file()
        )
        assert main(["synth", "--out", str(data_dir)] + TINY_SYNTH) == 0
        capsys.readouterr()
        after = sorted(
            p.relative_to(data_dir) for p in data_dir.rglob("*") if p.is_file()
        )
        assert before == after

    def test_summary_lines(self, data_dir, capsys):
        assert main(["synth", "--out", str(data_dir)] + TINY_SYNTH) == 0
        out = capsys.readouterr().out
        assert "samples  train 8" in out
        assert "labels" in out

    def test_config_file_with_override(self, tmp_path, capsys):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text(
            "# tiny dataset\n"
            + "\n".join(TINY_SYNTH).replace("=", " = ")
            + "\ntrain_dialogues = 99\n",
            encoding="utf-8",
        )
        out = tmp_path / "d"
        code = main(
            ["synth", "--config", str(cfg), "--out", str(out), "train_dialogues=4"]
        )
        assert code == 0
        assert "samples  train 8" in capsys.readouterr().out

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), "bogus_key=1"]) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_malformed_override_exits_2(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), "no-equals"]) == 2
        assert "no-equals" in capsys.readouterr().err

    def test_bad_value_type_exits_2(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), "dim=eight"]) == 2
        assert "expected int" in capsys.readouterr().err


class TestTrainCommand:
    def test_artifacts(self, a1_run):
        for name in ("model.ckpt", "vocab.json", "metrics.jsonl", "run.json"):
            assert (a1_run / name).is_file()

    def test_run_meta(self, a1_run):
        meta = json.loads((a1_run / "run.json").read_text())
        assert meta["variant"] == "A1"
        assert meta["seed"] == 0
        assert meta["train_config"]["epochs"] == 3
        assert meta["train_config"]["learning_rate"] == pytest.approx(0.05)
        assert meta["architecture"]["variant"] == "A1"
        assert meta["use_asr"] is False

    def test_same_seed_bitwise_identical(self, tmp_path, data_dir, a1_run):
        out = tmp_path / "again"
        argv = ["train", "--data", str(data_dir), "--arch", "a1", "--seed", "0",
                "--out", str(out)] + TINY_TRAIN
        assert main(argv) == 0
        for name in ("model.ckpt", "metrics.jsonl", "vocab.json", "run.json"):
            assert filecmp.cmp(a1_run / name, out / name, shallow=False), name

    def test_rerun_into_same_dir_does_not_append(self, tmp_path, data_dir):
        out = tmp_path / "r"
        argv = ["train", "--data", str(data_dir), "--arch", "a1", "--seed", "1",
                "--out", str(out)] + TINY_TRAIN
        assert main(argv) == 0
        lines_first = (out / "metrics.jsonl").read_text().splitlines()
        assert main(argv) == 0
        assert (out / "metrics.jsonl").read_text().splitlines() == lines_first

    def test_stdout_reports_epochs_and_checkpoint(self, tmp_path, data_dir, capsys):
        out = tmp_path / "r"
        argv = ["train", "--data", str(data_dir), "--arch", "a1", "--seed", "2",
                "--out", str(out)] + TINY_TRAIN
        assert main(argv) == 0
        printed = capsys.readouterr().out
        assert re.search(r"epoch +1 train_loss \d", printed)
        assert "best epoch" in printed
        assert "model.ckpt" in printed

    def test_weighted_and_asr_flags_recorded(self, tmp_path, data_dir):
        out = tmp_path / "r"
        argv = ["train", "--data", str(data_dir), "--arch", "a1", "--seed", "0",
                "--out", str(out), "--weighted-loss", "--use-asr", "epochs=1",
                "learning_rate=0.05"]
        assert main(argv) == 0
        meta = json.loads((out / "run.json").read_text())
        assert meta["train_config"]["weighted_loss"] is True
        assert meta["use_asr"] is True

    def test_a2_speech_layer_selection_override(self, tmp_path, data_dir):
        out = tmp_path / "r"
        argv = ["train", "--data", str(data_dir), "--arch", "a2", "--seed", "0",
                "--out", str(out), "epochs=1", "selected_speech_layers=0"]
        assert main(argv) == 0
        meta = json.loads((out / "run.json").read_text())
        assert meta["architecture"]["selected_speech_layers"] == [0]

    def test_missing_data_dir_exits_1(self, tmp_path, capsys):
        code = main(["train", "--data", str(tmp_path / "nope"), "--arch", "a1",
                     "--out", str(tmp_path / "r")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestEvalCommand:
    def test_eval_writes_record(self, a4_run, data_dir, capsys):
        code = main(["eval", "--run", str(a4_run), "--data", str(data_dir),
                     "--split", "test"])
        assert code == 0
        printed = capsys.readouterr().out
        assert printed.startswith("test: loss ")
        payload = json.loads((a4_run / "eval_test.json").read_text())
        assert payload["variant"] == "A4"
        assert payload["split"] == "test"
        assert 0.0 <= payload["accuracy"] <= 1.0
        assert payload["requests_total"] == 4  # one request per decision turn
        assert payload["urs"] == pytest.approx(
            100.0 * payload["requests_answered"] / payload["requests_total"]
        )

    def test_answer_acts_restriction_zeroes_urs(self, a4_run, data_dir, capsys):
        # planted labels only ever answer with inform(...), so counting only
        # offer acts as answers must drive URS to zero
        code = main(["eval", "--run", str(a4_run), "--data", str(data_dir),
                     "--split", "dev", "--answer-acts", "offer"])
        assert code == 0
        payload = json.loads((a4_run / "eval_dev.json").read_text())
        assert payload["requests_answered"] == 0
        assert payload["urs"] == 0.0
        capsys.readouterr()

    def test_empty_answer_acts_exits_2(self, a4_run, data_dir, capsys):
        code = main(["eval", "--run", str(a4_run), "--data", str(data_dir),
                     "--answer-acts", " , "])
        assert code == 2
        capsys.readouterr()

    def test_missing_checkpoint_exits_1(self, tmp_path, data_dir, capsys):
        code = main(["eval", "--run", str(tmp_path), "--data", str(data_dir)])
        assert code == 1
        capsys.readouterr()


class TestGradcheckCommand:
    def test_small_dims_pass(self, capsys):
        assert main(["gradcheck", "--dims", "small"]) == 0
        printed = capsys.readouterr().out
        match = re.search(r"max relative error (\S+) \(threshold 1\.0e-03\): PASS", printed)
        assert match, printed
        assert float(match.group(1)) < 1e-3

    def test_tiny_dims_pass(self, capsys):
        assert main(["gradcheck", "--dims", "tiny", "--seed", "7"]) == 0
        assert "PASS" in capsys.readouterr().out


class TestInspectCommand:
    def test_a4_dumps_both_modalities(self, a4_run, capsys):
        assert main(["inspect", "--run", str(a4_run)]) == 0
        printed = capsys.readouterr().out
        assert "variant A4" in printed
        text_row = re.search(r"text layer weights: ([\d. ]+)", printed)
        speech_row = re.search(r"speech layer weights: ([\d. ]+)", printed)
        assert text_row and speech_row
        for row in (text_row, speech_row):
            weights = [float(w) for w in row.group(1).split()]
            assert len(weights) == 2
            assert sum(weights) == pytest.approx(1.0, abs=1e-3)

    def test_a1_has_no_learned_weights(self, a1_run, capsys):
        assert main(["inspect", "--run", str(a1_run)]) == 0
        printed = capsys.readouterr().out
        assert "text layer weights: none (not learned by A1)" in printed
        assert "speech layer weights: none (not learned by A1)" in printed


class TestSummarizeCommand:
    def test_table(self, tmp_path, data_dir, capsys):
        runs = tmp_path / "runs"
        for seed in (0, 1):
            out = runs / f"a1-{seed}"
            argv = ["train", "--data", str(data_dir), "--arch", "a1",
                    "--seed", str(seed), "--out", str(out)] + TINY_TRAIN
            assert main(argv) == 0
            assert main(["eval", "--run", str(out), "--data", str(data_dir),
                         "--split", "test"]) == 0
        capsys.readouterr()
        assert main(["summarize", str(runs)]) == 0
        printed = capsys.readouterr().out
        lines = printed.splitlines()
        assert lines[0].split() == ["arch", "source", "split", "runs", "URS", "accuracy"]
        row = next(l for l in lines if l.startswith("A1"))
        assert " test " in row
        assert row.split()[3] == "2"
        assert row.count("±") == 2
        assert re.search(r"\d+\.\d{3} ± \d+\.\d{3}", row)

    def test_empty_dir_exits_1(self, tmp_path, capsys):
        assert main(["summarize", str(tmp_path)]) == 1
        assert "no eval_" in capsys.readouterr().err
