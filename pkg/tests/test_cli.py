import json

import pytest

from hse.cli import cli_dispatch


def run(*argv):
    return cli_dispatch(list(argv))


@pytest.fixture()
def corpus_path(tmp_path):
    path = tmp_path / "corpus.jsonl"
    code = run(
        "synth", "--pairs", "6", "--events", "3", "--clips", "1:2", "--frames", "1:2",
        "--words", "1:2", "--dv", "4", "--dt", "4", "--seed", "5", "--out", str(path),
    )
    assert code == 0
    return path


@pytest.fixture()
def trained_dir(tmp_path, corpus_path):
    out = tmp_path / "run"
    code = run(
        "train", "--corpus", str(corpus_path), "--out", str(out), "--epochs", "2",
        "--seed", "3", "--hidden-low", "4", "--hidden-high", "4", "--batch-size", "4",
    )
    assert code == 0
    return out


class TestSynth:
    def test_deterministic_output_files(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        args = ["--pairs", "4", "--seed", "7", "--dv", "3", "--dt", "3",
                "--clips", "1:2", "--frames", "1:2", "--words", "1"]
        assert run("synth", *args, "--out", str(a)) == 0
        assert run("synth", *args, "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.jsonl.labels.json").exists()
        assert (tmp_path / "a.jsonl.manifest.json").exists()


class TestTrain:
    def test_outputs_and_manifest(self, trained_dir):
        assert (trained_dir / "checkpoint.bin").exists()
        assert (trained_dir / "loss_log.txt").exists()
        manifest = json.loads((trained_dir / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["epochs"] == 2
        for path, digest in manifest["checksums"].items():
            assert len(digest) == 64
        assert manifest["duration_seconds"] >= 0.0

    def test_flags_override_config_file(self, tmp_path, corpus_path):
        config = tmp_path / "run.cfg"
        config.write_text("epochs = 5\nseed = 3\nhidden_low = 4\nhidden_high = 4\n")
        out = tmp_path / "run2"
        code = run(
            "train", "--corpus", str(corpus_path), "--config", str(config),
            "--out", str(out), "--epochs", "1", "--batch-size", "4",
        )
        assert code == 0
        echoed = (out / "config.txt").read_text()
        assert "epochs = 1" in echoed
        assert "seed = 3" in echoed
        log_lines = (out / "loss_log.txt").read_text().strip().splitlines()
        assert len(log_lines) == 1 + 1  # header plus one epoch

    def test_bad_config_file_exit_1(self, tmp_path, corpus_path):
        config = tmp_path / "bad.cfg"
        config.write_text("not a key value line\n")
        assert run("train", "--corpus", str(corpus_path), "--config", str(config),
                   "--out", str(tmp_path / "x")) == 1

    def test_train_reruns_are_bitwise_identical(self, tmp_path, corpus_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run(
                "train", "--corpus", str(corpus_path), "--out", str(out), "--epochs", "2",
                "--seed", "9", "--hidden-low", "4", "--hidden-high", "4", "--batch-size", "4",
            ) == 0
            outs.append(out)
        assert (outs[0] / "checkpoint.bin").read_bytes() == (outs[1] / "checkpoint.bin").read_bytes()
        assert (outs[0] / "loss_log.txt").read_bytes() == (outs[1] / "loss_log.txt").read_bytes()


class TestEval:
    def test_eval_writes_reports(self, tmp_path, corpus_path, trained_dir):
        out = tmp_path / "eval"
        code = run(
            "eval", "--checkpoint", str(trained_dir / "checkpoint.bin"),
            "--corpus", str(corpus_path), "--out", str(out), "--topk", "1,5",
        )
        assert code == 0
        text = (out / "retrieval.txt").read_text()
        assert "paragraph_to_video recall@1" in text
        summary = json.loads((out / "retrieval.json").read_text())
        assert set(summary) == {"paragraph_to_video", "video_to_paragraph"}

    def test_eval_is_reproducible(self, tmp_path, corpus_path, trained_dir):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert run(
                "eval", "--checkpoint", str(trained_dir / "checkpoint.bin"),
                "--corpus", str(corpus_path), "--out", str(out),
            ) == 0
            outs.append(out)
        assert (outs[0] / "retrieval.txt").read_bytes() == (outs[1] / "retrieval.txt").read_bytes()

    def test_missing_checkpoint_exit_1(self, tmp_path, corpus_path):
        assert run(
            "eval", "--checkpoint", str(tmp_path / "nope.bin"),
            "--corpus", str(corpus_path), "--out", str(tmp_path / "out"),
        ) == 1

    def test_partial_eval(self, tmp_path, corpus_path, trained_dir):
        out = tmp_path / "partial"
        code = run(
            "partial-eval", "--checkpoint", str(trained_dir / "checkpoint.bin"),
            "--corpus", str(corpus_path), "--out", str(out), "--max-units", "1",
        )
        assert code == 0
        assert (out / "retrieval_partial_1.txt").exists()


class TestZeroShot:
    def test_zeroshot_report(self, tmp_path, corpus_path, trained_dir):
        out = tmp_path / "zs"
        code = run(
            "zeroshot", "--checkpoint", str(trained_dir / "checkpoint.bin"),
            "--corpus", str(corpus_path), "--out", str(out),
        )
        assert code == 0
        summary = json.loads((out / "zeroshot.json").read_text())
        assert 0.0 <= summary["top1"] <= summary["top5"] <= 1.0


class TestDispatch:
    def test_unknown_subcommand_exits_2(self, capsys):
        assert run("frobnicate") == 2

    def test_no_arguments_exits_2(self):
        assert run() == 2

    def test_gradcheck_smoke(self, tmp_path):
        out = tmp_path / "gc"
        assert run("gradcheck", "--seed", "1", "--trials", "1", "--out", str(out)) == 0
        assert (out / "gradcheck.txt").exists()
        assert (out / "manifest.json").exists()

    def test_bad_log_level_exit_1(self, monkeypatch):
        monkeypatch.setenv("HSE_LOG_LEVEL", "chatty")
        assert run("gradcheck", "--trials", "1") == 1
