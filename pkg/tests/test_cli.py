import csv
import json
import logging

import pytest

from diffgan_tts import cli
from diffgan_tts.diffusion import make_variance_schedule
from diffgan_tts.errors import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION

CORPUS_FLAGS = ["--speakers", "2", "--utterances", "6", "--min-frames", "10", "--max-frames", "16", "--seed", "3"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert cli.main(["gen-data", "--out", str(out)] + CORPUS_FLAGS) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def run_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["-q", "train", "--corpus", str(corpus_dir), "--out", str(out), "--steps", "2", "--seed", "11",
                     "--batch-size", "2"]) == EXIT_OK
    return out


def test_gen_data_writes_corpus(corpus_dir):
    assert (corpus_dir / "manifest.jsonl").is_file()
    assert (corpus_dir / "mels.f32").is_file()
    assert len((corpus_dir / "manifest.jsonl").read_text().splitlines()) == 6


def test_train_is_reproducible(corpus_dir, run_dir, tmp_path):
    args = ["-q", "train", "--corpus", str(corpus_dir), "--out", str(tmp_path), "--steps", "2", "--seed", "11",
            "--batch-size", "2"]
    assert cli.main(args) == EXIT_OK
    assert (tmp_path / "ckpt_000002.dgtt").read_bytes() == (run_dir / "ckpt_000002.dgtt").read_bytes()
    with (run_dir / "train_log.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows[1:]] == ["1", "2"]


def test_train_resume(corpus_dir, tmp_path):
    base = ["-q", "train", "--corpus", str(corpus_dir), "--out", str(tmp_path), "--batch-size", "2"]
    assert cli.main(base + ["--steps", "1"]) == EXIT_OK
    assert cli.main(base + ["--steps", "2", "--resume"]) == EXIT_OK
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert len(lines) == 3
    assert (tmp_path / "ckpt_000002.dgtt").is_file()


def test_train_missing_corpus(tmp_path, caplog):
    code = cli.main(["train", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "run")])
    assert code == EXIT_USAGE
    assert "--corpus" in caplog.text


def test_train_bad_override_is_usage_error(corpus_dir, tmp_path):
    args = ["train", "--corpus", str(corpus_dir), "--out", str(tmp_path), "--set", "warp_speed=9"]
    assert cli.main(args) == EXIT_USAGE


def test_train_two_stage_then_shallow_infer(corpus_dir, tmp_path):
    out = tmp_path / "two"
    args = ["-q", "train-two-stage", "--corpus", str(corpus_dir), "--out", str(out), "--steps", "1",
            "--stage1-iters", "1", "--batch-size", "2"]
    assert cli.main(args) == EXIT_OK
    assert (out / "stage1" / "ckpt_000001.dgtt").is_file()
    ckpt = out / "ckpt_000001.dgtt"
    mel = tmp_path / "mel.dgtt"
    code = cli.main(["infer", "--checkpoint", str(ckpt), "--tokens", "1,2,3", "--mode", "two-stage",
                     "--out", str(mel)])
    assert code == EXIT_OK and mel.is_file()


def test_infer_is_reproducible(run_dir, tmp_path):
    ckpt = str(run_dir / "ckpt_000002.dgtt")
    for name in ("a", "b"):
        args = ["infer", "--checkpoint", ckpt, "--tokens", "1,2,3", "--seed", "7", "--out", str(tmp_path / f"{name}.dgtt"),
                "--pgm", str(tmp_path / f"{name}.pgm")]
        assert cli.main(args) == EXIT_OK
    assert (tmp_path / "a.dgtt").read_bytes() == (tmp_path / "b.dgtt").read_bytes()
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n")


def test_infer_trace_writes_one_image_per_step(run_dir, tmp_path):
    trace = tmp_path / "trace"
    args = ["infer", "--checkpoint", str(run_dir / "ckpt_000002.dgtt"), "--tokens", "4,5", "--T", "4",
            "--out", str(tmp_path / "m.dgtt"), "--trace", str(trace)]
    assert cli.main(args) == EXIT_OK
    assert sorted(p.name for p in trace.iterdir()) == ["x_t0001.pgm", "x_t0002.pgm", "x_t0003.pgm", "x_t0004.pgm"]


def test_infer_two_stage_on_single_stage_checkpoint(run_dir, tmp_path):
    args = ["infer", "--checkpoint", str(run_dir / "ckpt_000002.dgtt"), "--tokens", "1", "--mode", "two-stage",
            "--out", str(tmp_path / "m.dgtt")]
    assert cli.main(args) == EXIT_IO


def test_infer_missing_checkpoint(tmp_path):
    args = ["infer", "--checkpoint", str(tmp_path / "none.dgtt"), "--tokens", "1", "--out", str(tmp_path / "m.dgtt")]
    assert cli.main(args) == EXIT_IO


def test_infer_rejects_bad_token_list():
    with pytest.raises(SystemExit) as info:
        cli.main(["infer", "--checkpoint", "x", "--tokens", "a,b", "--out", "y"])
    assert info.value.code == 2


def test_check_json(capsys):
    assert cli.main(["check", "--only", "schedule", "losses", "--json"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["passed"] is True
    assert [c["name"] for c in payload["checks"]] == ["schedule", "losses"]


def test_check_prints_schedule_table(capsys):
    assert cli.main(["check", "--only", "posterior", "--T", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("t,beta,alpha,alpha_bar\n1,")
    assert "posterior" in out


def test_check_fails_on_wrong_schedule(caplog, capsys):
    def wrong(T, beta_min=0.1, beta_max=40.0):
        return make_variance_schedule(T, beta_min, beta_max / 2)

    with caplog.at_level(logging.ERROR, logger="diffgan_tts.cli"):
        code = cli.cmd_check(schedule_fn=wrong, only=["schedule"])
    assert code == EXIT_VALIDATION
    assert "check failed: schedule" in caplog.text
    assert "FAIL" in capsys.readouterr().out


def test_check_table_uses_the_checked_schedule(capsys):
    def halved(T, beta_min, beta_max):
        return make_variance_schedule(T, beta_min, beta_max / 2)

    assert cli.cmd_check(schedule_fn=halved, T=2, only=["schedule"]) == EXIT_VALIDATION
    rows = capsys.readouterr().out.splitlines()
    assert rows[1].split(",")[1] == repr(make_variance_schedule(2, 0.1, 20.0).beta(1))


def test_bench_csv(run_dir, tmp_path, capsys):
    out = tmp_path / "bench.csv"
    args = ["bench", "--checkpoint", str(run_dir / "ckpt_000002.dgtt"), "--lengths", "2,3", "--modes", "T=1", "T=2",
            "--repeats", "1", "--out", str(out)]
    assert cli.main(args) == EXIT_OK
    with out.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["mode"], r["decoder_passes"]) for r in rows] == [("T=1", "1"), ("T=1", "1"), ("T=2", "2"), ("T=2", "2")]
    assert "| mode" in capsys.readouterr().out


def test_bench_needs_a_checkpoint():
    assert cli.main(["bench", "--lengths", "2"]) == EXIT_IO


def test_variation_csv(run_dir, tmp_path, capsys):
    out = tmp_path / "variation.csv"
    args = ["variation", "--checkpoint", str(run_dir / "ckpt_000002.dgtt"), "--tokens", "1,2", "--samples", "3",
            "--seed", "5", "--out", str(out)]
    assert cli.main(args) == EXIT_OK
    seeds = {row["seed"] for row in csv.DictReader(out.open(newline=""))}
    assert seeds == {"5", "6", "7"}
    assert "contour variance" in capsys.readouterr().out


def test_variation_needs_two_samples(run_dir, tmp_path):
    args = ["variation", "--checkpoint", str(run_dir / "ckpt_000002.dgtt"), "--tokens", "1", "--samples", "1"]
    assert cli.main(args) == EXIT_VALIDATION
