import os

import numpy as np
import pytest

from diffusion_buffer.checkpoint import load_checkpoint
from diffusion_buffer.cli import main
from diffusion_buffer.train import LossTrace


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["make-synth-data", str(d), "--pairs", "4", "--duration", "0.5", "--seed", "1"]) == 0
    return d


TINY = """\
[sde]
preset = bbed-paper
[net]
channels = 4
depth = 1
[train]
epochs = {epochs}
batch_size = 2
lr = 0.002
K = 16
B = 4
ema_decay = 0.5
"""


def _config(tmp_path, epochs):
    p = tmp_path / f"cfg{epochs}.ini"
    p.write_text(TINY.format(epochs=epochs))
    return str(p)


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["enhance"]) == 1
    assert main(["train", "--mode", "x"]) == 1
    assert main(["--help"]) == 0


def test_make_synth_data(synth_dir):
    files = os.listdir(synth_dir)
    assert len(files) == 9


def test_train_validation_errors(tmp_path, synth_dir, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nema_decay = 1.5\n")
    assert main(["train", "--config", str(bad), "--data", str(synth_dir), "--out", str(tmp_path)]) == 2
    assert "[0, 1)" in capsys.readouterr().err
    bad.write_text("[train]\nepoch = 3\n")
    assert main(["train", "--config", str(bad), "--data", str(synth_dir)]) == 2
    assert "train.epoch" in capsys.readouterr().err
    assert main(["train", "--config", _config(tmp_path, 1), "--data", str(tmp_path / "nope")]) == 2
    assert "dataset not found" in capsys.readouterr().err


def test_train_resume_and_enhance(tmp_path, synth_dir, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", _config(tmp_path, 2), "--data", str(synth_dir), "--out", str(out)]) == 0
    trace = LossTrace.read(out / "loss_trace.csv")
    assert len(trace) == 4
    ck = load_checkpoint(out / "model.ckpt")
    assert ck.header["extra"]["train"]["epoch"] == 2
    assert ck.group("adam_m") and ck.group("ema")

    assert main(["train", "--config", _config(tmp_path, 4), "--data", str(synth_dir), "--out", str(out),
                 "--resume", str(out / "model.ckpt")]) == 0
    trace = LossTrace.read(out / "loss_trace.csv")
    assert [r["iteration"] for r in trace] == [1, 2, 3, 4, 5, 6, 7, 8]
    assert trace[4]["loss"] < 10 * trace[3]["loss"]

    # resuming reproduces an uninterrupted run exactly
    straight = tmp_path / "straight"
    assert main(["train", "--config", _config(tmp_path, 4), "--data", str(synth_dir), "--out", str(straight)]) == 0
    assert [r["loss"] for r in LossTrace.read(straight / "loss_trace.csv")] == [r["loss"] for r in trace]

    noisy = synth_dir / "noisy_0000.wav"
    report = tmp_path / "report.txt"
    capsys.readouterr()
    assert main(["enhance", str(noisy), str(tmp_path / "o.wav"), "--checkpoint", str(out / "model.ckpt"),
                 "--report", str(report)]) == 0
    text = report.read_text()
    assert "algorithmic_latency_ms: 64" in text
    assert main(["enhance", str(noisy), str(tmp_path / "o.wav"), "--checkpoint", str(out / "model.ckpt"),
                 "--buffer", "20"]) == 2
    assert "grid.B" in capsys.readouterr().err


def test_enhance_oracle_db_and_vanilla(tmp_path, synth_dir):
    noisy, clean = synth_dir / "noisy_0001.wav", synth_dir / "clean_0001.wav"
    rep = tmp_path / "db.txt"
    assert main(["enhance", str(noisy), str(tmp_path / "a.wav"), "--oracle-clean", str(clean), "--mode", "db",
                 "--buffer", "20", "--report", str(rep)]) == 0
    fields = dict(line.split(": ", 1) for line in rep.read_text().splitlines())
    assert float(fields["algorithmic_latency_ms"]) == 320
    assert float(fields["si_sdr_improvement_db"]) > 0
    rep = tmp_path / "van.txt"
    assert main(["enhance", str(noisy), str(tmp_path / "b.wav"), "--oracle-clean", str(clean), "--mode", "vanilla",
                 "--steps", "60", "--report", str(rep)]) == 0
    fields = dict(line.split(": ", 1) for line in rep.read_text().splitlines())
    assert int(fields["score_calls"]) == 60


def test_enhance_missing_input(tmp_path):
    assert main(["enhance", str(tmp_path / "nope.wav"), str(tmp_path / "o.wav"),
                 "--oracle-clean", str(tmp_path / "nope.wav")]) == 2


def test_verify_fault_injection(monkeypatch, capsys):
    monkeypatch.setenv("DBUFFER_CORRUPT_SIGMA", "1e-3")
    assert main(["verify"]) == 2
    out = capsys.readouterr().out
    assert "[FAIL] sde.sigma" in out and "failed: sde.sigma" in out


def test_bench(tmp_path):
    rep = tmp_path / "b.txt"
    assert main(["bench", "--buffer", "20", "--frames", "8", "--report", str(rep)]) == 0
    assert "algorithmic_latency_ms: 320" in rep.read_text()
