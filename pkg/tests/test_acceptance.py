"""Acceptance suite: one PASS/FAIL line per criterion, printed even when pytest captures output."""
import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from diffusion_buffer.dbuffer import enhance_stream, linear_grid
from diffusion_buffer.score import AnalyticScore, CountingScore, GaussianToy, LearnedScore, NetConfig, ScoreNet
from diffusion_buffer.sde import BBED_PAPER, OUVE_PAPER, complex_normal
from diffusion_buffer.spectral import (AudioClip, StftConfig, compress_values, decompress_values,
                                       interior_length, istft, stft)
from diffusion_buffer.stream import DbEngine, VanillaPerHopEngine, enhance_spectrogram, measure_rtf
from diffusion_buffer import verify
from diffusion_buffer.cli import main
from diffusion_buffer.train import LossTrace

TOY = GaussianToy(0.001, 0.005)


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
        return passed
    return emit


def test_criterion_01_sde_moments(report):
    a = verify.check_mean_coeffs()
    s = verify.check_sigma()
    assert report(1, a.passed and s.passed, f"{a.detail}; {s.detail}")


def test_criterion_02_kernel_sampling(report):
    results = [verify.check_sample_state(params=p, seed=0) for p in (OUVE_PAPER, BBED_PAPER)]
    detail = "; ".join(f"{p.kind}: {r.detail}" for p, r in zip((OUVE_PAPER, BBED_PAPER), results))
    assert report(2, all(r.passed for r in results), f"10 times x 1e5 draws, {detail}")


def test_criterion_03_stream_offline_equivalence(report):
    r = verify.check_stream_replay(steps=500)
    assert report(3, r.passed, r.detail)


def test_criterion_04_one_call_budget(report):
    rng = np.random.default_rng(0)
    _, y = TOY.sample(rng, (16, 90))
    db = CountingScore(AnalyticScore(BBED_PAPER, TOY))
    enhance_stream(y, db, BBED_PAPER, linear_grid(BBED_PAPER, 20), 32, rng)
    ok_db = db.calls == 90
    counts = {}
    for N in (1, 7, 60):
        _, rep = enhance_spectrogram(_spec(y), AnalyticScore(BBED_PAPER, TOY), BBED_PAPER, "vanilla", N=N, rng=rng)
        counts[N] = rep.score_calls
    ok_van = all(counts[N] == N for N in counts)
    assert report(4, ok_db and ok_van, f"db: {db.calls} calls for 90 frames; vanilla calls by N: {counts}")


def _spec(y):
    from diffusion_buffer.spectral import ComplexSpectrogram

    return ComplexSpectrogram(y, compressed=True)


def _impulse_delay(B):
    F, M, at = 8, 3 * B + 20, B + 5
    y = np.zeros((F, M), complex)
    y[:, at] = 1.0
    toy = GaussianToy(0.5, 1e-6)
    out = enhance_stream(y, AnalyticScore(BBED_PAPER, toy), BBED_PAPER, linear_grid(BBED_PAPER, B), B + 8,
                         np.random.default_rng(0)).data
    return int(np.argmax(np.abs(out).mean(axis=0))) - at


def test_criterion_05_latency(report):
    rng = np.random.default_rng(0)
    lat = {}
    for B in (20, 60):
        _, y = TOY.sample(rng, (4, B + 15))
        eng = DbEngine(AnalyticScore(BBED_PAPER, TOY), BBED_PAPER, linear_grid(BBED_PAPER, B), B + 4, 4, rng)
        lat[B] = measure_rtf(eng, y, warmup_steps=10, hop_ms=StftConfig().hop_ms).algorithmic_latency_ms
    delays = {B: _impulse_delay(B) for B in (1, 5, 20, 60)}
    ok = lat == {20: 320.0, 60: 960.0} and all(delays[B] == B for B in delays)
    assert report(5, ok, f"reported latency {lat} ms; impulse delay in frames by B {delays}")


def test_criterion_06_rtf_scaling(report):
    torch.set_num_threads(1)
    torch.manual_seed(0)
    cfg = StftConfig()
    net = ScoreNet(NetConfig(), BBED_PAPER)
    score = LearnedScore(net)
    F, K = cfg.num_freqs, 128
    src = 0.1 * complex_normal(np.random.default_rng(0), (F, 28))
    med = {}
    for N in (1, 2, 4):
        eng = VanillaPerHopEngine(score, BBED_PAPER, N, K, F, np.random.default_rng(0))
        med[N] = measure_rtf(eng, src, warmup_steps=3, hop_ms=cfg.hop_ms).rtf_median
    ratios = {N: med[N] / (N * med[1]) for N in (2, 4)}
    ok = all(0.8 <= r <= 1.2 for r in ratios.values())
    detail = (f"median RTF N=1 {med[1]:.3f}, N=2 {med[2]:.3f}, N=4 {med[4]:.3f}; "
              f"RTF(N) / (N RTF(1)) = {ratios[2]:.3f}, {ratios[4]:.3f} (band 0.8..1.2)")
    assert report(6, ok, detail)


def test_criterion_07_gradient_integrity(report):
    r = verify.check_loss_gradient(seed=0)
    net, _ = verify._small_problem(0)
    assert report(7, r.passed and net.num_params() <= 10_000, r.detail)


def test_criterion_08_analytic_oracle_enhancement(report):
    """1000 independent bins (trials) streamed through the buffer for each B."""
    p = BBED_PAPER
    rng = np.random.default_rng(0)
    F, M = 1000, 120
    x0, y = TOY.sample(rng, (F, M))
    noisy_mse = float(np.mean(np.abs(y - x0) ** 2))
    mse = {}
    for B in (5, 20, 60):
        out = enhance_stream(y, AnalyticScore(p, TOY), p, linear_grid(p, B), 64, np.random.default_rng(B),
                             flush=True).data[:, B:]
        mse[B] = float(np.mean(np.abs(out - x0) ** 2))
    lower = all(mse[B] < noisy_mse for B in mse)
    monotone = mse[5] >= mse[20] >= mse[60]
    detail = f"noisy MSE {noisy_mse:.5f}; db MSE " + ", ".join(f"B={B}: {v:.5f}" for B, v in mse.items())
    assert report(8, lower and monotone, detail)


def test_criterion_10_stft_fidelity(report):
    rng = np.random.default_rng(0)
    x = rng.normal(size=16000)
    spec = stft(AudioClip(x, 16000))
    back = istft(spec).samples
    L = interior_length(spec.num_frames)
    rt = np.linalg.norm(back[:L] - x[:L]) / np.linalg.norm(x[:L])
    c = spec.data
    nz = c != 0
    cr = np.max(np.abs(decompress_values(compress_values(c[nz])) - c[nz]) / np.abs(c[nz]))
    ex = compress_values(np.array([4 * np.exp(1j * np.pi / 3)]))[0]
    ok = rt < 1e-6 and cr < 1e-9 and abs(ex - 0.3 * np.exp(1j * np.pi / 3)) < 1e-15
    assert report(10, ok, f"STFT round-trip rel L2 {rt:.2e} (tol 1e-6); compression round-trip max rel {cr:.2e} (tol 1e-9)")


DESK_INI = Path(__file__).resolve().parents[1] / "demos" / "desk.ini"


@pytest.mark.slow
def test_criterion_09_desk_scale_learning(report, tmp_path):
    """make-synth-data, train and enhance through the command line, as a user would."""
    train_dir, held_dir, run = tmp_path / "train", tmp_path / "held", tmp_path / "run"
    t0 = time.perf_counter()
    assert main(["make-synth-data", str(train_dir), "--pairs", "100", "--seed", "0"]) == 0
    assert main(["make-synth-data", str(held_dir), "--pairs", "10", "--seed", "1"]) == 0
    assert main(["train", "--config", str(DESK_INI), "--data", str(train_dir), "--out", str(run)]) == 0
    losses = [r["loss"] for r in LossTrace.read(run / "loss_trace.csv")]
    reduction = 1 - np.mean(losses[-10:]) / np.mean(losses[:10])

    manifest = json.loads((held_dir / "manifest.json").read_text())
    imps = []
    for i, pair in enumerate(manifest["pairs"]):
        rep = tmp_path / f"held{i}.txt"
        assert main(["enhance", str(held_dir / pair["noisy"]), str(tmp_path / f"out{i}.wav"),
                     "--checkpoint", str(run / "model.ckpt"), "--mode", "db", "--buffer", "20",
                     "--reference", str(held_dir / pair["clean"]), "--report", str(rep)]) == 0
        fields = dict(line.split(": ", 1) for line in rep.read_text().splitlines())
        imps.append(float(fields["si_sdr_improvement_db"]))
    minutes = (time.perf_counter() - t0) / 60
    ok_a, ok_b = reduction >= 0.5, np.mean(imps) > 0
    detail = (f"(a) loss reduction {100 * reduction:.1f}% over {len(losses)} iterations (need >= 50%); "
              f"(b) mean held-out SI-SDR improvement {np.mean(imps):+.2f} dB (need > 0) "
              f"[{', '.join(f'{v:+.1f}' for v in imps)}]; {minutes:.1f} min")
    assert report(9, ok_a and ok_b and minutes <= 30, detail)
