"""Real-time harness: diffusion-buffer and utterance-based engines, RTF timing,
and the end-to-end WAV enhancement job."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .dbuffer import BufferState, TimeGrid, linear_grid, stream_step
from .metrics import seg_snr, si_sdr
from .score import CountingScore
from .sde import SdeParams, complex_normal, reverse_step, sigma
from .spectral import ComplexSpectrogram, StftConfig, analysis, interior_length, synthesis
from .wavio import read_wav, write_wav


def vanilla_grid(params: SdeParams, N: int) -> np.ndarray:
    """Descending times ``t_rev ... t_eps`` (``N`` points); the last step goes to 0."""
    if N < 1:
        raise ValueError("need at least one reverse step")
    if N == 1:
        return np.array([params.t_rev])
    return np.linspace(params.t_rev, params.t_eps, N)


def vanilla_enhance(y, score_fn, params: SdeParams, N: int, rng: np.random.Generator):
    """Utterance-based reverse diffusion over the whole spectrogram, ``N`` score calls.

    All frames share one diffusion time per step; the final step lands at 0
    without injected noise.
    """
    compressed = True
    if isinstance(y, ComplexSpectrogram):
        compressed = y.compressed
        y = y.data
    y = np.asarray(y, dtype=np.complex128)
    K = y.shape[-1]
    times = vanilla_grid(params, N)
    targets = np.concatenate([times[1:], [0.0]])
    x = y + sigma(params, times[0]) * complex_normal(rng, y.shape)
    for n, (t_from, t_to) in enumerate(zip(times, targets)):
        s = score_fn(x, y, np.full(K, t_from))
        x = reverse_step(params, s, x, y, t_from, t_to, add_noise=n < N - 1,
                         z=complex_normal(rng, y.shape))
    return ComplexSpectrogram(x, compressed=compressed)


# --------------------------------------------------------------------------
# engines: one ``step(frame) -> frame`` per hop


class DbEngine:
    """Diffusion-buffer streaming engine: one score call per hop."""

    mode = "db"

    def __init__(self, score_fn, params: SdeParams, grid: TimeGrid, K: int, F: int,
                 rng: np.random.Generator):
        self.score = CountingScore(score_fn)
        self.params = params
        self.grid = grid.check(params)
        self.state = BufferState.cold(F, K, grid)
        self.rng = rng

    @property
    def B(self) -> int:
        return len(self.grid)

    @property
    def score_calls(self) -> int:
        return self.score.calls

    def step(self, frame):
        self.state, out = stream_step(self.state, frame, self.score, self.params, self.rng)
        return out


class VanillaPerHopEngine:
    """What utterance-based diffusion would cost per hop: ``N`` score calls on
    the last ``K`` received frames, emitting the newest enhanced frame."""

    mode = "vanilla"

    def __init__(self, score_fn, params: SdeParams, N: int, K: int, F: int,
                 rng: np.random.Generator):
        self.score = CountingScore(score_fn)
        self.params = params
        self.N = N
        self.window = np.zeros((F, K), dtype=np.complex128)
        self.rng = rng

    B = 0

    @property
    def score_calls(self) -> int:
        return self.score.calls

    def step(self, frame):
        self.window = np.roll(self.window, -1, axis=1)
        self.window[:, -1] = frame
        out = vanilla_enhance(self.window, self.score, self.params, self.N, self.rng)
        return out.data[:, -1]


# --------------------------------------------------------------------------
# timing


@dataclass
class RtfReport:
    step_times_ms: list
    hop_ms: float
    B: int
    frames: int
    score_calls: int
    mode: str = "db"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.step_times_ms:
            raise ValueError("no timed steps")

    @property
    def mean_step_ms(self) -> float:
        return float(np.mean(self.step_times_ms))

    @property
    def median_step_ms(self) -> float:
        return float(statistics.median(self.step_times_ms))

    @property
    def rtf(self) -> float:
        return self.mean_step_ms / self.hop_ms

    @property
    def rtf_median(self) -> float:
        return self.median_step_ms / self.hop_ms

    @property
    def algorithmic_latency_ms(self) -> float:
        return self.B * self.hop_ms

    @property
    def io_latency_ms(self) -> float:
        return self.algorithmic_latency_ms + self.hop_ms + self.mean_step_ms

    def as_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "frames": self.frames,
            "score_calls": self.score_calls,
            "buffer_B": self.B,
            "hop_ms": self.hop_ms,
            "mean_step_ms": self.mean_step_ms,
            "median_step_ms": self.median_step_ms,
            "rtf": self.rtf,
            "rtf_median": self.rtf_median,
            "algorithmic_latency_ms": self.algorithmic_latency_ms,
            "io_latency_ms": self.io_latency_ms,
        }
        d.update(self.extra)
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time_ms"])
            for i, t in enumerate(self.step_times_ms):
                w.writerow([i, f"{t:.6f}"])


def measure_rtf(engine, source, warmup_steps: int = 10, hop_ms: float = 16.0, collect=None) -> RtfReport:
    """Time ``engine.step`` for every frame of ``source`` (F x M array or iterable).

    The first ``warmup_steps`` steps run but are excluded from the statistics.
    """
    frames = source.data.T if isinstance(source, ComplexSpectrogram) else (
        np.asarray(source).T if isinstance(source, np.ndarray) else list(source))
    if len(frames) <= warmup_steps:
        raise ValueError(f"need more than {warmup_steps} frames to measure, got {len(frames)}")
    times = []
    clock = time.perf_counter_ns
    for i, frame in enumerate(frames):
        t0 = clock()
        out = engine.step(frame)
        dt = (clock() - t0) / 1e6
        if collect is not None:
            collect.append(out)
        if i >= warmup_steps:
            times.append(dt)
    return RtfReport(step_times_ms=times, hop_ms=hop_ms, B=engine.B, frames=len(frames),
                     score_calls=engine.score_calls, mode=engine.mode)


# --------------------------------------------------------------------------
# end-to-end job


def _trim_pair(ref: np.ndarray, est: np.ndarray, length: int):
    n = min(len(ref), len(est), length)
    return ref[:n], est[:n]


def enhance_spectrogram(Y: ComplexSpectrogram, score_fn, params: SdeParams, mode: str = "db", *,
                        B: int = 20, N: int = 60, K: int = 128, rng=None, grid: TimeGrid | None = None,
                        hop_ms: float = 16.0, warmup_steps: int = 10):
    """Enhance a compressed spectrogram; returns ``(enhanced, RtfReport)``.

    In ``db`` mode the output is re-aligned (the ``B``-frame lag removed) by
    flushing ``B`` zero frames through the buffer.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    F, M = Y.data.shape
    if mode == "db":
        grid = grid if grid is not None else linear_grid(params, B)
        engine = DbEngine(score_fn, params, grid, K, F, rng)
        B = len(grid)
        source = np.concatenate([Y.data, np.zeros((F, B), dtype=np.complex128)], axis=1)
        outs = []
        report = measure_rtf(engine, source, warmup_steps=min(warmup_steps, source.shape[1] - 1),
                             hop_ms=hop_ms, collect=outs)
        report.frames = M
        report.score_calls = engine.score_calls
        report.extra["flush_frames"] = B
        enhanced = np.stack(outs, axis=1)[:, B:]
        return ComplexSpectrogram(enhanced, compressed=Y.compressed), report
    if mode == "vanilla":
        counter = CountingScore(score_fn)
        t0 = time.perf_counter_ns()
        out = vanilla_enhance(Y, counter, params, N, rng)
        total_ms = (time.perf_counter_ns() - t0) / 1e6
        report = RtfReport(step_times_ms=[total_ms / max(M, 1)], hop_ms=hop_ms, B=0, frames=M,
                           score_calls=counter.calls, mode="vanilla",
                           extra={"reverse_steps_N": N, "total_ms": total_ms,
                                  "ms_per_score_call": total_ms / counter.calls})
        return out, report
    raise ValueError(f"unknown mode {mode!r}; expected 'db' or 'vanilla'")


def run_enhancement_job(input_wav, out_wav, score_fn, params: SdeParams, mode: str = "db", *,
                        report_path=None, B: int = 20, N: int = 60, K: int = 128, seed: int = 0,
                        stft: StftConfig = StftConfig(), grid: TimeGrid | None = None,
                        reference_wav=None, timings_csv=None) -> RtfReport:
    """wav -> STFT -> compress -> enhance -> decompress -> iSTFT -> wav, plus a report."""
    noisy = read_wav(input_wav, expected_rate=stft.sample_rate)
    Y = analysis(noisy, stft)
    enhanced, report = enhance_spectrogram(Y, score_fn, params, mode, B=B, N=N, K=K,
                                           rng=np.random.default_rng(seed), grid=grid,
                                           hop_ms=stft.hop_ms)
    est = synthesis(enhanced, stft).samples
    out = np.zeros(len(noisy))
    n = min(len(out), len(est))
    out[:n] = est[:n]
    peak = np.max(np.abs(out)) if len(out) else 0.0
    if peak > 1.0:
        report.extra["clipped_peak"] = float(peak)
    write_wav(out_wav, type(noisy)(np.clip(out, -1.0, 32767 / 32768), noisy.sample_rate))
    report.extra["input_wav"] = str(input_wav)
    report.extra["output_wav"] = str(out_wav)
    if reference_wav is not None:
        ref = read_wav(reference_wav, expected_rate=stft.sample_rate).samples
        L = interior_length(Y.num_frames, stft)
        r_in, y_in = _trim_pair(ref, noisy.samples, L)
        r_out, e_out = _trim_pair(ref, est, L)
        report.extra.update({
            "si_sdr_in_db": si_sdr(r_in, y_in),
            "si_sdr_out_db": si_sdr(r_out, e_out),
            "seg_snr_in_db": seg_snr(r_in, y_in, stft.sample_rate),
            "seg_snr_out_db": seg_snr(r_out, e_out, stft.sample_rate),
        })
        report.extra["si_sdr_improvement_db"] = report.extra["si_sdr_out_db"] - report.extra["si_sdr_in_db"]
    if report_path is not None:
        with open(report_path, "w") as fh:
            fh.write(report.to_text())
    if timings_csv is not None:
        report.write_csv(timings_csv)
    return report
