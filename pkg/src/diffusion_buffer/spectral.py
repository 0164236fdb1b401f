"""STFT analysis/synthesis and magnitude compression.

Frames are aligned causally: the signal is implicitly prefixed with
``window_len - hop`` zeros, so frame ``k`` (0-based) spans padded samples
``[k*hop, k*hop + window_len)`` and is complete as soon as original sample
``(k+1)*hop - 1`` has arrived.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip expects mono (1-D) samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. Defaults give F = 256 bins and a 16 ms hop at 16 kHz."""

    window_len: int = 510
    hop: int = 256
    fft_len: int = 510
    sample_rate: int = 16000
    compress_beta: float = 0.15
    compress_alpha: float = 0.5

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len:
            raise ValueError(f"need 0 < hop <= window_len, got hop={self.hop}")
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")
        if self.compress_beta <= 0:
            raise ValueError("compress_beta must be > 0")
        if not 0 < self.compress_alpha <= 1:
            raise ValueError("compress_alpha must lie in (0, 1]")

    @property
    def num_freqs(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    @property
    def hop_ms(self) -> float:
        return 1e3 * self.hop / self.sample_rate

    @property
    def window(self) -> np.ndarray:
        # periodic Hann
        return get_window("hann", self.window_len, fftbins=True)


@dataclass
class ComplexSpectrogram:
    data: np.ndarray
    compressed: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or 0 in data.shape:
            raise ValueError(f"spectrogram must be a nonempty F x K grid, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("spectrogram coefficients must be finite")
        self.data = data.astype(np.complex128, copy=False)

    @property
    def num_freqs(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


def num_frames_for(num_samples: int, cfg: StftConfig) -> int:
    return num_samples // cfg.hop


def frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Return the (K, window_len) matrix of causally aligned analysis frames."""
    pad = cfg.window_len - cfg.hop
    padded = np.concatenate([np.zeros(pad), samples])
    K = num_frames_for(len(samples), cfg)
    if K == 0:
        return np.zeros((0, cfg.window_len))
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.window_len)[:: cfg.hop]
    return frames[:K]


def stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Forward STFT of ``clip``; returns an uncompressed F x K spectrogram.

    Trailing samples that do not complete a frame are dropped.
    """
    if len(clip) == 0:
        raise ValueError("empty signal")
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample rate {clip.sample_rate} does not match config {cfg.sample_rate}")
    frames = frame_signal(clip.samples, cfg)
    if frames.shape[0] == 0:
        raise ValueError(f"signal shorter than one hop ({cfg.hop} samples)")
    spec = np.fft.rfft(frames * cfg.window, n=cfg.fft_len, axis=-1)
    return ComplexSpectrogram(spec.T.copy(), compressed=False)


def window_sumsquare(num_frames: int, cfg: StftConfig) -> np.ndarray:
    """Sum of squared shifted windows, in padded sample coordinates."""
    w2 = cfg.window**2
    total = np.zeros((num_frames - 1) * cfg.hop + cfg.window_len)
    for k in range(num_frames):
        total[k * cfg.hop : k * cfg.hop + cfg.window_len] += w2
    return total


def istft(spec: ComplexSpectrogram, cfg: StftConfig = StftConfig(), wss_floor: float = 1e-2) -> AudioClip:
    """Least-squares weighted overlap-add inverse of :func:`stft`.

    Returns ``K * hop`` samples aligned with the original clip. The final
    ``window_len - hop`` samples are only seen by the decaying tail of the
    last window; the normalizer is floored at ``wss_floor`` times its peak
    there so that spectral errors are not amplified without bound.
    """
    if spec.compressed:
        raise ValueError("decompress first")
    if spec.num_freqs != cfg.num_freqs:
        raise ValueError(f"expected {cfg.num_freqs} frequency bins, got {spec.num_freqs}")
    K = spec.num_frames
    frames = np.fft.irfft(spec.data.T, n=cfg.fft_len, axis=-1)[:, : cfg.window_len]
    frames = frames * cfg.window
    out = np.zeros((K - 1) * cfg.hop + cfg.window_len)
    for k in range(K):
        out[k * cfg.hop : k * cfg.hop + cfg.window_len] += frames[k]
    wss = window_sumsquare(K, cfg)
    out /= np.maximum(wss, wss_floor * wss.max())
    pad = cfg.window_len - cfg.hop
    return AudioClip(out[pad : pad + K * cfg.hop], cfg.sample_rate)


def interior_length(num_frames: int, cfg: StftConfig = StftConfig()) -> int:
    """Number of leading output samples of :func:`istft` covered by full window overlap."""
    return max(0, num_frames * cfg.hop - (cfg.window_len - cfg.hop))


def compress(spec: ComplexSpectrogram, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Apply ``beta * |v|**alpha * exp(i*angle(v))`` elementwise."""
    if spec.compressed:
        raise ValueError("spectrogram is already compressed")
    return ComplexSpectrogram(
        compress_values(spec.data, cfg.compress_beta, cfg.compress_alpha), compressed=True
    )


def decompress(spec: ComplexSpectrogram, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    if not spec.compressed:
        raise ValueError("spectrogram is not compressed")
    return ComplexSpectrogram(
        decompress_values(spec.data, cfg.compress_beta, cfg.compress_alpha), compressed=False
    )


def compress_values(v, beta=0.15, alpha=0.5):
    v = np.asarray(v, dtype=np.complex128)
    mag = np.abs(v)
    # multiplying by a real positive factor leaves the phase untouched
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = beta * mag[nz] ** (alpha - 1.0)
    return v * scale


def decompress_values(v, beta=0.15, alpha=0.5):
    v = np.asarray(v, dtype=np.complex128)
    mag = np.abs(v)
    scale = np.zeros_like(mag)
    nz = mag > 0
    target = (mag[nz] / beta) ** (1.0 / alpha)
    scale[nz] = target / mag[nz]
    return v * scale


def analysis(clip: AudioClip, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Waveform to compressed spectrogram (the domain the diffusion runs in)."""
    return compress(stft(clip, cfg), cfg)


def synthesis(spec: ComplexSpectrogram, cfg: StftConfig = StftConfig()) -> AudioClip:
    """Compressed spectrogram back to a waveform."""
    if spec.compressed:
        spec = decompress(spec, cfg)
    return istft(spec, cfg)
