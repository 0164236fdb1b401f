"""Synthetic paired clean/noisy audio for desk-scale experiments.

Clean signals are harmonic tone complexes with a gliding fundamental and a
syllable-like amplitude envelope (with pauses); noise is AR(1)-colored
Gaussian noise scaled to a target SNR.
"""
from __future__ import annotations

import json
import os

import numpy as np
from scipy.signal import lfilter

from .spectral import AudioClip
from .wavio import write_wav

SNR_RANGE_DB = (0.0, 15.0)


def harmonic_complex(rng: np.random.Generator, num_samples: int, sample_rate: int = 16000,
                     peak: float = 0.3) -> np.ndarray:
    t = np.arange(num_samples) / sample_rate
    f0 = rng.uniform(100.0, 280.0)
    glide = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi))
    phase0 = 2 * np.pi * np.cumsum(f0 * glide) / sample_rate
    n_harm = int(min(4000.0 / f0, 20))
    tilt = rng.uniform(0.6, 1.4)
    sig = np.zeros(num_samples)
    for h in range(1, n_harm + 1):
        sig += h ** (-tilt) * np.sin(h * phase0 + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(2.0, 5.0)
    env = np.sin(2 * np.pi * rate * t / 2 + rng.uniform(0, np.pi)) ** 2
    # hard pauses between "syllables"
    env = np.clip((env - 0.2) / 0.8, 0.0, None) ** 1.5
    sig *= env
    m = np.max(np.abs(sig))
    return sig * (peak / m) if m > 0 else sig


def colored_noise(rng: np.random.Generator, num_samples: int) -> np.ndarray:
    rho = rng.uniform(0.0, 0.95)
    out = lfilter([1.0], [1.0, -rho], rng.standard_normal(num_samples))
    return out / np.std(out)


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    p_s = np.mean(clean**2)
    p_n = np.mean(noise**2)
    scale = np.sqrt(p_s / (p_n * 10 ** (snr_db / 10)))
    return clean + scale * noise


def measured_snr(clean, noisy) -> float:
    clean = np.asarray(getattr(clean, "samples", clean), dtype=np.float64)
    noisy = np.asarray(getattr(noisy, "samples", noisy), dtype=np.float64)
    noise = noisy - clean
    return float(10 * np.log10(np.sum(clean**2) / np.sum(noise**2)))


def make_pair(rng: np.random.Generator, duration: float = 2.0, sample_rate: int = 16000,
              snr_db: float | None = None):
    """Return ``(clean, noisy, snr_db)`` as AudioClips."""
    n = int(round(duration * sample_rate))
    if snr_db is None:
        snr_db = float(rng.uniform(*SNR_RANGE_DB))
    clean = harmonic_complex(rng, n, sample_rate)
    noisy = mix_at_snr(clean, colored_noise(rng, n), snr_db)
    peak = np.max(np.abs(noisy))
    if peak > 0.99:
        clean, noisy = clean * (0.99 / peak), noisy * (0.99 / peak)
    return AudioClip(clean, sample_rate), AudioClip(noisy, sample_rate), snr_db


def make_dataset(out_dir, num_pairs: int, seed: int = 0, duration: float = 2.0,
                 sample_rate: int = 16000, snr_db: float | None = None) -> dict:
    """Write ``num_pairs`` clean/noisy WAV pairs plus ``manifest.json`` to ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"directory not writable: {out_dir}")
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(num_pairs):
        clean, noisy, snr = make_pair(rng, duration, sample_rate, snr_db)
        names = {"clean": f"clean_{i:04d}.wav", "noisy": f"noisy_{i:04d}.wav"}
        write_wav(os.path.join(out_dir, names["clean"]), clean)
        write_wav(os.path.join(out_dir, names["noisy"]), noisy)
        entries.append({**names, "snr_db": snr})
    manifest = {"seed": seed, "sample_rate": sample_rate, "duration": duration, "pairs": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
