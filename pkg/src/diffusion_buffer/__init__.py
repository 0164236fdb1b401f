"""Streaming score-based speech enhancement with a diffusion buffer.

The buffer holds the newest ``B`` spectrogram frames at ascending diffusion
times; every incoming frame costs one score evaluation and pushes the oldest
buffered frame out fully denoised, ``B`` hops later.
"""
from .dbuffer import (BufferState, TimeGrid, build_perturbed_input, enhance_stream, linear_grid,
                      make_training_batch, sample_training_grid, stream_step)
from .metrics import seg_snr, si_sdr
from .score import (AnalyticScore, CountingScore, GaussianStats, GaussianToy, LearnedScore, NetConfig,
                    ScoreNet, analytic_score)
from .sde import BBED_PAPER, OUVE_PAPER, PRESETS, SdeParams, mean_coeffs, reverse_step, sample_state, sigma
from .spectral import AudioClip, ComplexSpectrogram, StftConfig, analysis, compress, decompress, istft, stft, synthesis

__version__ = "0.1.0"

__all__ = [
    "AnalyticScore", "AudioClip", "BBED_PAPER", "BufferState", "ComplexSpectrogram", "CountingScore",
    "GaussianStats", "GaussianToy", "LearnedScore", "NetConfig", "OUVE_PAPER", "PRESETS", "ScoreNet",
    "SdeParams", "StftConfig", "TimeGrid", "analysis", "analytic_score", "build_perturbed_input",
    "compress", "decompress", "enhance_stream", "istft", "linear_grid", "make_training_batch",
    "mean_coeffs", "reverse_step", "sample_state", "sample_training_grid", "seg_snr", "si_sdr", "sigma",
    "stft", "stream_step", "synthesis",
]
