"""The diffusion buffer: perturbed training inputs and the online state machine.

Index convention: a window holds ``K`` frames (0-based columns ``0..K-1``);
the buffer is its last ``B`` columns. Buffer slot ``j = 1..B`` lives in column
``K - B + j - 1`` and sits at diffusion time ``t_j``; columns before the
buffer are clean (time 0). New frames enter at slot ``B`` (time ``t_B``) and
leave the buffer after ``B`` reverse steps.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .sde import SdeParams, complex_normal, reverse_step, sample_state, sigma
from .spectral import ComplexSpectrogram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float64).reshape(-1)
        if steps.size == 0:
            raise ValueError("time grid must be nonempty")
        if steps[0] <= 0 or np.any(np.diff(steps) <= 0):
            raise ValueError(f"time grid must be positive and strictly ascending: {steps}")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return self.steps.size

    @property
    def B(self) -> int:
        return self.steps.size

    def check(self, params: SdeParams):
        if self.steps[-1] > params.t_rev * (1 + 1e-12):
            raise ValueError(f"grid exceeds t_rev={params.t_rev}")
        return self

    def previous(self) -> np.ndarray:
        """Targets of one reverse step per slot: ``(0, t_1, ..., t_{B-1})``."""
        return np.concatenate([[0.0], self.steps[:-1]])


def linear_grid(params: SdeParams, B: int) -> TimeGrid:
    """Uniform grid from ``t_eps`` to ``t_rev``; a single slot sits at ``t_rev``."""
    if B < 1:
        raise ValueError("buffer length must be >= 1")
    if B == 1:
        return TimeGrid(np.array([params.t_rev]))
    return TimeGrid(np.linspace(params.t_eps, params.t_rev, B))


def sample_training_grid(B: int, t_eps: float, t_rev: float, rng: np.random.Generator) -> TimeGrid:
    """Random ascending grid with ``t_1 = t_eps``, the rest i.i.d. uniform on (t_eps, t_rev], sorted."""
    if B < 1:
        raise ValueError("buffer length must be >= 1")
    if not 0 < t_eps < t_rev:
        raise ValueError("need 0 < t_eps < t_rev")
    # 1 - U with U in [0, 1) lands in (0, 1]
    u = t_eps + (t_rev - t_eps) * (1.0 - rng.random(B - 1))
    steps = np.concatenate([[t_eps], np.sort(u)])
    # ties have probability zero but would break strict ordering
    if np.any(np.diff(steps) <= 0):
        return sample_training_grid(B, t_eps, t_rev, rng)
    return TimeGrid(steps)


@dataclass
class TrainExample:
    v: np.ndarray
    y: np.ndarray
    x0: np.ndarray
    z: np.ndarray
    sigmas: np.ndarray
    grid: TimeGrid


def build_perturbed_input(params: SdeParams, x0, y, grid: TimeGrid, rng: np.random.Generator) -> TrainExample:
    """Clean prefix from ``x0``, buffer columns drawn from the perturbation kernel."""
    x0 = np.asarray(x0, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if x0.shape != y.shape or x0.ndim != 2:
        raise ValueError(f"x0 and y must be matching F x K grids, got {x0.shape}, {y.shape}")
    F, K = x0.shape
    B = len(grid)
    if B > K:
        raise ValueError(f"buffer length B={B} exceeds window K={K}")
    grid.check(params)
    z = complex_normal(rng, (F, B))
    v = x0.copy()
    v[:, K - B:] = sample_state(params, x0[:, K - B:], y[:, K - B:], grid.steps, rng, z=z)
    sigmas = np.broadcast_to(sigma(params, grid.steps), (F, B)).copy()
    return TrainExample(v=v, y=y, x0=x0, z=z, sigmas=sigmas, grid=grid)


@dataclass
class TrainBatch:
    v: np.ndarray
    y: np.ndarray
    x0: np.ndarray
    z: np.ndarray
    sigmas: np.ndarray
    grids: np.ndarray
    crop_starts: np.ndarray

    def __len__(self):
        return self.v.shape[0]


def pad_and_crop(spec: np.ndarray, K: int, start: int) -> np.ndarray:
    F, L = spec.shape
    padded = np.concatenate([np.zeros((F, K - 1), dtype=spec.dtype), spec], axis=1)
    return padded[:, start:start + K]


def make_training_batch(pairs, K: int, B: int, params: SdeParams, rng: np.random.Generator,
                        grid_sampler=None) -> TrainBatch:
    """Build one batch from ``(clean, noisy)`` compressed spectrogram pairs.

    Each pair is left-padded with ``K - 1`` zero frames, cropped to ``K``
    frames at a uniformly drawn start and perturbed on a freshly drawn grid.
    """
    if grid_sampler is None:
        def grid_sampler(rng):
            return sample_training_grid(B, params.t_eps, params.t_rev, rng)
    examples, starts = [], []
    for clean, noisy in pairs:
        clean = clean.data if isinstance(clean, ComplexSpectrogram) else np.asarray(clean)
        noisy = noisy.data if isinstance(noisy, ComplexSpectrogram) else np.asarray(noisy)
        if clean.shape != noisy.shape:
            raise ValueError(f"clean/noisy shape mismatch {clean.shape} vs {noisy.shape}")
        L = clean.shape[1]
        if L < 1:
            warnings.warn("skipping utterance shorter than one frame")
            continue
        start = int(rng.integers(0, L))
        grid = grid_sampler(rng)
        ex = build_perturbed_input(params, pad_and_crop(clean, K, start), pad_and_crop(noisy, K, start), grid, rng)
        examples.append(ex)
        starts.append(start)
    if not examples:
        raise ValueError("no usable utterances in batch")
    return TrainBatch(
        v=np.stack([e.v for e in examples]),
        y=np.stack([e.y for e in examples]),
        x0=np.stack([e.x0 for e in examples]),
        z=np.stack([e.z for e in examples]),
        sigmas=np.stack([e.sigmas for e in examples]),
        grids=np.stack([e.grid.steps for e in examples]),
        crop_starts=np.array(starts),
    )


# --------------------------------------------------------------------------
# online inference


@dataclass
class BufferState:
    v: np.ndarray
    y_c: np.ndarray
    grid: TimeGrid
    frames_received: int = 0
    step_counts: np.ndarray = field(default=None)
    last_out_steps: int = -1

    @classmethod
    def cold(cls, F: int, K: int, grid: TimeGrid) -> "BufferState":
        if len(grid) > K:
            raise ValueError(f"buffer length B={len(grid)} exceeds window K={K}")
        return cls(
            v=np.zeros((F, K), dtype=np.complex128),
            y_c=np.zeros((F, K), dtype=np.complex128),
            grid=grid,
            step_counts=np.zeros(K, dtype=np.int64),
        )

    @property
    def K(self) -> int:
        return self.v.shape[1]

    @property
    def B(self) -> int:
        return len(self.grid)

    def snapshot(self) -> dict:
        return {
            "v": self.v.copy(),
            "y_c": self.y_c.copy(),
            "grid": self.grid.steps.copy(),
            "frames_received": self.frames_received,
            "step_counts": self.step_counts.copy(),
        }


def stream_step(state: BufferState, r, score_fn, params: SdeParams, rng: np.random.Generator):
    """Consume one noisy frame, take one reverse step on the buffer, emit one frame.

    Exactly one ``score_fn`` call. The emitted frame is the one that reached
    time 0 on the previous call (it now sits just before the buffer), so the
    output lags the input by ``B`` frames. Returns ``(state, out_frame)``;
    ``state`` is updated in place.
    """
    r = np.asarray(r, dtype=np.complex128).reshape(-1)
    F, K = state.v.shape
    B = state.B
    if r.shape[0] != F:
        raise ValueError(f"frame has {r.shape[0]} bins, state has {F}")
    if not np.all(np.isfinite(r)):
        raise ValueError("incoming frame is not finite")
    steps = state.grid.steps
    finished = state.v[:, K - B].copy()
    finished_count = state.step_counts[K - B]

    state.y_c = np.roll(state.y_c, -1, axis=1)
    state.y_c[:, -1] = r
    state.v = np.roll(state.v, -1, axis=1)
    state.v[:, -1] = r + sigma(params, steps[-1]) * complex_normal(rng, F)
    state.step_counts = np.roll(state.step_counts, -1)
    state.step_counts[-1] = 0

    s = np.asarray(score_fn(state.v, state.y_c, steps))
    if s.shape != (F, B):
        raise ValueError(f"score output shape {s.shape} != {(F, B)}")
    noise = np.arange(B) > 0
    state.v[:, K - B:] = reverse_step(
        params, s, state.v[:, K - B:], state.y_c[:, K - B:], steps, state.grid.previous(),
        add_noise=noise, z=complex_normal(rng, (F, B)),
    )
    state.step_counts[K - B:] += 1
    state.frames_received += 1
    state.last_out_steps = int(finished_count)
    return state, finished


class StreamError(RuntimeError):
    pass


def enhance_stream(source, score_fn, params: SdeParams, grid: TimeGrid, K: int,
                   rng: np.random.Generator, flush: bool = False, debug_log=None) -> ComplexSpectrogram:
    """Run :func:`stream_step` over every frame of ``source``.

    ``source`` is an ``F x M`` array/spectrogram or any iterable of length-F
    frames. Output column ``i`` holds the estimate of input frame ``i - B``;
    the first ``B`` columns are warm-up. With ``flush=True``, ``B`` trailing
    zero frames are fed so every input frame is emitted.
    """
    grid.check(params)
    compressed = True
    if isinstance(source, ComplexSpectrogram):
        compressed = source.compressed
        source = source.data
    if isinstance(source, np.ndarray):
        frames = iter(source.T)
    else:
        frames = iter(source)
    outputs = []
    state = None
    i = 0
    while True:
        try:
            r = next(frames)
        except StopIteration:
            break
        except Exception as exc:
            raise StreamError(f"frame source failed at stream position {i}") from exc
        r = np.asarray(r)
        if state is None:
            state = BufferState.cold(r.shape[0], K, grid)
        state, out = stream_step(state, r, score_fn, params, rng)
        outputs.append(out)
        if debug_log is not None:
            debug_log.append(state.snapshot())
        i += 1
    if state is None:
        raise ValueError("empty frame source")
    if flush:
        for _ in range(len(grid)):
            state, out = stream_step(state, np.zeros(state.v.shape[0]), score_fn, params, rng)
            outputs.append(out)
    return ComplexSpectrogram(np.stack(outputs, axis=1), compressed=compressed)


def algorithmic_latency_ms(B: int, hop_ms: float) -> float:
    return B * hop_ms
