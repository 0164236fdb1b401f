"""Linear forward SDEs used by the diffusion buffer and the utterance baseline.

Two drift/diffusion pairs are supported, both with ``g(t) = c * k**t``:

* ``ouve``: drift ``gamma * (y - x)`` (Ornstein-Uhlenbeck, variance exploding)
* ``bbed``: drift ``(y - x) / (1 - t)`` (Brownian bridge, exponential diffusion)

The perturbation kernel of either SDE is a circular complex Gaussian with mean
``a(t) * x0 + b(t) * y`` and standard deviation ``sigma(t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expi

KINDS = ("ouve", "bbed")


@dataclass(frozen=True)
class SdeParams:
    kind: str = "ouve"
    gamma: float = 1.5
    c: float = 0.01
    k_base: float = 10.0
    t_eps: float = 0.03
    t_rev: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.c <= 0 or self.k_base <= 0:
            raise ValueError("c and k_base must be positive")
        if not 0 < self.t_eps < self.t_rev:
            raise ValueError(f"need 0 < t_eps < t_rev, got t_eps={self.t_eps}, t_rev={self.t_rev}")
        if self.kind == "ouve" and self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.kind == "bbed" and self.t_rev >= 1.0:
            raise ValueError("bbed drift has a pole at t = 1; t_rev must be < 1")

    def to_dict(self) -> dict:
        return asdict(self)


OUVE_PAPER = SdeParams("ouve", gamma=1.5, c=0.01, k_base=10.0, t_eps=0.03, t_rev=1.0)
BBED_PAPER = SdeParams("bbed", gamma=0.0, c=0.08, k_base=2.6, t_eps=0.03, t_rev=0.8)

PRESETS = {"ouve-paper": OUVE_PAPER, "bbed-paper": BBED_PAPER}


def _check_time(params: SdeParams, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > params.t_rev * (1 + 1e-12)) or not np.all(np.isfinite(t)):
        raise ValueError(f"diffusion time outside [0, {params.t_rev}]: {t}")
    return t


def diffusion(params: SdeParams, t):
    """g(t) = c * k**t."""
    return params.c * np.power(params.k_base, t)


def drift(params: SdeParams, x, y, t):
    if params.kind == "ouve":
        return params.gamma * (y - x)
    return (y - x) / (1.0 - t)


def mean_coeffs(params: SdeParams, t):
    """Coefficients ``(a, b)`` with ``mean_t = a * x0 + b * y``."""
    t = _check_time(params, t)
    if params.kind == "ouve":
        a = np.exp(-params.gamma * t)
    else:
        a = 1.0 - t
    return a, 1.0 - a


def _ouve_var(params, t):
    rate = params.gamma + math.log(params.k_base)
    c2 = params.c**2
    if abs(rate) < 1e-12:
        return c2 * t * np.exp(-2 * params.gamma * t)
    return c2 * (np.power(params.k_base, 2 * t) - np.exp(-2 * params.gamma * t)) / (2 * rate)


def _bbed_var(params, t):
    # (1-t)^2 * int_0^t c^2 k^{2s} / (1-s)^2 ds, substituting u = 1 - s:
    # int e^{-lam u}/u^2 du = -e^{-lam u}/u - lam * Ei(-lam u)
    c2 = params.c**2
    lam = 2 * math.log(params.k_base)
    u = 1.0 - t
    if abs(lam) < 1e-12:
        return c2 * t * u
    def G(v):
        return -np.exp(-lam * v) / v - lam * expi(-lam * v)
    integral = params.k_base**2 * (G(1.0) - G(u))
    return c2 * u**2 * integral


def variance(params: SdeParams, t):
    t = _check_time(params, t)
    var = _ouve_var(params, t) if params.kind == "ouve" else _bbed_var(params, t)
    return np.maximum(var, 0.0)


def sigma(params: SdeParams, t):
    """Kernel standard deviation; zero at t = 0."""
    return np.sqrt(variance(params, t))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex standard normal (real and imaginary parts N(0, 1/2))."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def kernel_mean(params: SdeParams, x0, y, t):
    a, b = mean_coeffs(params, t)
    return a * x0 + b * y


def sample_state(params: SdeParams, x0, y, t, rng: np.random.Generator, z=None):
    """Draw ``X_t = mean_t(x0, y) + sigma_t * z``.

    ``t`` may be a scalar or an array broadcasting against the trailing
    (frame) axis. Pass ``z`` to reuse a specific noise draw.
    """
    x0 = np.asarray(x0)
    y = np.asarray(y)
    if x0.shape != y.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs y {y.shape}")
    if z is None:
        z = complex_normal(rng, x0.shape)
    return kernel_mean(params, x0, y, t) + sigma(params, t) * z


def reverse_step(params: SdeParams, score_value, x, y, t_from, t_to, rng=None,
                 add_noise=True, z=None):
    """One Euler-Maruyama step of the reverse SDE from ``t_from`` down to ``t_to``.

    ``t_from``, ``t_to`` and ``add_noise`` may be arrays over the trailing
    frame axis, which lets a whole diffusion buffer (each frame at its own
    time) advance in a single call. ``z`` is drawn from ``rng`` with the shape
    of ``x`` whenever it is not supplied, regardless of ``add_noise``.
    """
    t_from = _check_time(params, t_from)
    t_to = _check_time(params, t_to)
    if np.any(t_to > t_from):
        raise ValueError("reverse step requires t_to <= t_from")
    x = np.asarray(x)
    score_value = np.asarray(score_value)
    if score_value.shape != x.shape:
        raise ValueError(f"score shape {score_value.shape} != state shape {x.shape}")
    dt = t_from - t_to
    g = diffusion(params, t_from)
    out = x - (drift(params, x, y, t_from) - g**2 * score_value) * dt
    noise_mask = np.asarray(add_noise, dtype=bool)
    if z is None and (rng is not None):
        z = complex_normal(rng, x.shape)
    if np.any(noise_mask):
        if z is None:
            raise ValueError("stochastic step needs rng or z")
        out = out + np.where(noise_mask, g * np.sqrt(dt), 0.0) * z
    return out
