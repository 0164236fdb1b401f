"""Score functions: an exact Gaussian oracle and a small trainable network.

Every score function follows one calling convention::

    score_fn(v, y, t_grid) -> array of shape (..., F, B)

where ``v`` and ``y`` are ``(..., F, K)`` complex grids and ``t_grid`` holds
the diffusion times of the last ``B = len(t_grid)`` frames. Frames before the
buffer are treated as clean (time 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .sde import SdeParams, mean_coeffs, sigma


# --------------------------------------------------------------------------
# analytic oracle


@dataclass(frozen=True)
class GaussianStats:
    """Per-bin law of X0 given Y: complex Gaussian with ``mean`` and ``var``."""

    mean: np.ndarray
    var: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.var) < 0):
            raise ValueError("posterior variance must be non-negative")


@dataclass(frozen=True)
class GaussianToy:
    """Toy problem ``y = x0 + n`` with ``x0 ~ CN(0, prior_var)``, ``n ~ CN(0, noise_var)``."""

    prior_var: float = 0.25
    noise_var: float = 0.1

    def __post_init__(self):
        if self.prior_var <= 0 or self.noise_var <= 0:
            raise ValueError("toy variances must be positive")

    @property
    def gain(self) -> float:
        return self.prior_var / (self.prior_var + self.noise_var)

    def posterior(self, y) -> GaussianStats:
        return GaussianStats(self.gain * np.asarray(y), self.gain * self.noise_var)

    def sample(self, rng: np.random.Generator, shape):
        from .sde import complex_normal

        x0 = math.sqrt(self.prior_var) * complex_normal(rng, shape)
        y = x0 + math.sqrt(self.noise_var) * complex_normal(rng, shape)
        return x0, y


def analytic_score(params: SdeParams, stats: GaussianStats, x, y, t_grid):
    """Exact score of the perturbed marginal when X0 | Y is Gaussian.

    With ``X0 ~ CN(m, v)`` the state at time ``t`` is ``CN(a m + b y, a^2 v + sigma^2)``,
    so the score is ``-(x - a m - b y) / (a^2 v + sigma^2)``. ``stats.mean``
    must broadcast against the last ``B`` frames.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    B = t_grid.shape[-1]
    xb = np.asarray(x)[..., -B:]
    yb = np.asarray(y)[..., -B:]
    a, b = mean_coeffs(params, t_grid)
    denom = a**2 * np.asarray(stats.var) + sigma(params, t_grid) ** 2
    if np.any(denom <= 0):
        raise ValueError("degenerate marginal: a^2 v + sigma^2 must be positive")
    return -(xb - a * stats.mean - b * yb) / denom


class AnalyticScore:
    """Callable oracle score for a :class:`GaussianToy` (posterior from ``y``)."""

    def __init__(self, params: SdeParams, toy: GaussianToy):
        self.params = params
        self.toy = toy

    def __call__(self, v, y, t_grid):
        B = np.shape(t_grid)[-1]
        stats = self.toy.posterior(np.asarray(y)[..., -B:])
        return analytic_score(self.params, stats, v, y, t_grid)


class CountingScore:
    """Wraps a score function and counts evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, v, y, t_grid):
        self.calls += 1
        return self.fn(v, y, t_grid)


# --------------------------------------------------------------------------
# network

PARAMETERIZATIONS = ("gaussian", "residual", "precond", "denoiser", "score")


@dataclass(frozen=True)
class NetConfig:
    """Small conv encoder-decoder over (frequency x frame).

    ``depth`` stages halve the frequency axis and double the channels; the
    frame axis keeps full resolution so any number of frames is accepted.
    ``depth = 0`` is a single linear conv layer.

    ``parameterization`` selects how the output head becomes a score:

    * ``"score"``: head / sigma_t
    * ``"denoiser"``: head is a clean estimate ``x0_hat``; the score is
      ``(a x0_hat + b y - v) / sigma_t^2``
    * ``"precond"``: as ``"denoiser"`` with
      ``x0_hat = c_skip (v - b y) + c_out head`` where ``c_skip`` and ``c_out``
      are the posterior gain and deviation under a ``CN(0, sigma_data^2)``
      prior. A zero head gives the exact score of that prior.
    * ``"residual"``: as ``"precond"`` with the prior centred on ``y``.
    * ``"gaussian"``: two extra output channels give a per-bin gain
      ``G = sigmoid(g)`` and variance ``sigma_data^2 exp(l)`` of a Gaussian
      posterior ``X0 ~ CN(G y, var)``; the head adds a preconditioned residual
      on top. A zero head gives the exact score of that posterior.
    """

    channels: int = 16
    depth: int = 2
    emb_features: int = 8
    parameterization: str = "gaussian"
    sigma_data: float = 0.1

    def __post_init__(self):
        if self.channels < 1 or self.depth < 0 or self.emb_features < 1:
            raise ValueError(f"invalid NetConfig {self}")
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")

    @property
    def receptive_half_width(self) -> int:
        """Frames on each side of an output frame that can influence it."""
        if self.depth == 0:
            return 1
        # in-conv + 2 convs per down stage + 1 per up stage + out-conv
        return 2 + 3 * self.depth

    def to_dict(self) -> dict:
        return asdict(self)


def time_features(tau: torch.Tensor, n: int) -> torch.Tensor:
    """Sinusoidal features of per-frame times, shape (..., K) -> (..., K, 2n + 1)."""
    freqs = torch.pi * 2.0 ** torch.arange(n, dtype=tau.dtype, device=tau.device)
    ang = tau[..., None] * freqs
    return torch.cat([tau[..., None], torch.sin(ang), torch.cos(ang)], dim=-1)


class ScoreNet(nn.Module):
    def __init__(self, cfg: NetConfig = NetConfig(), params: SdeParams | None = None):
        super().__init__()
        self.cfg = cfg
        self.sde = params if params is not None else SdeParams()
        C = cfg.channels
        self.out_channels = 4 if cfg.parameterization == "gaussian" else 2
        nfeat = 2 * cfg.emb_features + 1
        if cfg.depth == 0:
            self.out_conv = nn.Conv2d(4, self.out_channels, 3, padding=1)
            self.emb = nn.ModuleList([nn.Linear(nfeat, 4)])
            self.down = nn.ModuleList()
            self.up = nn.ModuleList()
            return
        chans = [C * 2**i for i in range(cfg.depth + 1)]
        self.in_conv = nn.Conv2d(4, C, 3, padding=1)
        self.down = nn.ModuleList(
            nn.ModuleList([
                nn.Conv2d(chans[i], chans[i + 1], (4, 3), stride=(2, 1), padding=1),
                nn.Conv2d(chans[i + 1], chans[i + 1], 3, padding=1),
            ])
            for i in range(cfg.depth)
        )
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(chans[i + 1], chans[i], (4, 3), stride=(2, 1), padding=1)
            for i in reversed(range(cfg.depth))
        )
        # one additive embedding per stage: input, each down stage, each up stage
        emb_dims = [C] + chans[1:] + [chans[i] for i in reversed(range(cfg.depth))]
        self.emb = nn.ModuleList(nn.Linear(nfeat, d) for d in emb_dims)
        self.out_conv = nn.Conv2d(C, self.out_channels, 3, padding=1)
        self.act = nn.SiLU()

    def _emb(self, i, feats):
        # (N, K, d) -> (N, d, 1, K), broadcast over frequency
        return self.emb[i](feats).permute(0, 2, 1)[:, :, None, :]

    def body(self, inp: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
        """Real-valued map (N, 4, F, K) -> (N, out_channels, F, K)."""
        feats = time_features(tau, self.cfg.emb_features)
        if self.cfg.depth == 0:
            return self.out_conv(inp + self._emb(0, feats))
        F = inp.shape[-2]
        mult = 2**self.cfg.depth
        pad = (-F) % mult
        if pad:
            inp = nn.functional.pad(inp, (0, 0, 0, pad))
        h = self.act(self.in_conv(inp) + self._emb(0, feats))
        skips = [h]
        for i, (down, conv) in enumerate(self.down):
            h = self.act(down(h) + self._emb(1 + i, feats))
            h = self.act(conv(h))
            skips.append(h)
        skips.pop()
        for i, up in enumerate(self.up):
            h = self.act(up(h) + skips.pop() + self._emb(1 + self.cfg.depth + i, feats))
        out = self.out_conv(h)
        return out[..., :F, :]

    def forward(self, v: torch.Tensor, y: torch.Tensor, t_grid: torch.Tensor) -> torch.Tensor:
        """Complex score of the last ``B`` frames.

        ``v``, ``y``: complex (N, F, K); ``t_grid``: real (B,) or (N, B).
        Returns complex (N, F, B).
        """
        if v.shape != y.shape or v.dim() != 3:
            raise ValueError(f"expected matching (N, F, K) inputs, got {tuple(v.shape)}, {tuple(y.shape)}")
        N, F, K = v.shape
        rdtype = v.real.dtype
        t_grid = torch.as_tensor(t_grid, dtype=rdtype)
        if t_grid.dim() == 1:
            t_grid = t_grid.expand(N, -1)
        B = t_grid.shape[-1]
        if not 1 <= B <= K or t_grid.shape[0] != N:
            raise ValueError(f"t_grid of shape {tuple(t_grid.shape)} incompatible with K={K}, N={N}")
        tau = torch.cat([torch.zeros(N, K - B, dtype=rdtype), t_grid], dim=1)
        inp = torch.stack([v.real, v.imag, y.real, y.imag], dim=1)
        raw = self.body(inp, tau)[..., -B:]
        head = torch.complex(raw[:, 0], raw[:, 1])

        # float32 rounding can nudge t_rev past the admissible range
        tnp = np.clip(t_grid.detach().cpu().numpy().astype(np.float64), 0.0, self.sde.t_rev)
        a, b = mean_coeffs(self.sde, tnp)
        sig = sigma(self.sde, tnp)
        a, b, sig = (torch.as_tensor(q, dtype=rdtype)[:, None, :] for q in (a, b, sig))
        if self.cfg.parameterization == "score":
            return head / sig
        vb, yb = v[..., -B:], y[..., -B:]
        if self.cfg.parameterization == "precond":
            sd2 = self.cfg.sigma_data**2
            denom = a**2 * sd2 + sig**2
            u = vb - b * yb
            head = (a * sd2 / denom) * u + (sig * self.cfg.sigma_data / torch.sqrt(denom)) * head
        elif self.cfg.parameterization == "gaussian":
            gain = torch.sigmoid(raw[:, 2])
            # bounded so a runaway logit cannot produce inf/0 variances
            var = self.cfg.sigma_data**2 * torch.exp(torch.clamp(raw[:, 3], -12.0, 6.0))
            denom = a**2 * var + sig**2
            m = gain * yb
            u = vb - a * m - b * yb
            head = m + (a * var / denom) * u + (sig * torch.sqrt(var / denom)) * head
        elif self.cfg.parameterization == "residual":
            sd2 = self.cfg.sigma_data**2
            denom = a**2 * sd2 + sig**2
            u = vb - (a + b) * yb
            head = yb + (a * sd2 / denom) * u + (sig * self.cfg.sigma_data / torch.sqrt(denom)) * head
        return (a * head + b * yb - vb) / sig**2

    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def zero_output_layer(self):
        with torch.no_grad():
            self.out_conv.weight.zero_()
            self.out_conv.bias.zero_()


def _to_torch(a, dtype):
    ctype = torch.complex64 if dtype == torch.float32 else torch.complex128
    return torch.as_tensor(np.array(a), dtype=ctype)


def _batched(v, y):
    v = np.asarray(v)
    y = np.asarray(y)
    single = v.ndim == 2
    if single:
        v, y = v[None], y[None]
    return v, y, single


def net_forward(net: ScoreNet, v, y, t_grid) -> np.ndarray:
    """Evaluate ``net`` on numpy complex grids; returns complex (.., F, B)."""
    dtype = next(net.parameters()).dtype
    v, y, single = _batched(v, y)
    with torch.no_grad():
        out = net(_to_torch(v, dtype), _to_torch(y, dtype), torch.as_tensor(np.array(t_grid), dtype=dtype))
    out = out.numpy().astype(np.complex128)
    return out[0] if single else out


def net_backward(net: ScoreNet, v, y, t_grid, cotangent) -> dict[str, np.ndarray]:
    """Gradient of ``sum(Re(conj(cotangent) * net(v, y, t)))`` w.r.t. every parameter."""
    dtype = next(net.parameters()).dtype
    v, y, single = _batched(v, y)
    cot = np.asarray(cotangent)
    if single:
        cot = cot[None]
    net.zero_grad(set_to_none=True)
    out = net(_to_torch(v, dtype), _to_torch(y, dtype), torch.as_tensor(np.array(t_grid), dtype=dtype))
    if tuple(out.shape) != cot.shape:
        raise ValueError(f"cotangent shape {cot.shape} != output shape {tuple(out.shape)}")
    c = _to_torch(cot, dtype)
    (out.real * c.real + out.imag * c.imag).sum().backward()
    grads = {}
    for name, p in net.named_parameters():
        g = p.grad
        grads[name] = np.zeros(tuple(p.shape)) if g is None else g.detach().numpy().astype(np.float64)
    return grads


class LearnedScore:
    """Numpy-facing score function backed by a :class:`ScoreNet`."""

    def __init__(self, net: ScoreNet):
        self.net = net.eval()

    @property
    def params(self) -> SdeParams:
        return self.net.sde

    def __call__(self, v, y, t_grid):
        return net_forward(self.net, v, y, t_grid)


class OracleWienerScore:
    """Exact score for a per-bin Gaussian model built from a known clean/noisy pair.

    Each bin gets prior variance ``|X|^2`` and noise variance ``|Y - X|^2``
    (floored), i.e. the ideal Wiener posterior. In ``"stream"`` mode the call
    counter tracks which global frame is newest in the window, so the object
    must be fed exactly one call per incoming frame; in ``"utterance"`` mode
    the window is the whole spectrogram.
    """

    def __init__(self, params: SdeParams, clean, noisy, mode: str = "stream", noise_floor: float = 1e-10):
        clean = np.asarray(getattr(clean, "data", clean) if not isinstance(clean, np.ndarray) else clean)
        noisy = np.asarray(getattr(noisy, "data", noisy) if not isinstance(noisy, np.ndarray) else noisy)
        if clean.shape != noisy.shape:
            raise ValueError("clean and noisy spectrograms must match")
        if mode not in ("stream", "utterance"):
            raise ValueError("mode must be 'stream' or 'utterance'")
        self.params = params
        self.mode = mode
        prior = np.abs(clean) ** 2
        noise = np.maximum(np.abs(noisy - clean) ** 2, noise_floor)
        self.gain = prior / (prior + noise)
        self.post_var = self.gain * noise
        self.cursor = 0

    def _cols(self, B):
        M = self.gain.shape[1]
        idx = np.arange(self.cursor - B + 1, self.cursor + 1)
        valid = (idx >= 0) & (idx < M)
        safe = np.clip(idx, 0, M - 1)
        gain = np.where(valid, self.gain[:, safe], 0.0)
        var = np.where(valid, self.post_var[:, safe], 0.0)
        return gain, var

    def __call__(self, v, y, t_grid):
        B = np.shape(t_grid)[-1]
        if self.mode == "utterance":
            gain, var = self.gain[:, -B:], self.post_var[:, -B:]
        else:
            gain, var = self._cols(B)
            self.cursor += 1
        yb = np.asarray(y)[..., -B:]
        return analytic_score(self.params, GaussianStats(gain * yb, var), v, y, t_grid)
