"""Denoising score matching with Adam and an EMA shadow of the weights."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from .dbuffer import make_training_batch
from .score import ScoreNet
from .sde import SdeParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    ema_decay: float = 0.999
    epochs: int = 250
    seed: int = 0
    K: int = 128
    B: int = 20
    grad_clip: float = 0.0
    # random windows drawn from every pair per epoch
    crops_per_pair: int = 1

    def __post_init__(self):
        if not 0 <= self.ema_decay < 1:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.crops_per_pair < 1:
            raise ValueError(f"crops_per_pair must be >= 1, got {self.crops_per_pair}")
        if not 1 <= self.B <= self.K:
            raise ValueError(f"need 1 <= B <= K, got B={self.B}, K={self.K}")

    def to_dict(self):
        return asdict(self)


def dsm_loss(score_out, z, sigmas):
    """Mean over all elements of ``|score_out + z / sigmas|^2``.

    Works on numpy arrays and torch tensors alike.
    """
    if score_out.shape != z.shape or z.shape != sigmas.shape:
        raise ValueError(f"shape mismatch: {tuple(score_out.shape)}, {tuple(z.shape)}, {tuple(sigmas.shape)}")
    if (sigmas <= 0).any():
        raise ValueError("sigmas must be strictly positive")
    err = score_out + z / sigmas
    return (err.real**2 + err.imag**2).mean()


# --------------------------------------------------------------------------
# optimizer pieces


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, theta):
        return cls(np.zeros_like(theta), np.zeros_like(theta))


def adam_step(theta, grad, moments: AdamMoments, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam; updates ``moments`` in place and returns the new parameters."""
    theta = np.asarray(theta)
    grad = np.asarray(grad)
    if theta.shape != grad.shape or moments.m.shape != theta.shape:
        raise ValueError("parameter, gradient and moment shapes must agree")
    moments.step += 1
    moments.m = beta1 * moments.m + (1 - beta1) * grad
    moments.v = beta2 * moments.v + (1 - beta2) * grad**2
    m_hat = moments.m / (1 - beta1**moments.step)
    v_hat = moments.v / (1 - beta2**moments.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Applies :func:`adam_step` to every parameter of a torch module."""

    def __init__(self, net: torch.nn.Module, lr: float):
        self.lr = lr
        self.moments = {k: AdamMoments.zeros_like(p.detach().numpy()) for k, p in net.named_parameters()}

    @torch.no_grad()
    def step(self, net: torch.nn.Module):
        for k, p in net.named_parameters():
            if p.grad is None:
                continue
            theta = p.detach().numpy()
            new = adam_step(theta, p.grad.numpy(), self.moments[k], self.lr)
            p.copy_(torch.from_numpy(np.asarray(new, dtype=theta.dtype)))

    @property
    def step_count(self) -> int:
        return max((m.step for m in self.moments.values()), default=0)


class EmaShadow:
    def __init__(self, net: torch.nn.Module, decay: float):
        self.decay = decay
        self.shadow = {k: p.detach().clone() for k, p in net.named_parameters()}

    @torch.no_grad()
    def update(self, net: torch.nn.Module):
        d = self.decay
        for k, p in net.named_parameters():
            self.shadow[k].mul_(d).add_(p.detach(), alpha=1 - d)

    @torch.no_grad()
    def copy_to(self, net: torch.nn.Module):
        for k, p in net.named_parameters():
            p.copy_(self.shadow[k])

    def state_dict(self):
        return {k: v.clone() for k, v in self.shadow.items()}


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainState:
    net: ScoreNet
    optimizer: Adam
    ema: EmaShadow
    rng: np.random.Generator
    iteration: int = 0
    epoch: int = 0
    trace: list = field(default_factory=list)

    @classmethod
    def create(cls, net: ScoreNet, cfg: TrainConfig):
        torch.manual_seed(cfg.seed)
        opt = Adam(net, cfg.lr)
        return cls(net=net, optimizer=opt, ema=EmaShadow(net, cfg.ema_decay),
                   rng=np.random.default_rng(cfg.seed))


class NonFiniteLoss(FloatingPointError):
    pass


def _batch_tensors(batch, dtype):
    ctype = torch.complex64 if dtype == torch.float32 else torch.complex128
    as_c = lambda a: torch.as_tensor(a, dtype=ctype)
    return (as_c(batch.v), as_c(batch.y), torch.as_tensor(batch.grids, dtype=dtype),
            as_c(batch.z), torch.as_tensor(batch.sigmas, dtype=dtype))


def batch_loss(net: ScoreNet, batch):
    """Differentiable loss of ``net`` on a :class:`TrainBatch`."""
    dtype = next(net.parameters()).dtype
    v, y, t, z, sig = _batch_tensors(batch, dtype)
    return dsm_loss(net(v, y, t), z, sig)


def train_step(state: TrainState, pairs, cfg: TrainConfig, params: SdeParams):
    batch = make_training_batch(pairs, cfg.K, cfg.B, params, state.rng)
    state.net.train()
    state.net.zero_grad(set_to_none=True)
    loss = batch_loss(state.net, batch)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"non-finite loss at iteration {state.iteration}: grids in "
            f"[{batch.grids.min():.4g}, {batch.grids.max():.4g}], sigma in "
            f"[{batch.sigmas.min():.4g}, {batch.sigmas.max():.4g}]"
        )
    loss.backward()
    grad_norm = math.sqrt(sum(float((p.grad**2).sum()) for p in state.net.parameters() if p.grad is not None))
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.net.parameters(), cfg.grad_clip)
    state.optimizer.step(state.net)
    state.ema.update(state.net)
    state.iteration += 1
    return float(loss.detach()), grad_norm


def train_epoch(state: TrainState, dataset, cfg: TrainConfig, params: SdeParams, trace_writer=None):
    """One shuffled pass over ``dataset`` (a sequence of (clean, noisy) pairs)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    order = state.rng.permutation(np.tile(np.arange(len(dataset)), cfg.crops_per_pair))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        pairs = [dataset[i] for i in order[start:start + cfg.batch_size]]
        t0 = time.perf_counter()
        loss, gnorm = train_step(state, pairs, cfg, params)
        row = {"iteration": state.iteration, "epoch": state.epoch, "loss": loss,
               "grad_norm": gnorm, "wall_time": time.perf_counter() - t0}
        state.trace.append(row)
        if trace_writer is not None:
            trace_writer.write(row)
        losses.append(loss)
    state.epoch += 1
    log.info("epoch %d: mean loss %.6g", state.epoch, float(np.mean(losses)))
    return state, losses


class LossTrace:
    """Append-only CSV of per-iteration training statistics."""

    FIELDS = ("iteration", "epoch", "loss", "grad_norm", "wall_time")

    def __init__(self, path):
        self.path = path
        import os

        new = not os.path.exists(path) or os.path.getsize(path) == 0
        self._fh = open(path, "a", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=self.FIELDS)
        if new:
            self._writer.writeheader()

    def write(self, row):
        self._writer.writerow({k: row[k] for k in self.FIELDS})
        self._fh.flush()

    def close(self):
        self._fh.close()

    @staticmethod
    def read(path):
        with open(path, newline="") as fh:
            return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
