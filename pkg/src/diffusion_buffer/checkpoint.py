"""Self-describing checkpoint container.

Layout::

    b"DBUFCKPT"                     8-byte magic
    uint32 (little-endian)          header length in bytes
    header                          UTF-8 JSON
    payload                         little-endian float32 tensors, back to back

The header records the format version, every configuration needed to rebuild
and validate the model (net, SDE, STFT, inference grid, window length K) and a
tensor index of ``{"name", "shape", "offset"}`` entries (offset in bytes from
the start of the payload). Tensor names are grouped by prefix: ``params/``,
``ema/``, ``adam_m/``, ``adam_v/``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch

from .dbuffer import TimeGrid
from .score import NetConfig, ScoreNet
from .sde import SdeParams
from .spectral import StftConfig

MAGIC = b"DBUFCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    def __init__(self, diffs: dict):
        self.diffs = diffs
        lines = [f"  {k}: checkpoint={a!r} requested={b!r}" for k, (a, b) in sorted(diffs.items())]
        super().__init__("checkpoint incompatible with requested configuration:\n" + "\n".join(lines))


@dataclass
class Checkpoint:
    header: dict
    tensors: dict

    @property
    def net_config(self) -> NetConfig:
        return NetConfig(**self.header["net"])

    @property
    def sde(self) -> SdeParams:
        return SdeParams(**self.header["sde"])

    @property
    def stft(self) -> StftConfig:
        return StftConfig(**self.header["stft"])

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(np.asarray(self.header["grid"]))

    @property
    def K(self) -> int:
        return int(self.header["K"])

    def group(self, prefix: str) -> dict:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def build_net(self, use_ema: bool = True) -> ScoreNet:
        net = ScoreNet(self.net_config, self.sde)
        weights = self.group("ema") if use_ema and self.group("ema") else self.group("params")
        load_weights(net, weights)
        return net.eval()


def load_weights(net: torch.nn.Module, weights: dict):
    own = dict(net.named_parameters())
    missing = set(own) - set(weights)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    with torch.no_grad():
        for name, p in own.items():
            arr = np.asarray(weights[name])
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"parameter {name}: shape {arr.shape} != {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr.astype(np.float32)).to(p.dtype))


def _named(net: torch.nn.Module) -> dict:
    return {k: p.detach().cpu().numpy() for k, p in net.named_parameters()}


def save_checkpoint(path, net: ScoreNet, grid: TimeGrid, K: int, stft: StftConfig = StftConfig(),
                    ema=None, adam=None, extra: dict | None = None):
    tensors = {f"params/{k}": v for k, v in _named(net).items()}
    if ema is not None:
        tensors.update({f"ema/{k}": v.detach().cpu().numpy() for k, v in ema.shadow.items()})
    header = {
        "format_version": FORMAT_VERSION,
        "net": net.cfg.to_dict(),
        "sde": net.sde.to_dict(),
        "stft": asdict(stft),
        "grid": [float(t) for t in grid.steps],
        "K": int(K),
        "extra": extra or {},
    }
    if adam is not None:
        for k, m in adam.moments.items():
            tensors[f"adam_m/{k}"] = m.m
            tensors[f"adam_v/{k}"] = m.v
        header["adam"] = {"lr": adam.lr, "steps": {k: m.step for k, m in adam.moments.items()}}
    index, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header["tensors"] = index
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {header.get('format_version')}")
    payload = memoryview(raw)[12 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(payload[start:start + 4 * count], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float32)
    return Checkpoint(header=header, tensors=tensors)


def check_compatible(ckpt: Checkpoint, sde: SdeParams | None = None, grid: TimeGrid | None = None,
                     K: int | None = None, stft: StftConfig | None = None):
    """Raise :class:`IncompatibleCheckpoint` listing every mismatching field."""
    diffs = {}
    if sde is not None:
        for k, v in sde.to_dict().items():
            if ckpt.header["sde"].get(k) != v:
                diffs[f"sde.{k}"] = (ckpt.header["sde"].get(k), v)
    if stft is not None:
        for k, v in asdict(stft).items():
            if ckpt.header["stft"].get(k) != v:
                diffs[f"stft.{k}"] = (ckpt.header["stft"].get(k), v)
    if grid is not None:
        theirs = ckpt.header["grid"]
        if len(theirs) != len(grid):
            diffs["grid.B"] = (len(theirs), len(grid))
        elif not np.allclose(theirs, grid.steps, rtol=0, atol=1e-12):
            diffs["grid.steps"] = (theirs, [float(t) for t in grid.steps])
    if K is not None and ckpt.K != K:
        diffs["K"] = (ckpt.K, K)
    if diffs:
        raise IncompatibleCheckpoint(diffs)
