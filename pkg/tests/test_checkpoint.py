import json
import struct

import numpy as np
import pytest
import torch

from diffusion_buffer.checkpoint import (MAGIC, CheckpointError, IncompatibleCheckpoint, check_compatible,
                                         load_checkpoint, save_checkpoint)
from diffusion_buffer.dbuffer import linear_grid
from diffusion_buffer.score import NetConfig, ScoreNet, net_forward
from diffusion_buffer.sde import BBED_PAPER, OUVE_PAPER, complex_normal
from diffusion_buffer.spectral import StftConfig
from diffusion_buffer.train import Adam, EmaShadow


def _saved(tmp_path, **kw):
    torch.manual_seed(0)
    net = ScoreNet(NetConfig(channels=4, depth=1), BBED_PAPER)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, linear_grid(BBED_PAPER, 5), 16, **kw)
    return net, path


def test_roundtrip_reproduces_outputs(tmp_path, rng):
    net, path = _saved(tmp_path)
    ck = load_checkpoint(path)
    assert ck.net_config == net.cfg
    assert ck.sde == BBED_PAPER
    assert ck.stft == StftConfig()
    assert np.array_equal(ck.grid.steps, linear_grid(BBED_PAPER, 5).steps)
    assert ck.K == 16
    v, y = 0.1 * complex_normal(rng, (16, 16)), 0.1 * complex_normal(rng, (16, 16))
    t = ck.grid.steps
    assert np.array_equal(net_forward(ck.build_net(use_ema=False), v, y, t), net_forward(net, v, y, t))


def test_layout_is_little_endian_float32(tmp_path):
    net, path = _saved(tmp_path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + hlen])
    assert header["format_version"] == 1
    assert {"net", "sde", "stft", "grid", "K", "tensors"} <= set(header)
    entry = header["tensors"][0]
    n = int(np.prod(entry["shape"]))
    arr = np.frombuffer(raw[12 + hlen + entry["offset"]:][:4 * n], "<f4")
    assert np.array_equal(arr, dict(net.named_parameters())[entry["name"][len("params/"):]].detach().numpy().ravel())


def test_ema_and_adam_groups(tmp_path):
    torch.manual_seed(0)
    net = ScoreNet(NetConfig(channels=4, depth=1), BBED_PAPER)
    ema = EmaShadow(net, 0.5)
    with torch.no_grad():
        for p in net.parameters():
            p.add_(1.0)
    opt = Adam(net, 1e-3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, linear_grid(BBED_PAPER, 5), 16, ema=ema, adam=opt, extra={"note": "x"})
    ck = load_checkpoint(path)
    assert set(ck.group("ema")) == set(ck.group("params")) == set(ck.group("adam_m"))
    built = ck.build_net(use_ema=True)
    for k, p in built.named_parameters():
        assert torch.equal(p, ema.shadow[k])
    assert ck.header["extra"] == {"note": "x"}


def test_corrupt_files(tmp_path):
    _, path = _saved(tmp_path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    bad.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="past end"):
        load_checkpoint(bad)


def test_compatibility_diff(tmp_path):
    _, path = _saved(tmp_path)
    ck = load_checkpoint(path)
    check_compatible(ck, sde=BBED_PAPER, grid=linear_grid(BBED_PAPER, 5), K=16, stft=StftConfig())
    with pytest.raises(IncompatibleCheckpoint) as info:
        check_compatible(ck, sde=OUVE_PAPER, grid=linear_grid(BBED_PAPER, 20), K=32)
    diffs = info.value.diffs
    assert "sde.kind" in diffs and "grid.B" in diffs and "K" in diffs
    assert "sde.kind" in str(info.value)
