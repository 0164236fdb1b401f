import pytest

from diffusion_buffer.config import ConfigError, dump_config, parse_config
from diffusion_buffer.sde import BBED_PAPER, OUVE_PAPER


def test_presets_and_overrides():
    cfg = parse_config("[sde]\npreset = ouve-paper\n")
    assert cfg.sde == OUVE_PAPER
    cfg = parse_config("[sde]\npreset = bbed-paper\nc = 0.1\n[train]\nepochs = 3\nlr = 0.001\n")
    assert cfg.sde.c == 0.1 and cfg.sde.k_base == BBED_PAPER.k_base
    assert cfg.train.epochs == 3 and cfg.train.lr == 1e-3


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="train.epoch"):
        parse_config("[train]\nepoch = 3\n")
    with pytest.raises(ConfigError, match=r"\[model\]"):
        parse_config("[model]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown preset"):
        parse_config("[sde]\npreset = vp\n")


def test_bad_values():
    with pytest.raises(ConfigError, match=r"ema_decay.*\[0, 1\)"):
        parse_config("[train]\nema_decay = 1.5\n")
    with pytest.raises(ConfigError, match="lr"):
        parse_config("[train]\nlr = fast\n")


def test_roundtrip():
    text = ("[sde]\npreset = bbed-paper\n[net]\nchannels = 8\nparameterization = gaussian\n"
            "[train]\nepochs = 30\n[data]\ntrain_dir = d\n[output]\ndir = out\n")
    cfg = parse_config(text)
    again = parse_config(dump_config(cfg))
    assert again.sde == cfg.sde and again.net == cfg.net and again.train == cfg.train
    assert again.stft == cfg.stft and again.data == cfg.data and again.output == cfg.output
    assert dump_config(again) == dump_config(cfg)
