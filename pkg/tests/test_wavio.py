import struct

import numpy as np
import pytest

from diffusion_buffer.spectral import AudioClip
from diffusion_buffer.wavio import WavFormatError, parse_wav, read_wav, to_pcm16, write_wav


def _wav_bytes(samples=np.zeros(4), rate=16000, fmt_tag=1, channels=1, bits=16):
    data = to_pcm16(samples)
    return struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(data), b"WAVE", b"fmt ", 16, fmt_tag,
                       channels, rate, rate * 2, 2, bits, b"data", len(data)) + data


def test_roundtrip(tmp_path, rng):
    x = np.clip(0.3 * rng.normal(size=1600), -0.99, 0.99)
    path = tmp_path / "a.wav"
    write_wav(path, AudioClip(x, 16000))
    clip = read_wav(path)
    assert clip.sample_rate == 16000
    assert np.max(np.abs(clip.samples - x)) <= 0.5 / 32768 + 1e-12


def test_pcm_clipping():
    q = np.frombuffer(to_pcm16([1.5, -2.0, 0.0]), "<i2")
    assert list(q) == [32767, -32768, 0]


@pytest.mark.parametrize("kwargs,field", [
    ({"fmt_tag": 3}, "AudioFormat"),
    ({"channels": 2}, "NumChannels"),
    ({"bits": 24}, "BitsPerSample"),
    ({"rate": 48000}, "SampleRate"),
])
def test_format_errors_name_field(kwargs, field):
    with pytest.raises(WavFormatError, match=field):
        parse_wav(_wav_bytes(**kwargs))


def test_bad_magic():
    raw = bytearray(_wav_bytes())
    raw[:4] = b"RIFX"
    with pytest.raises(WavFormatError, match="ChunkID"):
        parse_wav(bytes(raw))
    raw = bytearray(_wav_bytes())
    raw[8:12] = b"AVI "
    with pytest.raises(WavFormatError, match="Format"):
        parse_wav(bytes(raw))


def test_truncated_names_byte_offset():
    raw = _wav_bytes(np.zeros(100))
    with pytest.raises(WavFormatError, match="byte offset 150"):
        parse_wav(raw[:150])
    with pytest.raises(WavFormatError, match="byte offset 6"):
        parse_wav(raw[:6])


def test_skips_unknown_chunks():
    raw = _wav_bytes(np.full(3, 0.5))
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    raw = raw[:36] + extra + raw[36:]
    clip = parse_wav(raw)
    assert np.allclose(clip.samples, 0.5)


def test_data_before_fmt():
    raw = b"RIFF" + struct.pack("<I", 12) + b"WAVE" + b"data" + struct.pack("<I", 0)
    with pytest.raises(WavFormatError, match="precedes fmt"):
        parse_wav(raw)
