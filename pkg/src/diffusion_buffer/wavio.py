"""PCM16 mono WAV reading and writing.

Only 16-bit PCM, one channel, at the expected sample rate is accepted; any
other format is rejected naming the offending header field.
"""
from __future__ import annotations

import struct

import numpy as np

from .spectral import AudioClip


class WavFormatError(ValueError):
    pass


def read_wav(path, expected_rate: int | None = 16000) -> AudioClip:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_wav(raw, expected_rate, name=str(path))


def parse_wav(raw: bytes, expected_rate: int | None = 16000, name: str = "<bytes>") -> AudioClip:
    if len(raw) < 12:
        raise WavFormatError(f"{name}: truncated RIFF header at byte offset {len(raw)}")
    riff, _size, wave = struct.unpack_from("<4sI4s", raw, 0)
    if riff != b"RIFF":
        raise WavFormatError(f"{name}: field 'ChunkID' is {riff!r}, expected b'RIFF'")
    if wave != b"WAVE":
        raise WavFormatError(f"{name}: field 'Format' is {wave!r}, expected b'WAVE'")
    pos = 12
    fmt = None
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise WavFormatError(f"{name}: truncated chunk header at byte offset {pos}")
        cid, csize = struct.unpack_from("<4sI", raw, pos)
        body = pos + 8
        if cid == b"fmt ":
            if body + 16 > len(raw):
                raise WavFormatError(f"{name}: truncated fmt chunk at byte offset {len(raw)}")
            fmt = struct.unpack_from("<HHIIHH", raw, body)
            tag, channels, rate, _byte_rate, _align, bits = fmt
            if tag != 1:
                raise WavFormatError(f"{name}: field 'AudioFormat' is {tag}, expected 1 (PCM)")
            if channels != 1:
                raise WavFormatError(f"{name}: field 'NumChannels' is {channels}, expected 1")
            if bits != 16:
                raise WavFormatError(f"{name}: field 'BitsPerSample' is {bits}, expected 16")
            if expected_rate is not None and rate != expected_rate:
                raise WavFormatError(f"{name}: field 'SampleRate' is {rate}, expected {expected_rate}")
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError(f"{name}: data chunk at byte offset {pos} precedes fmt chunk")
            end = body + csize
            if end > len(raw):
                raise WavFormatError(
                    f"{name}: truncated data chunk: declared {csize} bytes from byte offset {body}, "
                    f"file ends at byte offset {len(raw)}"
                )
            if csize % 2:
                raise WavFormatError(f"{name}: odd data size {csize} at byte offset {pos + 4}")
            pcm = np.frombuffer(raw[body:end], dtype="<i2")
            return AudioClip(pcm.astype(np.float64) / 32768.0, fmt[2])
        pos = body + csize + (csize & 1)
    raise WavFormatError(f"{name}: no data chunk found before byte offset {len(raw)}")


def to_pcm16(samples) -> bytes:
    x = np.asarray(samples, dtype=np.float64)
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    return q.tobytes()


def write_wav(path, clip: AudioClip):
    data = to_pcm16(clip.samples)
    rate = clip.sample_rate
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(data),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)
