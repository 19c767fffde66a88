"""Mono WAV reader/writer: PCM 16-bit and IEEE float-32.

Hand-rolled RIFF parsing so the float-32 path is bit-exact on a round trip
(the stdlib ``wave`` module has no float support). Unknown chunks are skipped.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError
from .spectral import AudioBuffer

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def read_wav(path) -> AudioBuffer:
    """Load a mono PCM-16 or float-32 WAV file."""
    with open(path, "rb") as fh:
        riff, _size, wave_id = struct.unpack("<4sI4s", fh.read(12))
        if riff != b"RIFF" or wave_id != b"WAVE":
            raise ContractError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            header = fh.read(8)
            if len(header) < 8:
                break
            chunk_id, chunk_size = struct.unpack("<4sI", header)
            payload = fh.read(chunk_size)
            if chunk_size % 2:  # chunks are word-aligned
                fh.read(1)
            if chunk_id == b"fmt ":
                fmt = struct.unpack("<HHIIHH", payload[:16])
            elif chunk_id == b"data":
                data = payload
        if fmt is None or data is None:
            raise ContractError(f"{path}: missing fmt/data chunk")
        audio_format, channels, sample_rate, _brate, _align, bits = fmt
        if channels != 1:
            raise ContractError(f"{path}: only mono supported, got {channels} channels")
        if audio_format == _FMT_PCM and bits == 16:
            samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
        elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
            samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
        else:
            raise ContractError(f"{path}: unsupported format (format={audio_format}, bits={bits})")
        return AudioBuffer(samples=samples, sample_rate=sample_rate)


def write_wav(path, buf: AudioBuffer, encoding: str = "float32"):
    """Write a mono buffer as PCM-16 or float-32 WAV."""
    samples = np.asarray(buf.samples)
    if encoding == "float32":
        payload = samples.astype("<f4").tobytes()
        audio_format, bits = _FMT_IEEE_FLOAT, 32
    elif encoding == "pcm16":
        clipped = np.clip(samples, -1.0, 32767.0 / 32768.0)
        payload = (np.round(clipped * 32768.0).astype("<i2")).tobytes()
        audio_format, bits = _FMT_PCM, 16
    else:
        raise ContractError(f"unknown WAV encoding {encoding!r}")
    block_align = bits // 8
    byte_rate = buf.sample_rate * block_align
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE"))
        fh.write(struct.pack("<4sI", b"fmt ", 16))
        fh.write(struct.pack("<HHIIHH", audio_format, 1, buf.sample_rate, byte_rate, block_align, bits))
        fh.write(struct.pack("<4sI", b"data", len(payload)))
        fh.write(payload)
        if len(payload) % 2:
            fh.write(b"\x00")
