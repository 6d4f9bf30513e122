"""Minimal RIFF/WAVE reader and writer.

Reads integer PCM (8/16/24/32 bit) and IEEE float (32/64 bit), including
WAVE_FORMAT_EXTENSIBLE wrappers of those. Writes 16-bit PCM or 32-bit float.
Multichannel files are reduced to channel 0.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .signal_core import Signal

_PCM = 0x0001
_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE


def _chunks(data: bytes, path):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if body + size > len(data):
            raise ParseError(f"{path}: chunk {cid!r} declares {size} bytes, file is truncated")
        yield cid, data[body:body + size]
        pos = body + size + (size & 1)


def _decode(fmt_tag, bits, payload, channels, path):
    width = bits // 8
    if bits % 8 or width == 0:
        raise UnsupportedFormatError(f"{path}: {bits}-bit samples are not supported")
    usable = len(payload) - len(payload) % (width * channels)
    payload = payload[:usable]
    if fmt_tag == _FLOAT:
        if bits not in (32, 64):
            raise UnsupportedFormatError(f"{path}: {bits}-bit float is not supported")
        samples = np.frombuffer(payload, dtype=f"<f{width}").astype(np.float64)
    elif fmt_tag == _PCM:
        if bits == 8:
            samples = (np.frombuffer(payload, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            samples = np.frombuffer(payload, dtype="<i2") / 32768.0
        elif bits == 24:
            raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
            ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
            samples = ints / float(1 << 23)
        elif bits == 32:
            samples = np.frombuffer(payload, dtype="<i4") / float(1 << 31)
        else:
            raise UnsupportedFormatError(f"{path}: {bits}-bit PCM is not supported")
    else:
        raise UnsupportedFormatError(f"{path}: WAV format tag 0x{fmt_tag:04x} is not supported")
    return samples.reshape(-1, channels)[:, 0]


def load_wav(path) -> Signal:
    """Read a WAV file as a float64 :class:`Signal` (channel 0)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise ParseError(f"{path}: not a RIFF/WAVE file")
    fmt = payload = None
    for cid, body in _chunks(data, path):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
    if fmt is None or len(fmt) < 16:
        raise ParseError(f"{path}: missing or short 'fmt ' chunk")
    if payload is None:
        raise ParseError(f"{path}: missing 'data' chunk")
    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _EXTENSIBLE:
        if len(fmt) < 40:
            raise ParseError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels < 1 or rate < 1:
        raise ParseError(f"{path}: invalid channel count or sample rate")
    samples = _decode(tag, bits, payload, channels, path)
    if samples.size == 0:
        raise ParseError(f"{path}: no audio frames")
    return Signal(samples, rate)


def write_wav(path, sig: Signal, subtype: str = "float32") -> Path:
    """Write a mono WAV. ``subtype`` is ``"float32"`` or ``"pcm16"``."""
    path = Path(path)
    rate = int(round(sig.sample_rate))
    if subtype == "float32":
        tag, bits = _FLOAT, 32
        payload = sig.samples.astype("<f4").tobytes()
    elif subtype == "pcm16":
        tag, bits = _PCM, 16
        ints = np.clip(np.round(sig.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
    else:
        raise UnsupportedFormatError(f"cannot write WAV subtype {subtype!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path
