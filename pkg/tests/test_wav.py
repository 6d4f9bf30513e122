import struct

import numpy as np
import pytest

from decor.errors import ParseError, UnsupportedFormatError
from decor.signal_core import Signal
from decor.wav import load_wav, write_wav


def test_float_round_trip_bit_exact(tmp_path):
    x = np.random.default_rng(0).standard_normal(999).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "a.wav", Signal(x, 16000))
    y = load_wav(tmp_path / "a.wav")
    assert y.sample_rate == 16000
    assert np.array_equal(y.samples, x)


def test_pcm16_full_scale(tmp_path):
    payload = np.array([32767, -32768, 0], dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    (tmp_path / "p.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    y = load_wav(tmp_path / "p.wav").samples
    assert y[0] == pytest.approx(0.99997, abs=1e-5)
    assert y[1] == -1.0 and y[2] == 0.0


def test_pcm16_write_read(tmp_path):
    x = np.array([0.5, -0.25, 0.0])
    write_wav(tmp_path / "p.wav", Signal(x, 8000), subtype="pcm16")
    assert np.array_equal(load_wav(tmp_path / "p.wav").samples, x)


def test_truncated_file_is_parse_error(tmp_path):
    write_wav(tmp_path / "a.wav", Signal(np.ones(100), 8000))
    data = (tmp_path / "a.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(data[:-50])
    with pytest.raises(ParseError, match="truncated"):
        load_wav(tmp_path / "t.wav")
    (tmp_path / "n.wav").write_bytes(b"not a wav")
    with pytest.raises(ParseError):
        load_wav(tmp_path / "n.wav")
    with pytest.raises(ParseError):
        load_wav(tmp_path / "missing.wav")


def test_unsupported_subtype(tmp_path):
    with pytest.raises(UnsupportedFormatError):
        write_wav(tmp_path / "a.wav", Signal(np.ones(4), 8000), subtype="alaw")
