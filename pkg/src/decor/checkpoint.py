"""Checkpoint file format.

Layout::

    b"DECORCKPT1"
    uint64 little-endian header byte length
    UTF-8 JSON header: {"config": ..., "tensors": [{"name", "shape"}, ...], "meta": ...}
    float32 little-endian payloads, one per manifest entry, in manifest order

Model tensors use their parameter names; optimiser moments are stored as
``optim.m.<name>`` and ``optim.v.<name>``.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import DecorError, ParseError
from .signal_core import FilterBank

MAGIC = b"DECORCKPT1"
_M_PREFIX = "optim.m."
_V_PREFIX = "optim.v."


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict
    meta: dict = field(default_factory=dict)

    def model_tensors(self) -> dict:
        return {k: v for k, v in self.tensors.items() if not k.startswith("optim.")}

    def optimizer_tensors(self):
        m = {k[len(_M_PREFIX):]: v for k, v in self.tensors.items() if k.startswith(_M_PREFIX)}
        v = {k[len(_V_PREFIX):]: v for k, v in self.tensors.items() if k.startswith(_V_PREFIX)}
        return m, v


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    manifest = []
    body = io.BytesIO()
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape)})
        body.write(arr.tobytes())
    header = json.dumps(
        {"config": ckpt.config.to_dict(), "tensors": manifest, "meta": ckpt.meta}, sort_keys=True
    ).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + body.getvalue()


def decode_checkpoint(data: bytes, source="<bytes>") -> Checkpoint:
    if data[:len(MAGIC)] != MAGIC:
        raise ParseError(f"{source}: bad magic section (not a DECORCKPT1 file)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise ParseError(f"{source}: truncated header-length section")
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + hlen:
        raise ParseError(f"{source}: truncated header section ({hlen} bytes declared)")
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{source}: malformed header section: {exc}") from exc
    pos += hlen
    if not isinstance(header, dict) or not {"config", "tensors", "meta"} <= header.keys():
        raise ParseError(f"{source}: header section lacks config/tensors/meta")
    try:
        config = RunConfig.from_dict(header["config"])
    except (DecorError, TypeError, ValueError) as exc:
        raise ParseError(f"{source}: invalid config section: {exc}") from exc
    tensors = {}
    for entry in header["tensors"]:
        try:
            name, shape = entry["name"], tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: malformed tensor manifest section") from exc
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if len(data) < pos + nbytes:
            raise ParseError(f"{source}: truncated payload section for tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise ParseError(f"{source}: {len(data) - pos} trailing bytes after payload section")
    return Checkpoint(config, tensors, header["meta"])


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return decode_checkpoint(data, path)


def write_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically so an interrupted save never clobbers the previous file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    return path


def snapshot(model, optimizer_state=None, meta=None) -> Checkpoint:
    tensors = {name: p.detach().cpu().numpy().astype("<f4") for name, p in model.named_parameters()}
    meta = dict(meta or {})
    if optimizer_state is not None:
        names = list(tensors)
        for name in names:
            tensors[_M_PREFIX + name] = optimizer_state.exp_avg[name].cpu().numpy().astype("<f4")
        for name in names:
            tensors[_V_PREFIX + name] = optimizer_state.exp_avg_sq[name].cpu().numpy().astype("<f4")
        meta["optimizer_step"] = optimizer_state.step
    return Checkpoint(model.config, tensors, meta)


def save_checkpoint(path, model, optimizer_state=None, meta=None) -> Path:
    return write_checkpoint(path, snapshot(model, optimizer_state, meta))


def load_model(ckpt: Checkpoint):
    """Rebuild a :class:`~decor.model.DecorModel` holding the stored weights."""
    from .model import DecorModel

    model = DecorModel(ckpt.config)
    params = dict(model.named_parameters())
    stored = ckpt.model_tensors()
    if stored.keys() != params.keys():
        missing = sorted(params.keys() - stored.keys())
        extra = sorted(stored.keys() - params.keys())
        raise ParseError(f"tensor manifest section does not match the model (missing {missing}, extra {extra})")
    with torch.no_grad():
        for name, p in params.items():
            if tuple(stored[name].shape) != tuple(p.shape):
                raise ParseError(f"tensor manifest section: {name} has shape {stored[name].shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(stored[name]))
    return model


def inspect_text(ckpt: Checkpoint, num_points: int = 65) -> str:
    """Human-readable dump: config, tensor shapes, decay-time grid and filter responses (CSV)."""
    lines = ["[config]", ckpt.config.to_json(), "", "[meta]", json.dumps(ckpt.meta, sort_keys=True), "",
             "[tensors]"]
    for name, arr in ckpt.tensors.items():
        lines.append(f"{name}\t{'x'.join(str(s) for s in arr.shape)}")
    lines += ["", "[decay_times_s]"]
    lines.append(",".join(repr(float(t)) for t in ckpt.tensors["decay_times"]))
    fb = FilterBank(ckpt.tensors["taps"].astype(np.float64), sample_rate=ckpt.config.signal.sample_rate)
    freqs, mag = fb.frequency_response(num_points)
    db = 20.0 * np.log10(np.maximum(mag, 1e-12))
    lines += ["", "[filterbank_response_db]",
              "freq_hz," + ",".join(f"band_{m}" for m in range(fb.num_bands))]
    for k, f in enumerate(freqs):
        lines.append(f"{f:.3f}," + ",".join(f"{db[m, k]:.4f}" for m in range(fb.num_bands)))
    return "\n".join(lines) + "\n"
