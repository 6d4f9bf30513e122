import numpy as np
import pytest
import torch

from decor.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    inspect_text,
    load_model,
    read_checkpoint,
    save_checkpoint,
    snapshot,
    write_checkpoint,
)
from decor.config import preset
from decor.errors import ParseError
from decor.model import DecorModel
from decor.training import OptimizerState


@pytest.fixture()
def ckpt():
    model = DecorModel(preset("tiny"), seed=3)
    state = OptimizerState.zeros_like(dict(model.named_parameters()))
    state.exp_avg["mix"] += 0.25
    state.step = 7
    return snapshot(model, state, {"epoch": 2})


def test_round_trip_bit_exact(tmp_path, ckpt):
    path = tmp_path / "a.ckpt"
    write_checkpoint(path, ckpt)
    back = read_checkpoint(path)
    assert back.config == ckpt.config and back.meta == ckpt.meta
    assert list(back.tensors) == list(ckpt.tensors)
    for name, arr in ckpt.tensors.items():
        assert np.array_equal(back.tensors[name], arr), name
    assert encode_checkpoint(back) == path.read_bytes()
    assert inspect_text(back) == inspect_text(ckpt)
    m, _ = back.optimizer_tensors()
    assert np.all(m["mix"] == 0.25) and back.meta["optimizer_step"] == 7


def test_load_model_restores_weights(tmp_path):
    model = DecorModel(preset("tiny"), seed=4)
    path = save_checkpoint(tmp_path / "m.ckpt", model)
    loaded = load_model(read_checkpoint(path))
    for (n, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()):
        assert torch.equal(a, b), n


def test_inspect_sections(ckpt):
    text = inspect_text(ckpt)
    for section in ("[config]", "[meta]", "[tensors]", "[decay_times_s]", "[filterbank_response_db]"):
        assert section in text
    rows = text.split("[filterbank_response_db]\n")[1].strip().splitlines()
    assert rows[0] == "freq_hz,band_0,band_1" and len(rows) == 66


@pytest.mark.parametrize("cut, section", [
    (5, "magic"),
    (len(MAGIC) + 3, "header-length"),
    (len(MAGIC) + 20, "header"),
    (-3, "payload"),
])
def test_truncation_names_section(ckpt, cut, section):
    data = encode_checkpoint(ckpt)
    with pytest.raises(ParseError, match=section):
        decode_checkpoint(data[:cut] if cut != 5 else b"XXXXX" + data[5:])


def test_trailing_bytes_and_bad_header(ckpt):
    data = encode_checkpoint(ckpt)
    with pytest.raises(ParseError, match="trailing"):
        decode_checkpoint(data + b"\0")
    bad = MAGIC + (2).to_bytes(8, "little") + b"{]"
    with pytest.raises(ParseError, match="header"):
        decode_checkpoint(bad)


def test_manifest_mismatch_rejected(ckpt):
    del ckpt.tensors["mix"]
    with pytest.raises(ParseError, match="manifest"):
        load_model(ckpt)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        read_checkpoint(tmp_path / "none.ckpt")
