import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decor.config import preset
from decor.data import (
    DatasetManifest,
    SynthSpec,
    build_manifest,
    load_records,
    normalize_and_trim,
    random_synth_spec,
    resample,
    split_head_tail,
    synth_corpus,
    synth_rir,
    write_synth_corpus,
)
from decor.errors import InvalidArgumentError, ParseError
from decor.metrics import estimate_t60, schroeder_edf
from decor.signal_core import Signal


def test_resample_identity_and_length():
    x = Signal(np.random.default_rng(0).standard_normal(480), 48000)
    assert np.array_equal(resample(x, 48000).samples, x.samples)
    y = resample(x, 16000)
    assert len(y) == 160 and y.sample_rate == 16000
    with pytest.raises(InvalidArgumentError):
        resample(x, 0)


def test_resample_preserves_low_tone():
    fs = 48000
    t = np.arange(4800) / fs
    y = resample(Signal(np.sin(2 * math.pi * 500 * t), fs), 16000)
    ref = np.sin(2 * math.pi * 500 * np.arange(len(y)) / 16000)
    assert np.abs(y.samples[100:-100] - ref[100:-100]).max() <= 1e-2


def test_resample_dc_interior():
    y = resample(Signal(np.ones(2000), 44100), 16000)
    assert np.allclose(y.samples[40:-40], 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_normalize_and_trim_idempotent(seed, scale):
    x = scale * np.random.default_rng(seed).standard_normal(200)
    once, _ = normalize_and_trim(Signal(x, 8000))
    twice, onset = normalize_and_trim(once)
    assert np.max(np.abs(once.samples)) == 1.0
    assert onset == 0 and np.array_equal(once.samples, twice.samples)


def test_normalize_trim_onset_and_zero():
    x = np.zeros(50)
    x[10], x[20] = 0.05, -2.0
    y, onset = normalize_and_trim(Signal(x, 8000))
    assert onset == 20 and y.samples[0] == -1.0
    with pytest.raises(InvalidArgumentError):
        normalize_and_trim(Signal(np.zeros(5), 8000))


def test_split_head_tail_pads():
    head, tail = split_head_tail(Signal(np.ones(100), 1000), 0.05, 0.1)
    assert len(head) == 50 and len(tail) == 100
    assert np.all(tail.samples[:50] == 1) and np.all(tail.samples[50:] == 0)


@pytest.mark.parametrize("t60", [0.2, 0.5, 1.0, 2.0])
def test_synth_single_slope_t60_round_trip(t60):
    # the tail is the pure exponential; the head adds the direct sound and the fade-in
    rec = synth_rir(SynthSpec.single_slope(t60), seed=1)
    assert estimate_t60(schroeder_edf(rec.tail)) == pytest.approx(t60, rel=0.05)
    assert rec.is_single_slope and rec.direct_index == 0


def test_synth_two_slope_edf_is_convex():
    spec = SynthSpec(((0.2, 1.2),), ((0.1, 0.01),))
    db = schroeder_edf(synth_rir(spec, seed=2, sample_rate=16000).full).values_db
    fs = 16000
    early = (db[int(0.10 * fs)] - db[int(0.05 * fs)]) / 0.05
    late = (db[int(0.60 * fs)] - db[int(0.40 * fs)]) / 0.2
    assert early < 2 * late < 0


def test_synth_determinism_and_validation():
    spec = SynthSpec.single_slope(0.5, num_bands=2, reflections=10)
    a, b = synth_rir(spec, 3, 16000), synth_rir(spec, 3, 16000)
    assert np.array_equal(a.full.samples, b.full.samples)
    with pytest.raises(InvalidArgumentError):
        SynthSpec(((0.5,),), ((0.1, 0.2),))
    with pytest.raises(InvalidArgumentError):
        SynthSpec(((-0.5,),), ((0.1,),))


def test_synth_corpus_shapes():
    cfg = preset("tiny")
    recs = synth_corpus(3, 0, cfg)
    assert [r.id for r in recs] == ["synth_00000", "synth_00001", "synth_00002"]
    assert all(len(r.head) == 400 and len(r.tail) == 4000 for r in recs)
    with pytest.raises(InvalidArgumentError):
        synth_corpus(0, 0, cfg)


def test_random_spec_couples_head_statistics_to_decay():
    synth = preset("desk").synth
    rng = np.random.default_rng(0)
    specs = [random_synth_spec(rng, synth, 4) for _ in range(400)]
    decay = np.array([np.mean([b[0] for b in s.decay_times]) for s in specs])
    level = np.array([20 * np.log10(np.sqrt(np.sum(np.square([b[0] for b in s.amplitudes])))) for s in specs])
    count = np.array([s.reflections for s in specs])
    assert np.corrcoef(np.log(decay), level)[0, 1] > 0.3
    assert np.corrcoef(np.log(decay), np.log(count))[0, 1] < -0.5
    assert all(lo <= d <= hi for s in specs for b in s.decay_times for d in b[:1]
               for lo, hi in [synth.decay_range])


def test_manifest_fractions():
    m = build_manifest([f"r{i}" for i in range(100)], seed=1)
    assert [len(m.split(s)) for s in ("train", "valid", "test")] == [80, 10, 10]
    again = build_manifest([f"r{i}" for i in range(100)], seed=1)
    assert m.records == again.records
    for bad in ((0.5, 0.5), (0.8, 0.3, -0.1), (0.5, 0.2, 0.2)):
        with pytest.raises(InvalidArgumentError):
            build_manifest(["a"], bad)
    with pytest.raises(InvalidArgumentError):
        build_manifest([])


def test_manifest_save_load(tmp_path):
    m = build_manifest([("a", "a.wav"), ("b", "sub/b.wav")], (1.0, 0.0, 0.0))
    back = DatasetManifest.load(m.save(tmp_path / "m.json"))
    assert back.records == m.records
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ParseError):
        DatasetManifest.load(tmp_path / "bad.json")


def test_write_and_load_corpus(tmp_path):
    cfg = preset("tiny")
    m = write_synth_corpus(tmp_path, 10, 5, cfg)
    recs = load_records(m, tmp_path, "train", cfg.signal)
    assert len(recs) == 8 and all(r.truth_params for r in recs)
    original = {r.id: r for r in synth_corpus(10, 5, cfg)}
    r = recs[0]
    assert np.allclose(r.tail.samples, original[r.id].tail.samples, atol=1e-6)
