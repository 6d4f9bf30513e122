"""RIR corpora: preprocessing, head/tail splitting, manifests and the
synthetic generator used as a ground-truth oracle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import _backend
from .config import RunConfig, SignalConfig, SynthConfig
from .errors import InvalidArgumentError, ParseError
from .signal_core import LN_1000, Signal, fir_filter, init_octave_filterbank
from .wav import load_wav, write_wav

ONSET_THRESHOLD_DB = -20.0
RESAMPLE_HALF_WIDTH = 32
RESAMPLE_BETA = 8.0
RESAMPLE_ROLLOFF = 0.95
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class RIRRecord:
    id: str
    head: Signal
    tail: Signal
    onset_index: int = 0
    source_file: str = "synthetic"
    truth_params: dict | None = None

    @property
    def sample_rate(self) -> float:
        return self.head.sample_rate

    @property
    def full(self) -> Signal:
        return Signal(np.concatenate([self.head.samples, self.tail.samples]), self.sample_rate)

    @property
    def direct_index(self) -> int:
        """Index of the direct-sound peak (largest head sample)."""
        return int(np.argmax(np.abs(self.head.samples)))

    @property
    def is_single_slope(self) -> bool:
        if not self.truth_params:
            return False
        return all(len(band) == 1 for band in self.truth_params["decay_times"])


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def resample(sig: Signal, target_rate: float) -> Signal:
    """Band-limited interpolation with a 64-tap Kaiser-windowed sinc kernel.

    Kernel weights are normalised to unit sum, so DC passes unchanged away
    from the signal edges. Output length is ``round(len * target / source)``.
    """
    if not target_rate > 0:
        raise InvalidArgumentError("target rate must be positive")
    if float(target_rate) == sig.sample_rate:
        return Signal(sig.samples.copy(), sig.sample_rate)
    ratio = float(target_rate) / sig.sample_rate
    out_len = max(1, int(round(len(sig) * ratio)))
    cutoff = min(1.0, ratio) * RESAMPLE_ROLLOFF
    y = _backend.sinc_resample(np.ascontiguousarray(sig.samples), 1.0 / ratio, out_len,
                               cutoff, RESAMPLE_HALF_WIDTH, RESAMPLE_BETA)
    return Signal(y, float(target_rate))


def normalize_and_trim(sig: Signal, threshold_db: float = ONSET_THRESHOLD_DB):
    """Scale to unit peak and drop everything before the onset.

    The onset is the first sample within ``threshold_db`` of the peak.
    Returns ``(signal, onset_index)``.
    """
    x = sig.samples
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        raise InvalidArgumentError("cannot normalise an all-zero signal")
    onset = int(np.flatnonzero(np.abs(x) >= peak * 10.0 ** (threshold_db / 20.0))[0])
    return Signal(x[onset:] / peak, sig.sample_rate), onset


def split_head_tail(sig: Signal, head_s: float = 0.05, tail_s: float = 0.95):
    """Cut the first ``head_s`` seconds and the following ``tail_s`` seconds.

    Signals shorter than ``head_s + tail_s`` are zero-padded at the end.
    """
    fs = sig.sample_rate
    nh, nt = round(head_s * fs), round(tail_s * fs)
    x = sig.samples
    if len(x) < nh + nt:
        x = np.concatenate([x, np.zeros(nh + nt - len(x))])
    return Signal(x[:nh], fs), Signal(x[nh:nh + nt], fs)


def prepare_rir(sig: Signal, signal_cfg: SignalConfig):
    """Resample, normalise, trim and split a raw measurement.

    Returns ``(head, tail, onset_index)``; the onset is counted at the
    configured sample rate.
    """
    if sig.sample_rate != signal_cfg.sample_rate:
        sig = resample(sig, signal_cfg.sample_rate)
    trimmed, onset = normalize_and_trim(sig)
    head, tail = split_head_tail(trimmed, signal_cfg.head_s, signal_cfg.tail_s)
    return head, tail, onset


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Ground truth for one synthetic RIR.

    ``decay_times[i]`` and ``amplitudes[i]`` list the exponential slopes of
    octave band ``i``; amplitudes are the band's RMS level at t = 0 (before
    peak normalisation). Reflections arrive in the head only.
    """

    decay_times: tuple
    amplitudes: tuple
    reflections: int = 0
    reflection_gain: float = 3.0
    predelay: int = 0
    band_centers: tuple | None = None
    filter_order: int = 255

    def __post_init__(self):
        dt = tuple(tuple(float(v) for v in band) for band in self.decay_times)
        amps = tuple(tuple(float(v) for v in band) for band in self.amplitudes)
        if not dt:
            raise InvalidArgumentError("a synthetic RIR needs at least one band")
        if len(dt) != len(amps) or any(len(a) != len(d) or not d for a, d in zip(amps, dt)):
            raise InvalidArgumentError("decay_times and amplitudes must have matching non-empty bands")
        if any(v <= 0 or not math.isfinite(v) for band in dt for v in band):
            raise InvalidArgumentError("decay times must be positive")
        if any(v < 0 for band in amps for v in band) or not any(v > 0 for band in amps for v in band):
            raise InvalidArgumentError("amplitudes must be non-negative and not all zero")
        if self.reflections < 0 or self.predelay < 0:
            raise InvalidArgumentError("reflection count and predelay must be >= 0")
        object.__setattr__(self, "decay_times", dt)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def single_slope(cls, decay_time: float, num_bands: int = 1, level: float = 0.05, **kw) -> "SynthSpec":
        return cls(((decay_time,),) * num_bands, ((level,),) * num_bands, **kw)


# distance-law reference: the direct sound is taken to arrive 10 ms after emission
_DIRECT_DELAY_S = 0.01
_MAX_REFLECTION = 0.8


def _crossfade(t: np.ndarray, head_s: float) -> np.ndarray:
    g = np.ones_like(t)
    early = t < head_s
    g[early] = np.sin(0.5 * np.pi * t[early] / head_s) ** 2
    return g


def synth_rir(spec: SynthSpec, seed: int, sample_rate: float = 48000.0, head_s: float = 0.05,
              tail_s: float = 0.95, record_id: str = "synthetic") -> RIRRecord:
    """Build an RIR whose tail is exactly a sum of exponentially decaying
    octave-band noises, with a sparse-reflection head.

    Reflection arrival times follow a Poisson process whose density grows
    with t^2 (conditioned on ``spec.reflections`` arrivals); amplitudes follow
    the late envelope scaled by a 1/distance law, and the late noise fades in
    over the head with a raised-sine crossfade.
    """
    fs = float(sample_rate)
    length = round((head_s + tail_s) * fs)
    t = np.arange(length) / fs
    fb = init_octave_filterbank(len(spec.decay_times), spec.filter_order, fs, spec.band_centers)
    noise_ss, refl_ss = np.random.SeedSequence(seed).spawn(2)

    pad = fb.delay
    w = np.random.default_rng(noise_ss).standard_normal(length + 2 * pad)
    carriers = fir_filter(torch.from_numpy(w), torch.from_numpy(fb.taps)).numpy()[:, pad:pad + length]
    carriers /= np.sqrt(np.sum(fb.taps ** 2, axis=1))[:, None]

    envelopes = np.zeros((fb.num_bands, length))
    for i, (times, amps) in enumerate(zip(spec.decay_times, spec.amplitudes)):
        for decay, amp in zip(times, amps):
            envelopes[i] += amp * np.exp(-LN_1000 / decay * t)
    late = np.sum(carriers * envelopes, axis=0)

    x = _crossfade(t, head_s) * late
    x[0] += 1.0
    if spec.reflections:
        rng = np.random.default_rng(refl_ss)
        arrivals = head_s * rng.random(spec.reflections) ** (1.0 / 3.0)
        idx = np.clip(np.round(arrivals * fs).astype(int), 1, round(head_s * fs) - 1)
        level = np.sqrt(np.sum(envelopes[:, idx] ** 2, axis=0))
        dist = (_DIRECT_DELAY_S + head_s) / (_DIRECT_DELAY_S + idx / fs)
        amp = np.minimum(spec.reflection_gain * level * dist, _MAX_REFLECTION)
        signs = rng.choice([-1.0, 1.0], size=spec.reflections)
        np.add.at(x, idx, signs * amp * (1.0 - _crossfade(idx / fs, head_s)))
    if spec.predelay:
        x = np.concatenate([np.zeros(spec.predelay), x])

    trimmed, onset = normalize_and_trim(Signal(x, fs))
    peak = float(np.max(np.abs(x)))
    head, tail = split_head_tail(trimmed, head_s, tail_s)
    truth = {
        "decay_times": [list(band) for band in spec.decay_times],
        "amplitudes": [[a / peak for a in band] for band in spec.amplitudes],
        "band_centers": list(fb.band_centers_hz),
        "reflections": spec.reflections,
        "seed": int(seed),
    }
    return RIRRecord(record_id, head, tail, onset, "synthetic", truth)


def random_synth_spec(rng: np.random.Generator, synth: SynthConfig, num_bands: int) -> SynthSpec:
    """Draw one record specification from the corpus distribution."""
    lo, hi = synth.decay_range
    base = rng.uniform(lo, hi)
    multi = rng.random() < synth.multi_slope_fraction
    # rooms with longer decays are larger: sparser early reflections and a
    # diffuse level rising with the decay time (energy proportional to T)
    ref = math.sqrt(lo * hi)
    level_db = rng.uniform(*synth.late_level_db) + 10.0 * math.log10(base / ref)
    density = ref / base
    decay_times, amplitudes = [], []
    for _ in range(num_bands):
        decay = float(np.clip(base * math.exp(rng.uniform(-synth.band_spread, synth.band_spread)), lo, hi))
        amp = 10.0 ** ((level_db + rng.uniform(-synth.band_tilt_db, synth.band_tilt_db)) / 20.0)
        amp /= math.sqrt(num_bands)
        if multi:
            decay_times.append((decay, decay * rng.uniform(1.8, 3.0)))
            amplitudes.append((amp, amp * rng.uniform(0.05, 0.2)))
        else:
            decay_times.append((decay,))
            amplitudes.append((amp,))
    return SynthSpec(
        tuple(decay_times), tuple(amplitudes),
        reflections=max(1, round(density * rng.integers(synth.reflections[0], synth.reflections[1] + 1))),
        reflection_gain=synth.reflection_gain,
        filter_order=synth.filter_order,
    )


def synth_corpus(count: int, seed: int, config: RunConfig) -> list:
    """``count`` synthetic records drawn deterministically from ``seed``."""
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    sig = config.signal
    records = []
    for k in range(count):
        ss = np.random.SeedSequence([seed, k])
        spec_ss, noise_ss = ss.spawn(2)
        spec = random_synth_spec(np.random.default_rng(spec_ss), config.synth, config.decoder.num_filters)
        rec_seed = int(noise_ss.generate_state(1)[0])
        records.append(synth_rir(spec, rec_seed, sig.sample_rate, sig.head_s, sig.tail_s, f"synth_{k:05d}"))
    return records


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    split: str
    path: str


@dataclass
class DatasetManifest:
    records: list
    sample_rate: int = 48000
    seed: int = 0
    truth_file: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("manifest contains duplicate ids")
        bad = {r.split for r in self.records} - set(SPLITS)
        if bad:
            raise InvalidArgumentError(f"unknown split names {sorted(bad)}")

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise InvalidArgumentError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def to_json(self) -> str:
        data = {
            "sample_rate": self.sample_rate,
            "seed": self.seed,
            "truth_file": self.truth_file,
            "extra": self.extra,
            "records": [{"id": r.id, "split": r.split, "path": r.path} for r in self.records],
        }
        return json.dumps(data, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            data = json.loads(Path(path).read_text())
            records = [ManifestEntry(r["id"], r["split"], r["path"]) for r in data["records"]]
            return cls(records, int(data["sample_rate"]), int(data.get("seed", 0)),
                       data.get("truth_file"), data.get("extra", {}))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: invalid manifest ({exc})") from exc


def build_manifest(source, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0,
                   sample_rate: int = 48000) -> DatasetManifest:
    """Shuffle records into train/valid/test by ``seed``.

    ``source`` is a corpus directory (every ``*.wav`` below it, paths
    relative to it), or an iterable of ids, or of ``(id, path)`` pairs.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    if isinstance(source, (str, Path)):
        root = Path(source)
        if not root.is_dir():
            raise InvalidArgumentError(f"{root} is not a directory")
        files = sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.suffix.lower() == ".wav")
        items = [(f.rsplit(".", 1)[0], f) for f in files]
    else:
        items = [(s, f"{s}.wav") if isinstance(s, str) else (str(s[0]), str(s[1])) for s in source]
    if not items:
        raise InvalidArgumentError("corpus is empty")
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_train = round(n * fractions[0])
    n_valid = min(n - n_train, round(n * fractions[1]))
    splits = ["train"] * n_train + ["valid"] * n_valid + ["test"] * (n - n_train - n_valid)
    records = [ManifestEntry(items[i][0], split, items[i][1]) for i, split in zip(order, splits)]
    return DatasetManifest(records, int(sample_rate), int(seed))


def write_synth_corpus(out_dir, count: int, seed: int, config: RunConfig,
                       fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> DatasetManifest:
    """Write ``count`` synthetic WAVs, a ``truth.json`` sidecar and ``manifest.json``."""
    out = Path(out_dir)
    records = synth_corpus(count, seed, config)
    try:
        (out / "wavs").mkdir(parents=True, exist_ok=True)
        for rec in records:
            write_wav(out / "wavs" / f"{rec.id}.wav", rec.full)
        truth = {rec.id: rec.truth_params for rec in records}
        (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"writing corpus under {out}: {exc}") from exc
    manifest = build_manifest([(r.id, f"wavs/{r.id}.wav") for r in records], fractions, seed,
                              config.signal.sample_rate)
    manifest.truth_file = "truth.json"
    manifest.extra = {"preset": config.preset, "count": count}
    manifest.save(out / "manifest.json")
    return manifest


def load_records(manifest: DatasetManifest, root, split: str, signal_cfg: SignalConfig) -> list:
    """Load, preprocess and split every record of ``split``."""
    root = Path(root)
    truth = {}
    if manifest.truth_file:
        try:
            truth = json.loads((root / manifest.truth_file).read_text())
        except (OSError, ValueError) as exc:
            raise ParseError(f"{root / manifest.truth_file}: {exc}") from exc
    records = []
    for entry in manifest.split(split):
        head, tail, onset = prepare_rir(load_wav(root / entry.path), signal_cfg)
        records.append(RIRRecord(entry.id, head, tail, onset, entry.path, truth.get(entry.id)))
    return records
