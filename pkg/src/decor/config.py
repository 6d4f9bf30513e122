"""Run configuration and the named presets.

``paper`` reproduces the published architecture (48 kHz, 50 ms head, 950 ms
tail, ten octave filters of order 1023, twenty decay times from 0.05 s to
3.0 s, Adam-style training at 5e-4 with batch 128 for 2000 epochs).
``desk`` shrinks everything to run on one CPU core in minutes and ``tiny``
exists for gradient checks.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import InvalidArgumentError, ParseError
from .metrics import StftResolution


@dataclass
class SignalConfig:
    sample_rate: int = 48000
    head_s: float = 0.05
    tail_s: float = 0.95

    @property
    def head_length(self) -> int:
        return round(self.head_s * self.sample_rate)

    @property
    def tail_length(self) -> int:
        return round(self.tail_s * self.sample_rate)


@dataclass
class EncoderConfig:
    num_blocks: int = 9
    kernel_size: int = 15
    stride: int = 2
    channels: tuple = (32, 64, 64, 128, 128, 256, 256, 512, 512)
    pooled_length: int = 4
    latent_dim: int = 128
    negative_slope: float = 0.2


@dataclass
class DecoderConfig:
    noise_dim: int = 32
    hidden_layers: int = 7
    hidden_width: int = 512
    num_filters: int = 10
    num_decays: int = 20
    decay_time_range: tuple = (0.05, 3.0)
    fir_order: int = 1023
    decay_clamp: tuple = (0.01, 10.0)
    negative_slope: float = 0.2


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 2000
    batch_size: int = 128
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    resolutions: tuple = ((64, 32), (512, 256), (2048, 1024), (8192, 4096))

    def stft_resolutions(self) -> tuple:
        return tuple(StftResolution(int(w), int(h)) for w, h in self.resolutions)


@dataclass
class SynthConfig:
    """Distribution of the synthetic corpus used for desk-scale experiments."""

    decay_range: tuple = (0.2, 2.0)
    # per-band decay factor spread around the record's base decay time
    band_spread: float = 0.15
    late_level_db: tuple = (-28.0, -18.0)
    band_tilt_db: float = 6.0
    # reflection count range at the geometric-mean decay time, scaled by T_ref/T
    reflections: tuple = (40, 120)
    reflection_gain: float = 3.0
    multi_slope_fraction: float = 0.25
    filter_order: int = 1023


@dataclass
class RunConfig:
    preset: str = "paper"
    signal: SignalConfig = field(default_factory=SignalConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        enc, dec, tr = self.encoder, self.decoder, self.train
        if len(enc.channels) != enc.num_blocks:
            raise InvalidArgumentError(
                f"encoder has {enc.num_blocks} blocks but {len(enc.channels)} channel widths"
            )
        if tr.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if tr.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        lo, hi = dec.decay_time_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError("decay_time_range must be positive and ordered")
        longest = max(w for w, _ in tr.resolutions)
        if longest > self.signal.tail_length:
            raise InvalidArgumentError(
                f"STFT window {longest} exceeds the {self.signal.tail_length}-sample tail"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Return a copy with a nested ``{"train": {"epochs": 3}}`` style patch applied."""
        merged = _merge(self.to_dict(), overrides)
        return RunConfig.from_dict(merged)


def _build(cls, data):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise InvalidArgumentError(f"unknown config key {key!r} for {cls.__name__}")
        sub = _SECTIONS.get(key) if cls is RunConfig else None
        if sub is not None:
            kwargs[key] = _build(sub, value)
        elif isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _merge(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


_SECTIONS = {
    "signal": SignalConfig,
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
}


def _paper() -> RunConfig:
    return RunConfig(preset="paper")


def _desk() -> RunConfig:
    return RunConfig(
        preset="desk",
        signal=SignalConfig(sample_rate=16000, head_s=0.05, tail_s=0.45),
        encoder=EncoderConfig(num_blocks=6, channels=(32, 64, 64, 128, 128, 256)),
        decoder=DecoderConfig(hidden_width=256, num_filters=4, num_decays=10, fir_order=255),
        train=TrainConfig(epochs=100, batch_size=16, learning_rate=1e-4,
                          resolutions=((32, 16), (128, 64), (512, 256), (2048, 1024))),
        synth=SynthConfig(decay_range=(0.2, 1.0), filter_order=255),
    )


def _tiny() -> RunConfig:
    return RunConfig(
        preset="tiny",
        signal=SignalConfig(sample_rate=8000, head_s=0.05, tail_s=0.5),
        encoder=EncoderConfig(num_blocks=2, kernel_size=5, channels=(4, 8), latent_dim=16),
        # short type-I filters: no spectral nulls for finite differences to straddle
        decoder=DecoderConfig(noise_dim=4, hidden_width=8, num_filters=2, num_decays=4,
                              fir_order=4),
        train=TrainConfig(epochs=1, batch_size=2, resolutions=((64, 32), (256, 128))),
        synth=SynthConfig(decay_range=(0.2, 0.8), reflections=(5, 15), filter_order=31),
    )


PRESETS = {"paper": _paper, "desk": _desk, "tiny": _tiny}


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Read a JSON config file; a ``preset`` key picks the base it patches."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    if base is None:
        base = preset(data.get("preset", "paper"))
    return base.with_overrides(data)
