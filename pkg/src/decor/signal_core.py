"""Filtered-noise reverberation primitives.

Everything that the model differentiates through is written once as a torch
kernel (``envelope_matrix``, ``fir_filter``, ``compose``, ``synthesize``) and
re-exposed here as plain numpy-in / numpy-out operations on the small value
types below. The numpy wrappers run the kernels in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import InvalidArgumentError

LN_1000 = math.log(1000.0)

#: Nominal octave-band centre frequencies in Hz.
OCTAVE_CENTERS_HZ = (31.5, 63.0, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0)

DEFAULT_KAISER_BETA = 6.0


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Signal:
    """Mono sample buffer with its sampling rate."""

    samples: np.ndarray
    sample_rate: float = 48000.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidArgumentError(f"signal must be 1-D, got shape {x.shape}")
        if x.size < 1:
            raise InvalidArgumentError("signal must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("signal contains non-finite samples")
        if not self.sample_rate > 0:
            raise InvalidArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of absolute times ``start_s + k * step_s``, ``k < length``."""

    start_s: float
    step_s: float
    length: int

    def __post_init__(self):
        if not self.step_s > 0:
            raise InvalidArgumentError("step_s must be positive")
        if int(self.length) < 1:
            raise InvalidArgumentError("length must be positive")
        object.__setattr__(self, "length", int(self.length))

    @classmethod
    def tail(cls, sample_rate: float = 48000.0, head_s: float = 0.05, tail_s: float = 0.95) -> "TimeGrid":
        """Grid covering the tail that follows a ``head_s`` long head."""
        return cls(head_s, 1.0 / sample_rate, round(tail_s * sample_rate))

    def times(self) -> np.ndarray:
        return self.start_s + np.arange(self.length) * self.step_s


@dataclass(frozen=True)
class EnvelopeBank:
    decay_rates: np.ndarray
    decay_times: np.ndarray
    grid: TimeGrid
    matrix: np.ndarray


@dataclass(frozen=True)
class FilterBank:
    """FIR band filters, one row of ``order + 1`` taps per band."""

    taps: np.ndarray
    band_centers_hz: tuple = ()
    sample_rate: float = 48000.0
    window_beta: float = DEFAULT_KAISER_BETA

    def __post_init__(self):
        taps = np.atleast_2d(np.asarray(self.taps, dtype=np.float64))
        if taps.shape[0] < 1 or taps.shape[1] < 1:
            raise InvalidArgumentError("filterbank needs at least one band and one tap")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "band_centers_hz", tuple(float(f) for f in self.band_centers_hz))

    @property
    def num_bands(self) -> int:
        return self.taps.shape[0]

    @property
    def order(self) -> int:
        return self.taps.shape[1] - 1

    @property
    def delay(self) -> int:
        return self.order // 2

    @property
    def resolution_hz(self) -> float:
        """Half main-lobe width of the design window; bands narrower than
        this cannot be separated by the initial design."""
        return self.sample_rate / self.taps.shape[1] * math.sqrt(1.0 + (self.window_beta / math.pi) ** 2)

    def frequency_response(self, num_points: int = 4096):
        """Return ``(freqs_hz, magnitude)`` with magnitude shaped (M, num_points)."""
        nfft = 2 * (num_points - 1)
        mag = np.abs(np.fft.rfft(self.taps, n=max(nfft, self.taps.shape[1]), axis=1))
        freqs = np.fft.rfftfreq(max(nfft, self.taps.shape[1]), 1.0 / self.sample_rate)
        if mag.shape[1] != num_points:
            grid = np.linspace(0.0, self.sample_rate / 2, num_points)
            mag = np.stack([np.interp(grid, freqs, row) for row in mag])
            freqs = grid
        return freqs, mag


@dataclass(frozen=True)
class DampingDensity:
    """Band-by-decay amplitude matrix and its log / mask factors."""

    log_amps: np.ndarray
    mask_logits: np.ndarray
    amps: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.mask_logits))


# ---------------------------------------------------------------------------
# Torch kernels (differentiable, batch-friendly)
# ---------------------------------------------------------------------------


def decay_rates(decay_times):
    """Rates that take an exponential envelope to -60 dB at each decay time."""
    return LN_1000 / decay_times


def envelope_matrix(decay_times: torch.Tensor, times: torch.Tensor) -> torch.Tensor:
    """``exp(-b t)`` for every decay time (rows) and time instant (columns)."""
    return torch.exp(-decay_rates(decay_times)[:, None] * times[None, :])


def fir_filter(x: torch.Tensor, taps: torch.Tensor) -> torch.Tensor:
    """Filter ``x[..., L]`` through every row of ``taps[M, K]``.

    Returns ``[..., M, L]``: linear convolution, zero-padded, with the
    ``(K - 1) // 2`` sample group delay removed.
    """
    length = x.shape[-1]
    ntaps = taps.shape[-1]
    nfft = 1 << (length + ntaps - 2).bit_length()
    spec = torch.fft.rfft(x, n=nfft)[..., None, :] * torch.fft.rfft(taps, n=nfft)
    full = torch.fft.irfft(spec, n=nfft)
    delay = (ntaps - 1) // 2
    return full[..., delay:delay + length]


def compose(log_amps: torch.Tensor, mask_logits: torch.Tensor) -> torch.Tensor:
    return torch.exp(log_amps) * torch.sigmoid(mask_logits)


def synthesize(amps: torch.Tensor, envelopes: torch.Tensor, bands: torch.Tensor,
               mix: torch.Tensor) -> torch.Tensor:
    """Tail ``mix . ((amps @ envelopes) * bands)``.

    amps ``[..., M, N]``, envelopes ``[N, T]``, bands ``[..., M, T]``, mix ``[M]``.
    """
    shaped = torch.matmul(amps, envelopes) * bands
    return torch.einsum("...mt,m->...t", shaped, mix)


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def generate_white_noise(length: int, seed: int, sample_rate: float = 48000.0) -> Signal:
    """I.i.d. standard normal samples from a PCG64 stream seeded by ``seed``."""
    if int(length) < 1:
        raise InvalidArgumentError(f"noise length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    return Signal(rng.standard_normal(int(length)), sample_rate)


def default_band_centers(num_bands: int, sample_rate: float) -> tuple:
    """Highest ``num_bands`` nominal octave centres whose upper edge fits below Nyquist."""
    nyquist = sample_rate / 2
    usable = [fc for fc in OCTAVE_CENTERS_HZ if fc * math.sqrt(2.0) <= nyquist]
    if num_bands > len(usable):
        raise InvalidArgumentError(
            f"only {len(usable)} octave bands fit below Nyquist at {sample_rate} Hz, "
            f"{num_bands} requested"
        )
    return tuple(usable[len(usable) - num_bands:])


def _bandpass_taps(center: float, ntaps: int, sample_rate: float, beta: float) -> np.ndarray:
    nyquist = sample_rate / 2
    lo = center / math.sqrt(2.0) / sample_rate
    hi = min(center * math.sqrt(2.0), nyquist) / sample_rate
    m = np.arange(ntaps) - (ntaps - 1) / 2
    h = 2 * hi * np.sinc(2 * hi * m) - 2 * lo * np.sinc(2 * lo * m)
    h *= np.kaiser(ntaps, beta)
    peak = np.abs(np.fft.rfft(h, n=max(1 << 14, 16 * ntaps))).max()
    return h / peak


def init_octave_filterbank(num_bands: int, order: int, sample_rate: float = 48000.0,
                           centers: Sequence[float] | None = None,
                           beta: float = DEFAULT_KAISER_BETA) -> FilterBank:
    """Kaiser-windowed sinc octave band-pass filters with unit peak gain.

    Band edges sit half an octave either side of each centre. Without explicit
    ``centers`` the highest ``num_bands`` nominal octave centres that fit below
    Nyquist are used (31.5 Hz ... 16 kHz for ten bands at 48 kHz).
    """
    if int(num_bands) < 1:
        raise InvalidArgumentError("num_bands must be >= 1")
    if int(order) < 2:
        raise InvalidArgumentError("filter order must be >= 2")
    if centers is None:
        centers = default_band_centers(int(num_bands), sample_rate)
    centers = tuple(float(c) for c in centers)
    if len(centers) != num_bands:
        raise InvalidArgumentError(f"{len(centers)} centres given for {num_bands} bands")
    for fc in centers:
        if not 0 < fc < sample_rate / 2:
            raise InvalidArgumentError(f"band centre {fc} Hz is outside (0, Nyquist={sample_rate / 2})")
    taps = np.stack([_bandpass_taps(fc, int(order) + 1, sample_rate, beta) for fc in centers])
    return FilterBank(taps, centers, sample_rate, beta)


def apply_filterbank(fb: FilterBank, noise: Signal) -> list:
    """Same-length, delay-compensated convolution of ``noise`` with every band."""
    out = fir_filter(_t(noise.samples), _t(fb.taps)).numpy()
    return [Signal(row, noise.sample_rate) for row in out]


def build_envelope_bank(decay_times, grid: TimeGrid) -> EnvelopeBank:
    times = np.asarray(decay_times, dtype=np.float64).reshape(-1)
    if times.size == 0 or not np.all(times > 0) or not np.all(np.isfinite(times)):
        raise InvalidArgumentError("decay times must be finite and positive")
    matrix = envelope_matrix(_t(times), _t(grid.times())).numpy()
    return EnvelopeBank(decay_rates(times), times, grid, matrix)


def compose_amplitudes(log_amps, mask_logits) -> DampingDensity:
    la = np.asarray(log_amps, dtype=np.float64)
    ml = np.asarray(mask_logits, dtype=np.float64)
    if la.shape != ml.shape:
        raise InvalidArgumentError(f"shape mismatch: log_amps {la.shape} vs mask_logits {ml.shape}")
    amps = compose(_t(la), _t(ml)).numpy()
    if not np.all(np.isfinite(amps)):
        raise InvalidArgumentError("amplitudes overflowed")
    return DampingDensity(la, ml, amps)


def synthesize_tail(dd: DampingDensity, env: EnvelopeBank, bands: Sequence[Signal],
                    mix_weights) -> Signal:
    amps = np.atleast_2d(dd.amps)
    mix = np.asarray(mix_weights, dtype=np.float64).reshape(-1)
    m, n = amps.shape
    if env.matrix.shape[0] != n:
        raise InvalidArgumentError(f"damping density has {n} decays, envelope bank {env.matrix.shape[0]}")
    if len(bands) != m or mix.size != m:
        raise InvalidArgumentError(f"expected {m} bands and mix weights, got {len(bands)} and {mix.size}")
    length = env.grid.length
    if any(len(b) != length for b in bands):
        raise InvalidArgumentError(f"every band must have {length} samples")
    stacked = np.stack([b.samples for b in bands])
    out = synthesize(_t(amps), _t(env.matrix), _t(stacked), _t(mix)).numpy()
    return Signal(out, bands[0].sample_rate)
