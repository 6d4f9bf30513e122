"""Training loss and evaluation metrics.

The STFT losses are torch functions so they can sit at the end of the
training graph; passing numpy arrays or :class:`Signal` objects returns plain
floats instead. Energy-decay metrics are numpy only.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from . import _backend
from .errors import InsufficientDecayError, InvalidArgumentError
from .signal_core import FilterBank, Signal, apply_filterbank

LOG_FLOOR = 1e-7
# Floor for the linear EDF relative to its first value (-300 dB).
EDF_FLOOR = 1e-30


@dataclass(frozen=True)
class StftResolution:
    window_size: int
    hop_size: int

    def __post_init__(self):
        if self.window_size < 1 or self.hop_size < 1:
            raise InvalidArgumentError("window and hop sizes must be positive")
        if self.hop_size > self.window_size:
            raise InvalidArgumentError("hop size must not exceed window size")


PAPER_RESOLUTIONS = (
    StftResolution(64, 32),
    StftResolution(512, 256),
    StftResolution(2048, 1024),
    StftResolution(8192, 4096),
)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    if isinstance(x, Signal):
        x = x.samples
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def _out(value: torch.Tensor, plain: bool):
    if not plain:
        return value
    value = value.detach()
    return float(value) if value.ndim == 0 else value.numpy()


def _magnitude(x: torch.Tensor, res: StftResolution) -> torch.Tensor:
    length = x.shape[-1]
    if length < res.window_size:
        raise InvalidArgumentError(
            f"signal of {length} samples is shorter than the {res.window_size}-sample window"
        )
    window = torch.hann_window(res.window_size, periodic=True, dtype=x.dtype)
    flat = x.reshape(-1, length)
    spec = torch.stft(flat, n_fft=res.window_size, hop_length=res.hop_size,
                      window=window, center=False, return_complex=True)
    # abs() has a zero subgradient at the origin, so silent bins stay finite.
    mag = spec.abs().transpose(-1, -2)
    return mag.reshape(*x.shape[:-1], *mag.shape[-2:])


def stft_magnitude(sig, res: StftResolution):
    """Hann-windowed STFT magnitudes, shaped ``[..., frames, bins]``.

    Frames start at sample 0 and advance by ``hop_size``; a trailing partial
    frame is dropped.
    """
    x, plain = _as_tensor(sig)
    return _out(_magnitude(x, res), plain)


def _sc(pm, tm):
    num = torch.linalg.vector_norm(tm - pm, dim=(-2, -1))
    den = torch.linalg.vector_norm(tm, dim=(-2, -1))
    if bool((den == 0).any()):
        raise InvalidArgumentError("target spectrum is identically zero")
    return num / den


def _sm(pm, tm):
    return (torch.log(tm + LOG_FLOOR) - torch.log(pm + LOG_FLOOR)).abs().mean(dim=(-2, -1))


def spectral_convergence(pred, target, res: StftResolution):
    p, plain = _as_tensor(pred)
    t, _ = _as_tensor(target)
    return _out(_sc(_magnitude(p, res), _magnitude(t, res)), plain)


def log_magnitude_loss(pred, target, res: StftResolution):
    p, plain = _as_tensor(pred)
    t, _ = _as_tensor(target)
    return _out(_sm(_magnitude(p, res), _magnitude(t, res)), plain)


def mstft_loss(pred, target, resolutions: Sequence[StftResolution] = PAPER_RESOLUTIONS):
    """Sum of spectral-convergence and log-magnitude losses over resolutions.

    Leading dimensions are treated as a batch; one loss per item is returned.
    """
    p, plain = _as_tensor(pred)
    t, _ = _as_tensor(target)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
    total = 0
    for res in resolutions:
        pm, tm = _magnitude(p, res), _magnitude(t, res)
        total = total + _sc(pm, tm) + _sm(pm, tm)
    return _out(total, plain)


# ---------------------------------------------------------------------------
# Energy decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyDecayFunction:
    """Schroeder backward integral of a squared impulse response.

    ``values_db`` is relative to ``reference_energy``: the first value when
    normalised, otherwise 1.0 (so levels of peak-normalised RIRs compare).
    """

    values_db: np.ndarray
    reference_energy: float
    linear: np.ndarray
    sample_rate: float

    def __len__(self):
        return self.values_db.shape[0]

    @property
    def normalized_db(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.linear, self.linear[0] * EDF_FLOOR) / self.linear[0])


def schroeder_edf(sig, normalize: bool = True, sample_rate: float | None = None) -> EnergyDecayFunction:
    if isinstance(sig, Signal):
        x, fs = sig.samples, sig.sample_rate
    else:
        x, fs = np.asarray(sig, dtype=np.float64), float(sample_rate or 48000.0)
    energy = _backend.backward_energy(np.ascontiguousarray(x, dtype=np.float64))
    if not energy[0] > 0:
        raise InvalidArgumentError("cannot integrate the decay of an all-zero signal")
    ref = float(energy[0]) if normalize else 1.0
    db = 10.0 * np.log10(np.maximum(energy, energy[0] * EDF_FLOOR) / ref)
    return EnergyDecayFunction(db, ref, energy, fs)


def _db_values(edf) -> np.ndarray:
    if isinstance(edf, EnergyDecayFunction):
        return edf.values_db
    return np.asarray(edf, dtype=np.float64)


def edf_errors(pred_edf, true_edf):
    """Mean absolute and root-mean-square difference in dB."""
    p, t = _db_values(pred_edf), _db_values(true_edf)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"EDF length mismatch: {p.shape} vs {t.shape}")
    diff = p - t
    return float(np.mean(np.abs(diff))), float(np.sqrt(np.mean(diff * diff)))


def _line_fit(db, fs, start_db, end_db, limit):
    below_start = np.flatnonzero(db <= start_db)
    below_end = np.flatnonzero(db <= end_db)
    if below_end.size == 0 or below_start.size == 0:
        raise InsufficientDecayError(
            f"energy decay only reaches {db.min():.1f} dB, {end_db} dB needed"
        )
    i0, i1 = below_start[0], below_end[0]
    if i1 >= limit:
        raise InsufficientDecayError(f"{end_db} dB is reached only in the last samples of the record")
    if i1 - i0 < 2:
        raise InsufficientDecayError("too few samples in the fit range")
    t = np.arange(i0, i1 + 1) / fs
    slope, _ = np.polyfit(t, db[i0:i1 + 1], 1)
    if not slope < 0:
        raise InsufficientDecayError("energy decay is not decreasing")
    return slope


def estimate_t60(edf: EnergyDecayFunction, start_db: float = -5.0, end_db: float = -25.0,
                 compensate: bool = True, max_iter: int = 50) -> float:
    """Reverberation time from a straight-line fit to the normalised EDF.

    The fit spans the first crossings of ``start_db`` and ``end_db`` and is
    extrapolated to -60 dB. With ``compensate`` the energy cut off by the end
    of the recording is estimated from the current fit and added back before
    refitting, which removes the downward bend of truncated decays; the loop
    is exact for a sampled exponential. A fit range reaching into the last 5%
    of the record raises :class:`InsufficientDecayError`.
    """
    energy = np.asarray(edf.linear, dtype=np.float64)
    fs = edf.sample_rate
    if not energy[0] > 0:
        raise InvalidArgumentError("EDF has no energy")
    db = 10.0 * np.log10(np.maximum(energy, energy[0] * EDF_FLOOR) / energy[0])
    n = energy.shape[0]
    # the last 5% of the record is dominated by truncation; fits must end before it
    ref = n - max(1, n // 20)
    slope = _line_fit(db, fs, start_db, end_db, ref)
    if not compensate:
        return -60.0 / slope

    for _ in range(max_iter):
        # per-sample energy ratio q of the fitted decay
        log_q = slope / fs * math.log(10.0) / 10.0
        # missing energy past the end: e(ref) / (q^(ref - n) - 1)
        denom = math.expm1(-log_q * (n - ref))
        cut = energy[ref] / denom if denom > 0 else math.inf
        if not math.isfinite(cut):
            raise InsufficientDecayError("decay too slow to extrapolate past the signal end")
        comp = energy + cut
        db = 10.0 * np.log10(comp / comp[0])
        new_slope = _line_fit(db, fs, start_db, end_db, ref)
        done = abs(new_slope - slope) <= 1e-10 * abs(slope)
        slope = new_slope
        if done:
            break
    return -60.0 / slope


def drr(rir, direct_index: int, half_window_ms: float = 1.0, sample_rate: float | None = None) -> float:
    """Direct-to-reverberant ratio in dB.

    Direct energy is summed over ``direct_index +- n0`` (clipped at the
    signal start), reverberant energy over everything after that window.
    """
    if isinstance(rir, Signal):
        x, fs = rir.samples, rir.sample_rate
    else:
        x, fs = np.asarray(rir, dtype=np.float64), float(sample_rate or 48000.0)
    n = x.shape[0]
    if not 0 <= direct_index < n:
        raise InvalidArgumentError(f"direct index {direct_index} outside signal of {n} samples")
    n0 = int(round(fs * half_window_ms / 1000.0))
    stop = direct_index + n0 + 1
    if stop >= n:
        raise InvalidArgumentError("direct-sound window reaches the end of the signal")
    sq = x * x
    direct = float(np.sum(sq[max(0, direct_index - n0):stop]))
    late = float(np.sum(sq[stop:]))
    if late == 0.0:
        raise InvalidArgumentError("no reverberant energy after the direct-sound window")
    if direct == 0.0:
        raise InvalidArgumentError("no energy in the direct-sound window")
    return 10.0 * math.log10(direct / late)


def octave_band_edfs(rir: Signal, fb: FilterBank, normalize: bool = True) -> list:
    return [schroeder_edf(band, normalize=normalize) for band in apply_filterbank(fb, rir)]


def band_t60s(rir: Signal, fb: FilterBank, **fit) -> list:
    """Per-band T60, ``None`` where a band does not decay far enough."""
    out = []
    for edf in octave_band_edfs(rir, fb):
        try:
            out.append(estimate_t60(edf, **fit))
        except InsufficientDecayError:
            out.append(None)
    return out


@dataclass(frozen=True)
class MetricReport:
    mstft: float
    edf_mae_db: float
    edf_rmse_db: float
    t60_mse_s2: float
    drr_mse_db2: float

    FIELDS = ("mstft", "edf_mae_db", "edf_rmse_db", "t60_mse_s2", "drr_mse_db2")

    def __post_init__(self):
        for name in self.FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {value}")

    def as_dict(self) -> dict:
        return asdict(self)
