"""The completion network: strided-conv encoder, multihead MLP decoder and
the filtered-noise synthesis stage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .errors import InvalidArgumentError
from .signal_core import (
    DampingDensity,
    Signal,
    TimeGrid,
    compose,
    envelope_matrix,
    fir_filter,
    init_octave_filterbank,
    synthesize,
)


_RSQRT2 = 1.0 / np.sqrt(2.0)


class EncoderBlock(nn.Module):
    """Strided convolution plus a strided 1x1 skip projection.

    The sum is scaled by 1/sqrt(2) so activations keep their scale through a
    deep stack of blocks.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride, negative_slope):
        super().__init__()
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size, stride, padding=kernel_size // 2)
        self.skip = nn.Conv1d(in_channels, out_channels, 1, stride)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, x):
        return (self.act(self.conv(x)) + self.skip(x)) * _RSQRT2


class Encoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        widths = (1,) + tuple(cfg.channels)
        self.blocks = nn.ModuleList(
            EncoderBlock(widths[i], widths[i + 1], cfg.kernel_size, cfg.stride, cfg.negative_slope)
            for i in range(cfg.num_blocks)
        )
        self.pool = nn.AdaptiveAvgPool1d(cfg.pooled_length)
        self.proj = nn.Linear(widths[-1] * cfg.pooled_length, cfg.latent_dim)

    def frames(self, head):
        x = head[:, None, :]
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, head):
        x = self.pool(self.frames(head))
        return self.proj(x.flatten(1))


class Decoder(nn.Module):
    """Shared MLP trunk with a log-amplitude head and a mask-logit head."""

    def __init__(self, latent_dim, cfg):
        super().__init__()
        layers, width = [], latent_dim + cfg.noise_dim
        for _ in range(cfg.hidden_layers):
            layers += [nn.Linear(width, cfg.hidden_width), nn.LeakyReLU(cfg.negative_slope)]
            width = cfg.hidden_width
        self.trunk = nn.Sequential(*layers)
        self.shape = (cfg.num_filters, cfg.num_decays)
        size = cfg.num_filters * cfg.num_decays
        self.log_amp_head = nn.Linear(width, size)
        self.mask_head = nn.Linear(width, size)

    def forward(self, z, v):
        h = self.trunk(torch.cat([z, v], dim=-1))
        return (self.log_amp_head(h).unflatten(-1, self.shape),
                self.mask_head(h).unflatten(-1, self.shape))


def _init_weights(model: nn.Module, negative_slope: float):
    """Fan-in-scaled uniform weights; biases keep their fan-in uniform default.

    Layers followed by a leaky rectifier get its gain, linear layers unit gain,
    so activations keep their scale through the encoder and the MLP trunk and
    the latent vector reaches the output heads. The heads start a factor of
    ten smaller so initial log-amplitudes stay near zero.
    """
    for layer in model.modules():
        if not isinstance(layer, (nn.Conv1d, nn.Linear)):
            continue
        if layer in _linear_layers(model):
            nn.init.kaiming_uniform_(layer.weight, nonlinearity="linear")
        else:
            nn.init.kaiming_uniform_(layer.weight, a=negative_slope, nonlinearity="leaky_relu")
    with torch.no_grad():
        for head in (model.decoder.log_amp_head, model.decoder.mask_head):
            head.weight.mul_(0.1)


def _linear_layers(model) -> list:
    skips = [block.skip for block in model.encoder.blocks]
    return skips + [model.encoder.proj, model.decoder.log_amp_head, model.decoder.mask_head]


@dataclass
class Completion:
    tail: torch.Tensor
    log_amps: torch.Tensor
    mask_logits: torch.Tensor
    amps: torch.Tensor
    envelopes: torch.Tensor


class DecorModel(nn.Module):
    """Head -> (damping density, tail).

    Trainable tensors: encoder and decoder weights, the decay times (one per
    exponential, clamped after every optimiser step), the FIR filterbank taps
    and the band mixing weights.
    """

    def __init__(self, config: RunConfig, seed: int = 0):
        super().__init__()
        self.config = config
        sig, dec = config.signal, config.decoder
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = Encoder(config.encoder)
            self.decoder = Decoder(config.encoder.latent_dim, dec)
            _init_weights(self, dec.negative_slope)
        fb = init_octave_filterbank(dec.num_filters, dec.fir_order, sig.sample_rate)
        lo, hi = dec.decay_time_range
        self.decay_times = nn.Parameter(torch.linspace(lo, hi, dec.num_decays, dtype=torch.float64).float())
        self.taps = nn.Parameter(torch.from_numpy(fb.taps).float())
        # equal band weights: a band drawn near zero would be starved from the start
        self.mix = nn.Parameter(torch.full((dec.num_filters,), 1.0 / np.sqrt(dec.num_filters)))
        grid = TimeGrid.tail(sig.sample_rate, sig.head_s, sig.tail_s)
        self.register_buffer("times", torch.from_numpy(grid.times()).float(), persistent=False)
        # fixed per-band scale giving every initial carrier unit variance
        gain = 1.0 / np.sqrt(np.sum(fb.taps ** 2, axis=1))
        self.register_buffer("carrier_gain", torch.from_numpy(gain).float(), persistent=False)
        self.band_centers_hz = fb.band_centers_hz

    # -- sizes ---------------------------------------------------------------

    @property
    def head_length(self) -> int:
        return self.config.signal.head_length

    @property
    def tail_length(self) -> int:
        return self.config.signal.tail_length

    @property
    def noise_length(self) -> int:
        """White-noise samples drawn per tail: the tail plus filter warm-up on both sides."""
        return self.tail_length + 2 * (self.config.decoder.fir_order // 2)

    @property
    def noise_dim(self) -> int:
        return self.config.decoder.noise_dim

    # -- stages --------------------------------------------------------------

    def envelopes(self) -> torch.Tensor:
        return envelope_matrix(self.decay_times, self.times.to(self.decay_times.dtype))

    def carriers(self, noise: torch.Tensor) -> torch.Tensor:
        pad = self.config.decoder.fir_order // 2
        bands = fir_filter(noise, self.taps)[..., pad:pad + self.tail_length]
        return bands * self.carrier_gain[:, None]

    def decode(self, z, v):
        log_amps, mask_logits = self.decoder(z, v)
        amps = compose(log_amps, mask_logits)
        return log_amps, mask_logits, amps, torch.matmul(amps, self.envelopes())

    def forward(self, head, v, noise) -> Completion:
        if head.shape[-1] != self.head_length:
            raise InvalidArgumentError(f"head must have {self.head_length} samples, got {head.shape[-1]}")
        if noise.shape[-1] != self.noise_length:
            raise InvalidArgumentError(f"noise must have {self.noise_length} samples, got {noise.shape[-1]}")
        z = self.encoder(head)
        log_amps, mask_logits, amps, _ = self.decode(z, v)
        env = self.envelopes()
        tail = synthesize(amps, env, self.carriers(noise), self.mix)
        return Completion(tail, log_amps, mask_logits, amps, env)

    @torch.no_grad()
    def clamp_decay_times(self):
        lo, hi = self.config.decoder.decay_clamp
        self.decay_times.clamp_(lo, hi)


# ---------------------------------------------------------------------------
# numpy-facing helpers
# ---------------------------------------------------------------------------


def draw_inputs(seed: int, noise_dim: int, noise_length: int):
    """Latent noise vector ``v`` and white-noise carrier input for one seed."""
    v_ss, w_ss = np.random.SeedSequence(seed).spawn(2)
    v = np.random.default_rng(v_ss).standard_normal(noise_dim)
    w = np.random.default_rng(w_ss).standard_normal(noise_length)
    return v, w


def _param_dtype(model):
    return model.decay_times.dtype


def _head_tensor(head, model):
    x = head.samples if isinstance(head, Signal) else np.asarray(head, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.head_length:
        raise InvalidArgumentError(f"head must have exactly {model.head_length} samples, got {x.shape}")
    return torch.as_tensor(x, dtype=_param_dtype(model))[None]


def _dd(log_amps, mask_logits, amps) -> DampingDensity:
    to = lambda t: t.detach().double().numpy()[0]  # noqa: E731
    return DampingDensity(to(log_amps), to(mask_logits), to(amps))


@torch.no_grad()
def encode(head, model: DecorModel) -> np.ndarray:
    return model.encoder(_head_tensor(head, model))[0].double().numpy()


@torch.no_grad()
def decode(z, v, model: DecorModel):
    """Return ``(DampingDensity, envelopes Y [M, T])`` for latent ``z`` and noise ``v``."""
    dtype = _param_dtype(model)
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if z.shape != (model.config.encoder.latent_dim,):
        raise InvalidArgumentError(f"z must have length {model.config.encoder.latent_dim}")
    if v.shape != (model.noise_dim,):
        raise InvalidArgumentError(f"v must have length {model.noise_dim}")
    la, ml, amps, y = model.decode(torch.as_tensor(z, dtype=dtype)[None], torch.as_tensor(v, dtype=dtype)[None])
    return _dd(la, ml, amps), y[0].double().numpy()


@torch.no_grad()
def complete(head, model: DecorModel, seed: int, v=None):
    """Predict the tail for ``head``. Returns ``(Signal, DampingDensity)``."""
    dtype = _param_dtype(model)
    x = _head_tensor(head, model)
    v_draw, w = draw_inputs(seed, model.noise_dim, model.noise_length)
    v = v_draw if v is None else np.asarray(v, dtype=np.float64)
    out = model(x, torch.as_tensor(v, dtype=dtype)[None], torch.as_tensor(w, dtype=dtype)[None])
    tail = Signal(out.tail[0].double().numpy(), model.config.signal.sample_rate)
    return tail, _dd(out.log_amps, out.mask_logits, out.amps)


def damping_density(head, model: DecorModel, seed: int, v=None) -> DampingDensity:
    return complete(head, model, seed, v)[1]
