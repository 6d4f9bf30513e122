"""Room impulse response completion with exponentially decaying filtered noise."""
from ._backend import BACKEND
from .checkpoint import Checkpoint, load_model, read_checkpoint, save_checkpoint
from .config import RunConfig, load_config, preset
from .data import (
    DatasetManifest,
    RIRRecord,
    SynthSpec,
    build_manifest,
    load_records,
    normalize_and_trim,
    prepare_rir,
    resample,
    split_head_tail,
    synth_corpus,
    synth_rir,
)
from .errors import (
    DecorError,
    InsufficientDecayError,
    InvalidArgumentError,
    ParseError,
    TrainingDivergenceError,
    UnsupportedFormatError,
)
from .metrics import (
    MetricReport,
    StftResolution,
    drr,
    edf_errors,
    estimate_t60,
    log_magnitude_loss,
    mstft_loss,
    schroeder_edf,
    spectral_convergence,
    stft_magnitude,
)
from .model import DecorModel, complete, damping_density, decode, encode
from .signal_core import (
    DampingDensity,
    EnvelopeBank,
    FilterBank,
    Signal,
    TimeGrid,
    apply_filterbank,
    build_envelope_bank,
    compose_amplitudes,
    generate_white_noise,
    init_octave_filterbank,
    synthesize_tail,
)
from .training import evaluate, forward_backward, optimizer_step, train
from .wav import load_wav, write_wav

__version__ = "0.1.0"
