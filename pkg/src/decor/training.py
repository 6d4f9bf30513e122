"""Loss/gradient evaluation, the optimiser, the training loop and evaluation.

Every stochastic draw is keyed on ``numpy.random.SeedSequence``: the epoch
shuffle on ``(seed, epoch)``, each training example's noise on
``(seed, epoch, batch, position)`` and validation noise on ``(seed, 0, index)``.
A resumed run therefore replays exactly the trajectory of an uninterrupted one.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .config import RunConfig, TrainConfig
from .data import RIRRecord
from .errors import InsufficientDecayError, InvalidArgumentError, TrainingDivergenceError
from .metrics import MetricReport, StftResolution, drr, edf_errors, estimate_t60, mstft_loss, schroeder_edf
from .model import DecorModel, complete, draw_inputs
from .signal_core import Signal

LOSS_LOG = "loss_log.csv"
LAST_CKPT = "last.ckpt"
BEST_CKPT = "best.ckpt"


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def stack_records(records: Sequence[RIRRecord], dtype=torch.float32):
    """``(heads [B, Lh], tails [B, T])`` tensors for a list of records."""
    heads = np.stack([r.head.samples for r in records])
    tails = np.stack([r.tail.samples for r in records])
    return torch.as_tensor(heads, dtype=dtype), torch.as_tensor(tails, dtype=dtype)


def noise_inputs(model: DecorModel, seeds: Sequence[int]):
    dtype = model.decay_times.dtype
    draws = [draw_inputs(int(s), model.noise_dim, model.noise_length) for s in seeds]
    v = torch.as_tensor(np.stack([d[0] for d in draws]), dtype=dtype)
    w = torch.as_tensor(np.stack([d[1] for d in draws]), dtype=dtype)
    return v, w


def batch_loss(model: DecorModel, heads, tails, seeds) -> torch.Tensor:
    """Mean multi-resolution STFT loss of the completions of a batch."""
    if heads.shape[0] == 0:
        raise InvalidArgumentError("batch is empty")
    if tails.shape[-1] != model.tail_length:
        raise InvalidArgumentError(f"tails must have {model.tail_length} samples, got {tails.shape[-1]}")
    v, w = noise_inputs(model, seeds)
    pred = model(heads, v, w).tail
    return mstft_loss(pred, tails, model.config.train.stft_resolutions()).mean()


def _diagnostics(model, **extra):
    norms = {name: float(p.detach().double().norm()) for name, p in model.named_parameters()}
    return {**extra, "param_norms": norms}


def forward_backward(model: DecorModel, heads, tails, seeds):
    """Return ``(loss, grads)`` with one gradient tensor per named parameter."""
    loss = batch_loss(model, heads, tails, seeds)
    if not torch.isfinite(loss):
        raise TrainingDivergenceError("loss is not finite", _diagnostics(model, loss=float(loss.detach())))
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params)
    bad = [n for n, g in zip(names, grads) if not bool(torch.isfinite(g).all())]
    if bad:
        raise TrainingDivergenceError(f"non-finite gradients in {bad}", _diagnostics(model, loss=float(loss.detach())))
    return float(loss.detach()), dict(zip(names, grads))


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """First and second moment estimates plus the step counter."""

    step: int
    exp_avg: dict
    exp_avg_sq: dict

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls(0, {k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()})


def decayed_names(model: DecorModel) -> set:
    """Parameters subject to weight decay: conv and linear weight matrices only."""
    return {n for n, _ in model.named_parameters() if n.endswith(".weight")}


@torch.no_grad()
def optimizer_step(params: dict, grads: dict, state: OptimizerState, config: TrainConfig,
                   decay: set | None = None, clamp: dict | None = None) -> OptimizerState:
    """Adaptive-moment update with decoupled weight decay, applied in place.

    ``decay`` names the parameters that receive weight decay (all when
    ``None``); ``clamp`` maps parameter names to ``(lo, hi)`` bounds enforced
    after the update.
    """
    b1, b2 = config.betas
    lr, eps, wd = config.learning_rate, config.eps, config.weight_decay
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if wd and (decay is None or name in decay):
            p.mul_(1.0 - lr * wd)
        m = state.exp_avg[name].mul_(b1).add_(g, alpha=1.0 - b1)
        v = state.exp_avg_sq[name].mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    for name, (lo, hi) in (clamp or {}).items():
        params[name].clamp_(lo, hi)
    return state


def model_step(model: DecorModel, grads: dict, state: OptimizerState) -> OptimizerState:
    params = dict(model.named_parameters())
    return optimizer_step(params, grads, state, model.config.train, decayed_names(model),
                          {"decay_times": model.config.decoder.decay_clamp})


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _example_seeds(seed: int, epoch: int, batch: int, size: int) -> list:
    return [int(s) for s in np.random.SeedSequence([seed, epoch, batch]).generate_state(size)]


def _valid_seeds(seed: int, count: int) -> list:
    return [int(s) for s in np.random.SeedSequence([seed, 0]).generate_state(count)] if count else []


def _shuffle(seed: int, epoch: int, count: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(count)


@torch.no_grad()
def validation_loss(model: DecorModel, records: Sequence[RIRRecord], seed: int, batch_size: int = 16) -> float:
    if not records:
        return math.nan
    seeds = _valid_seeds(seed, len(records))
    total = 0.0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        heads, tails = stack_records(chunk, model.decay_times.dtype)
        v, w = noise_inputs(model, seeds[start:start + len(chunk)])
        pred = model(heads, v, w).tail
        total += float(mstft_loss(pred, tails, model.config.train.stft_resolutions()).sum())
    return total / len(records)


@dataclass
class TrainResult:
    model: DecorModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = math.inf
    initial_valid: float = math.nan
    out_dir: Path | None = None


def train(config: RunConfig, train_records: Sequence[RIRRecord], valid_records: Sequence[RIRRecord],
          out_dir, model: DecorModel | None = None, resume=None,
          progress: Callable[[str], None] | None = None) -> TrainResult:
    """Train for ``config.train.epochs`` epochs.

    Writes ``last.ckpt`` after every epoch, ``best.ckpt`` whenever the
    validation MSTFT improves (training loss when there is no validation
    split) and appends ``epoch,train_loss,valid_loss`` to ``loss_log.csv``.
    With ``resume`` (a checkpoint path) the run continues from the epoch after
    the stored one and appends to the existing log.
    """
    tr = config.train
    if not train_records:
        raise InvalidArgumentError("training split is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / LOSS_LOG
    say = progress or (lambda _msg: None)

    if resume is not None:
        stored = ckpt_io.read_checkpoint(resume)
        stored.config = stored.config.with_overrides({"train": {"epochs": tr.epochs}})
        model = ckpt_io.load_model(stored)
        config = model.config
        tr = config.train
        state = OptimizerState.zeros_like(dict(model.named_parameters()))
        m, v = stored.optimizer_tensors()
        for name in state.exp_avg:
            state.exp_avg[name] = torch.from_numpy(m[name].copy())
            state.exp_avg_sq[name] = torch.from_numpy(v[name].copy())
        state.step = int(stored.meta.get("optimizer_step", 0))
        start = int(stored.meta["epoch"]) + 1
        best_valid = float(stored.meta.get("best_valid", math.inf))
        best_epoch = int(stored.meta.get("best_epoch", 0))
        initial = float(stored.meta.get("initial_valid", math.nan))
    else:
        model = model if model is not None else DecorModel(config, seed=tr.seed)
        state = OptimizerState.zeros_like(dict(model.named_parameters()))
        start, best_valid, best_epoch = 1, math.inf, 0
        initial = validation_loss(model, valid_records, tr.seed, tr.batch_size)
        log_path.write_text("")

    result = TrainResult(model, [], best_epoch, best_valid, initial, out)
    n = len(train_records)
    for epoch in range(start, tr.epochs + 1):
        t0 = time.perf_counter()
        order = _shuffle(tr.seed, epoch, n)
        total = 0.0
        for b, lo in enumerate(range(0, n, tr.batch_size)):
            idx = order[lo:lo + tr.batch_size]
            heads, tails = stack_records([train_records[i] for i in idx], model.decay_times.dtype)
            try:
                loss, grads = forward_backward(model, heads, tails, _example_seeds(tr.seed, epoch, b, len(idx)))
            except TrainingDivergenceError as exc:
                exc.diagnostics.update(epoch=epoch, batch=b)
                (out / "divergence.json").write_text(json.dumps(exc.diagnostics, indent=1, sort_keys=True))
                raise
            model_step(model, grads, state)
            total += loss * len(idx)
        train_loss = total / n
        valid_loss = validation_loss(model, valid_records, tr.seed, tr.batch_size)
        score = valid_loss if valid_records else train_loss
        if score < best_valid:
            best_valid, best_epoch = score, epoch
        meta = {"epoch": epoch, "best_valid": best_valid, "best_epoch": best_epoch,
                "initial_valid": initial, "train_loss": train_loss, "valid_loss": valid_loss}
        if best_epoch == epoch:
            ckpt_io.save_checkpoint(out / BEST_CKPT, model, state, meta)
        ckpt_io.save_checkpoint(out / LAST_CKPT, model, state, meta)
        with log_path.open("a") as fh:
            fh.write(f"{epoch},{train_loss!r},{valid_loss!r}\n")
        result.history.append((epoch, train_loss, valid_loss))
        say(f"epoch {epoch}: train {train_loss:.4f} valid {valid_loss:.4f} ({time.perf_counter() - t0:.1f} s)")
    result.best_epoch, result.best_valid = best_epoch, best_valid
    return result


def read_loss_log(path) -> list:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            e, t, v = line.split(",")
            rows.append((int(e), float(t), float(v)))
    return rows


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


# reported when a decay is too slow to fit at all (upper decay-time clamp)
MAX_T60_S = 10.0


def broadband_t60(sig: Signal) -> float:
    """T60 for metric reporting; never raises on decaying-too-little inputs.

    Tries the compensated -5..-25 dB fit, then the plain fit, then a line
    through the whole EDF ahead of its last 5%, capped at ``MAX_T60_S``.
    """
    edf = schroeder_edf(sig)
    for compensate in (True, False):
        try:
            return estimate_t60(edf, compensate=compensate)
        except InsufficientDecayError:
            pass
    db = edf.values_db[:len(edf) - max(1, len(edf) // 20)]
    if db.size < 2:
        return MAX_T60_S
    slope = np.polyfit(np.arange(db.size) / edf.sample_rate, db, 1)[0]
    return MAX_T60_S if slope >= -60.0 / MAX_T60_S else -60.0 / slope


def example_metrics(record: RIRRecord, pred_tail: Signal, resolutions) -> MetricReport:
    """Metric row for one record: squared errors in the T60 and DRR columns."""
    true_full = record.full
    pred_full = Signal(np.concatenate([record.head.samples, pred_tail.samples]), record.sample_rate)
    mstft = float(mstft_loss(pred_tail, record.tail, resolutions))
    mae, rmse = edf_errors(schroeder_edf(pred_full, normalize=False), schroeder_edf(true_full, normalize=False))
    t60_err = (broadband_t60(pred_full) - broadband_t60(true_full)) ** 2
    d = record.direct_index
    drr_err = (drr(pred_full, d) - drr(true_full, d)) ** 2
    return MetricReport(mstft, mae, rmse, t60_err, drr_err)


@dataclass
class Evaluation:
    ids: list
    rows: list
    mean: MetricReport

    def to_csv(self) -> str:
        head = "id," + ",".join(MetricReport.FIELDS)
        lines = [head] + [f"{i}," + ",".join(repr(getattr(r, f)) for f in MetricReport.FIELDS)
                          for i, r in zip(self.ids, self.rows)]
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        return json.dumps({"count": len(self.rows), "mean": self.mean.as_dict()}, indent=2)

    def table(self) -> str:
        widths = [max(len(f), 12) for f in MetricReport.FIELDS]
        head = " | ".join(f.rjust(w) for f, w in zip(MetricReport.FIELDS, widths))
        vals = " | ".join(f"{getattr(self.mean, f):.6g}".rjust(w) for f, w in zip(MetricReport.FIELDS, widths))
        return f"{head}\n{'-' * len(head)}\n{vals}\n"


def mean_report(rows: Sequence[MetricReport]) -> MetricReport:
    return MetricReport(*(float(np.mean([getattr(r, f) for r in rows])) for f in MetricReport.FIELDS))


def evaluate(model: DecorModel | None, records: Sequence[RIRRecord], seed: int = 0,
             oracle: bool = False) -> Evaluation:
    """Per-example and mean metrics of completions of ``records``.

    Example ``k`` is completed with seed ``SeedSequence([seed, k])``. With
    ``oracle`` the true tails stand in for predictions, which must give an
    all-zero report.
    """
    if not records:
        raise InvalidArgumentError("evaluation split is empty")
    if model is None and not oracle:
        raise InvalidArgumentError("a model is required unless oracle mode is used")
    resolutions = (model.config.train.stft_resolutions() if model is not None
                   else _default_resolutions(records[0]))
    rows = []
    for k, rec in enumerate(records):
        if oracle:
            pred = rec.tail
        else:
            s = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
            pred, _ = complete(rec.head, model, s)
        rows.append(example_metrics(rec, pred, resolutions))
    return Evaluation([r.id for r in records], rows, mean_report(rows))


def _default_resolutions(record: RIRRecord):
    length = len(record.tail)
    out = tuple(r for r in TrainConfig().stft_resolutions() if r.window_size <= length)
    return out or (StftResolution(length, length),)
