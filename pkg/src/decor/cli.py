"""``decor`` command-line interface.

Subcommands: ``synth-data``, ``train``, ``init``, ``complete``, ``evaluate``
and ``inspect``. Exit codes: 0 success, 2 invalid arguments, 3 data or parse
error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import PRESETS, RunConfig, load_config, preset
from .data import DatasetManifest, load_records, normalize_and_trim, resample, write_synth_corpus
from .errors import InvalidArgumentError, ParseError, TrainingDivergenceError
from .model import DecorModel, complete
from .signal_core import Signal
from .training import evaluate, train
from .wav import load_wav, write_wav

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

PRESET_HELP = """\
presets:
  paper  48 kHz; head 50 ms (2400 samples), tail 950 ms (45600 samples);
         9 encoder blocks, latent 128; noise vector 32; 7 x 512 MLP;
         10 octave filters of order 1023; 20 decay times 0.05-3.0 s;
         lr 5e-4, batch 128, 2000 epochs; STFT windows 64/512/2048/8192
  desk   16 kHz; head 50 ms, tail 450 ms; 6 encoder blocks; 7 x 256 MLP;
         4 filters of order 255; 10 decay times; lr 1e-4, batch 16,
         100 epochs; STFT windows 32/128/512/2048
  tiny   8 kHz gradient-check size; 2 blocks, 2 filters, 4 decay times
"""


def _config(args) -> RunConfig:
    cfg = preset(args.preset)
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    return cfg


def _add_config_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="hyperparameter preset (default: desk)")
    p.add_argument("--config", type=Path, help="JSON file patching the preset, mirroring RunConfig fields")


def _require_seed(args):
    if args.seed is None:
        raise InvalidArgumentError(f"{args.command} needs --seed")


def cmd_synth_data(args) -> int:
    _require_seed(args)
    cfg = _config(args)
    if args.count < 1:
        raise InvalidArgumentError("--count must be >= 1")
    manifest = write_synth_corpus(args.out, args.count, args.seed, cfg, tuple(args.fractions))
    sizes = {s: len(manifest.split(s)) for s in ("train", "valid", "test")}
    print(f"wrote {args.count} records to {args.out} ({sizes})")
    return EXIT_OK


def _manifest(path):
    manifest = DatasetManifest.load(path)
    return manifest, Path(path).parent


def cmd_train(args) -> int:
    _require_seed(args)
    cfg = _config(args)
    patch = {"train": {"seed": args.seed}}
    if args.epochs is not None:
        patch["train"]["epochs"] = args.epochs
    cfg = cfg.with_overrides(patch)
    manifest, root = _manifest(args.manifest)
    if manifest.sample_rate != cfg.signal.sample_rate:
        print(f"note: resampling corpus from {manifest.sample_rate} Hz to {cfg.signal.sample_rate} Hz")
    train_recs = load_records(manifest, root, "train", cfg.signal)
    valid_recs = load_records(manifest, root, "valid", cfg.signal)
    if args.limit is not None:
        train_recs = train_recs[:args.limit]
        valid_recs = valid_recs[:args.limit]
    print(cfg.to_json())
    print(f"training on {len(train_recs)} records, validating on {len(valid_recs)}")
    result = train(cfg, train_recs, valid_recs, args.out, resume=args.resume, progress=print)
    print(f"best epoch {result.best_epoch}: valid {result.best_valid:.6g}")
    return EXIT_OK


def cmd_init(args) -> int:
    _require_seed(args)
    cfg = _config(args).with_overrides({"train": {"seed": args.seed}})
    model = DecorModel(cfg, seed=args.seed)
    ckpt_io.save_checkpoint(args.out, model, meta={"epoch": 0})
    print(f"wrote untrained {cfg.preset} checkpoint to {args.out}")
    return EXIT_OK


def _input_head(path, model):
    sig = load_wav(path)
    fs = model.config.signal.sample_rate
    if sig.sample_rate != fs:
        sig = resample(sig, fs)
    sig, _ = normalize_and_trim(sig)
    if len(sig) < model.head_length:
        raise InvalidArgumentError(
            f"{path}: {len(sig)} samples after trimming, the head needs {model.head_length}"
        )
    return Signal(sig.samples[:model.head_length], fs)


def cmd_complete(args) -> int:
    _require_seed(args)
    model = ckpt_io.load_model(ckpt_io.read_checkpoint(args.checkpoint))
    head = _input_head(args.input, model)
    tail, dd = complete(head, model, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    write_wav(out / f"{stem}.tail.wav", tail)
    write_wav(out / f"{stem}.completed.wav", Signal(np.concatenate([head.samples, tail.samples]), tail.sample_rate))
    decay = model.decay_times.detach().double().numpy()
    lines = [",".join(repr(float(t)) for t in decay)]
    lines += [",".join(repr(float(a)) for a in row) for row in dd.amps]
    (out / f"{stem}.damping.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {stem}.tail.wav, {stem}.completed.wav, {stem}.damping.csv to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.oracle:
        _require_seed(args)
    model = ckpt_io.load_model(ckpt_io.read_checkpoint(args.checkpoint))
    manifest, root = _manifest(args.manifest)
    records = load_records(manifest, root, args.split, model.config.signal)
    if not records:
        raise InvalidArgumentError(f"split {args.split!r} is empty")
    result = evaluate(model, records, seed=args.seed or 0, oracle=args.oracle)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.split}_per_example.csv").write_text(result.to_csv())
        (out / f"{args.split}_summary.json").write_text(result.summary_json() + "\n")
    print(result.table(), end="")
    print(result.summary_json())
    return EXIT_OK


def cmd_inspect(args) -> int:
    text = ckpt_io.inspect_text(ckpt_io.read_checkpoint(args.checkpoint))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decor",
        description="Room impulse response completion: predict the late tail from the first 50 ms.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=PRESET_HELP,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic RIR corpus with truth parameters",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=PRESET_HELP)
    _add_config_flags(p)
    p.add_argument("--count", type=int, required=True, help="number of records")
    p.add_argument("--seed", type=int, help="corpus seed (required)")
    p.add_argument("--out", type=Path, required=True, help="corpus directory")
    p.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1),
                   metavar=("TRAIN", "VALID", "TEST"), help="split fractions (default 0.8 0.1 0.1)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model on a manifest's train split",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=PRESET_HELP)
    _add_config_flags(p)
    p.add_argument("--manifest", type=Path, required=True, help="manifest.json of the corpus")
    p.add_argument("--seed", type=int, help="initialisation, shuffle and noise seed (required)")
    p.add_argument("--out", type=Path, required=True, help="run directory for checkpoints and loss log")
    p.add_argument("--epochs", type=int, help="override the preset epoch count")
    p.add_argument("--limit", type=int, help="use at most this many train and valid records")
    p.add_argument("--resume", type=Path, help="continue from this checkpoint (usually last.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("init", help="write an untrained checkpoint")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, help="initialisation seed (required)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("complete", help="complete a head (or full RIR) WAV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="head or full RIR WAV")
    p.add_argument("--seed", type=int, help="noise seed (required)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("evaluate", help="metric report over a manifest split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--seed", type=int, help="completion seed (required unless --oracle)")
    p.add_argument("--oracle", action="store_true", help="score the true tails as predictions")
    p.add_argument("--out", type=Path, help="directory for per-example CSV and summary JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="dump config, tensor shapes, decay grid and filter responses")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write the dump here instead of stdout")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
