"""One test per acceptance criterion, each at its stated tolerance."""
import math
import time

import numpy as np
import pytest
import torch

from decor.checkpoint import inspect_text, load_model, read_checkpoint, save_checkpoint
from decor.config import preset
from decor.data import SynthSpec, synth_corpus, synth_rir
from decor.metrics import estimate_t60, mstft_loss, schroeder_edf
from decor.model import DecorModel, complete, damping_density, draw_inputs
from decor.signal_core import Signal, TimeGrid, build_envelope_bank
from decor.training import (
    OptimizerState,
    batch_loss,
    evaluate,
    forward_backward,
    model_step,
    stack_records,
    train,
)
from decor.wav import load_wav, write_wav

FD_STEP = 1e-4


def gradient_errors(model, heads, tails, seeds, per_tensor=3):
    """Worst relative error per parameter tensor between autograd and
    central differences, over its largest gradient entries."""
    _, grads = forward_backward(model, heads, tails, seeds)
    worst = {}
    for name, p in model.named_parameters():
        g = grads[name].reshape(-1)
        errs = []
        for i in torch.argsort(g.abs(), descending=True)[:per_tensor].tolist():
            flat = p.data.view(-1)
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + FD_STEP
                up = batch_loss(model, heads, tails, seeds).item()
                flat[i] = orig - FD_STEP
                down = batch_loss(model, heads, tails, seeds).item()
                flat[i] = orig
            fd = (up - down) / (2 * FD_STEP)
            errs.append(abs(fd - g[i].item()) / max(abs(fd), abs(g[i].item()), 1e-12))
        worst[name] = max(errs)
    return worst


def test_1_gradient_check(report):
    t0 = time.perf_counter()
    cfg = preset("tiny")
    model = DecorModel(cfg, seed=0).double()
    heads, tails = stack_records(synth_corpus(2, 0, cfg), torch.float64)
    worst = gradient_errors(model, heads, tails, [1, 2])
    elapsed = time.perf_counter() - t0
    err = max(worst.values())
    ok = err <= 1e-4 and elapsed <= 60
    report(1, ok, f"max rel err {err:.2e} over {len(worst)} tensors (<= 1e-4), {elapsed:.1f} s (<= 60 s)")
    assert ok, worst


def test_2_identities(report):
    x = np.random.default_rng(0).standard_normal(8192)
    zero_loss = mstft_loss(x, x)
    recs = synth_corpus(3, 1, preset("tiny"))
    oracle = evaluate(None, recs, oracle=True).mean.as_dict()
    edf = schroeder_edf(np.ones(4)).values_db
    expected = [0.0, -1.249, -3.010, -6.021]
    edf_err = float(np.max(np.abs(edf - expected)))
    ok = zero_loss == 0.0 and all(v == 0.0 for v in oracle.values()) and edf_err <= 1e-3
    report(2, ok, f"mstft(x,x)={zero_loss}, oracle row {list(oracle.values())}, EDF[1,1,1,1] err {edf_err:.1e}")
    assert ok


def test_3_envelope_closed_form(report):
    times = np.linspace(0.05, 3.0, 20)
    env = build_envelope_bank(times, TimeGrid.tail(48000))
    err = max(abs(math.exp(-b * t) - 1e-3) for b, t in zip(env.decay_rates, times))
    ok = err <= 1e-9
    report(3, ok, f"max |exp(-b T) - 1e-3| = {err:.1e} over 20 grid points (<= 1e-9)")
    assert ok


def test_4_t60_round_trip(report):
    errs = {}
    for t60 in (0.2, 0.5, 1.0, 2.0):
        rec = synth_rir(SynthSpec.single_slope(t60), seed=0)
        errs[t60] = abs(estimate_t60(schroeder_edf(rec.tail)) / t60 - 1)
    ok = max(errs.values()) <= 0.05
    report(4, ok, "relative errors " + ", ".join(f"{t}s {e:.1%}" for t, e in errs.items()) + " (<= 5%)")
    assert ok


def test_5_overfit_one(report):
    cfg = preset("desk")
    model = DecorModel(cfg, seed=0)
    heads, tails = stack_records(synth_corpus(1, 5, cfg))
    state = OptimizerState.zeros_like(dict(model.named_parameters()))
    t0 = time.perf_counter()
    losses = []
    for step in range(200):
        loss, grads = forward_backward(model, heads, tails, [step])
        model_step(model, grads, state)
        losses.append(loss)
    elapsed = time.perf_counter() - t0
    ratio = losses[-1] / losses[0]
    ok = ratio <= 0.1 and elapsed <= 300
    report(5, ok, f"loss {losses[0]:.2f} -> {losses[-1]:.2f} ({ratio:.1%} <= 10%), {elapsed:.0f} s (<= 300 s)")
    assert ok


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    cfg = preset("desk")
    records = synth_corpus(640, 11, cfg)
    train_recs, valid_recs, test_recs = records[:512], records[512:576], records[576:]
    t0 = time.perf_counter()
    untrained = evaluate(DecorModel(cfg, seed=cfg.train.seed), test_recs, seed=1)
    out = tmp_path_factory.mktemp("desk_run")
    train(cfg, train_recs, valid_recs, out)
    model = load_model(read_checkpoint(out / "best.ckpt"))
    trained = evaluate(model, test_recs, seed=1)
    return cfg, model, test_recs, untrained, trained, time.perf_counter() - t0


def test_6a_mstft_halved(report, desk_run):
    cfg, _, _, untrained, trained, elapsed = desk_run
    ratio = trained.mean.mstft / untrained.mean.mstft
    ok = ratio <= 0.5 and cfg.train.epochs <= 100 and elapsed <= 1800
    report("6a", ok, f"MSTFT {untrained.mean.mstft:.2f} -> {trained.mean.mstft:.2f} (ratio {ratio:.3f} <= 0.5), "
                     f"{cfg.train.epochs} epochs, {elapsed:.0f} s (<= 1800 s)")
    assert ok


def test_6b_t60_mse(report, desk_run):
    _, _, _, _, trained, _ = desk_run
    mse = trained.mean.t60_mse_s2
    ok = mse <= 0.05
    report("6b", ok, f"broadband T60 MSE {mse:.4f} s^2 (<= 0.05)")
    assert ok


def test_6c_dominant_decay(report, desk_run):
    _, model, test_recs, _, _, _ = desk_run
    grid = model.decay_times.detach().double().numpy()
    hits = total = 0
    for k, rec in enumerate(test_recs):
        if not rec.is_single_slope:
            continue
        amps = damping_density(rec.head, model, seed=k).amps
        for m, band in enumerate(rec.truth_params["decay_times"]):
            nearest = int(np.argmin(np.abs(grid - band[0])))
            hits += abs(int(np.argmax(amps[m])) - nearest) <= 1
            total += 1
    frac = hits / total
    ok = frac >= 0.7
    report("6c", ok, f"argmax within one grid step for {hits}/{total} filters ({frac:.1%} >= 70%)")
    assert ok


def test_7_determinism_and_formats(report, tmp_path):
    cfg = preset("desk")
    model = DecorModel(cfg, seed=2)
    head = synth_corpus(1, 4, cfg)[0].head
    a, dda = complete(head, model, seed=9)
    b, ddb = complete(head, model, seed=9)
    same_run = np.array_equal(a.samples, b.samples) and np.array_equal(dda.amps, ddb.amps)
    same_draw = all(np.array_equal(x, y) for x, y in zip(draw_inputs(3, 8, 64), draw_inputs(3, 8, 64)))
    path = save_checkpoint(tmp_path / "m.ckpt", model, meta={"epoch": 0})
    first = read_checkpoint(path)
    save_checkpoint(tmp_path / "again.ckpt", load_model(first), meta={"epoch": 0})
    second = read_checkpoint(tmp_path / "again.ckpt")
    same_ckpt = inspect_text(first) == inspect_text(second) and path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    x = np.random.default_rng(0).standard_normal(1000).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "x.wav", Signal(x, 16000))
    same_wav = np.array_equal(load_wav(tmp_path / "x.wav").samples, x)
    ok = same_run and same_draw and same_ckpt and same_wav
    report(7, ok, f"repeat run {same_run}, seeded draws {same_draw}, checkpoint round-trip {same_ckpt}, "
                  f"WAV float round-trip {same_wav}")
    assert ok


def test_8_paper_shapes(report):
    cfg = preset("paper")
    model = DecorModel(cfg)
    head = torch.zeros(1, cfg.signal.head_length)
    z = model.encoder(head)
    la, ml = model.decoder(z, torch.zeros(1, cfg.decoder.noise_dim))
    shapes = {
        "head": cfg.signal.head_length,
        "tail": model.envelopes().shape[-1],
        "z": z.shape[-1],
        "A": tuple(la.shape[-2:]),
        "taps": model.taps.shape[-1],
    }
    ok = shapes == {"head": 2400, "tail": 45600, "z": 128, "A": (10, 20), "taps": 1024}
    report(8, ok, f"{shapes}")
    assert ok
