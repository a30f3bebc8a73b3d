"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines also appear in the
terminal summary.
"""

import dataclasses
import time

import numpy as np
import pytest

from wafl import storage
from wafl.datamodel import PadConfig, stack_padded
from wafl.evaluation import EvalConfig, Proposal, average_precision, average_recall_at_n, evaluate, oracle_ap, score_dataset
from wafl.gradcheck import check_loss, check_realign, random_layer
from wafl.loss import ACAConfig, aca_grad, aca_loss
from wafl.model import checkpoint_bytes, init_bundle, init_realign, load_checkpoint, save_checkpoint
from wafl.synth import SynthConfig, generate, pooled_raw_features, separation_statistic, split
from wafl.trainer import TrainConfig, checkpoint_config, train

RESULTS: list[str] = []

E2E_SYNTH = SynthConfig(n_videos=700, tokens_per_video=(5, 50), fake_token_rate=0.1, run_length=(1, 1),
                        artifact_amplitude=1.0, k_v=32, k_a=32, seed=42)
E2E_PAD = PadConfig(target_T_v=16, target_T_a=32)
# 2,000 iterations cannot hold the default 2,500-step warmup; keep the ramp at a tenth of the run
E2E_TRAIN = TrainConfig(iterations=2000, warmup=200, pad=E2E_PAD)
N_TEST = 200


def record(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} | {detail}"
    RESULTS.append(line)
    print(line)


@pytest.fixture(scope="module")
def e2e():
    train_set, test_set = split(generate(E2E_SYNTH), N_TEST)
    t0 = time.perf_counter()
    bundle = init_bundle(32, 32, E2E_TRAIN.model, seed=E2E_TRAIN.seed)
    result = train(train_set, bundle, E2E_TRAIN)
    report = evaluate(test_set, score_dataset(bundle, test_set, E2E_PAD))
    elapsed = time.perf_counter() - t0
    return {"train": train_set, "test": test_set, "bundle": bundle, "result": result,
            "report": report, "elapsed": elapsed}


def test_criterion_1_loss_gradient_oracles():
    t0 = time.perf_counter()
    results = [check_loss(kind) for kind in ("aca", "bce", "focal")]
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_err for r in results)
    ok = all(r.passed for r in results) and elapsed < 1.0
    record(1, "loss gradient oracles", ok, f"max rel err {worst:.2e} (< 1e-4), {elapsed:.3f}s (< 1s)")
    assert ok


def test_criterion_2_dead_zone():
    p = np.concatenate([np.linspace(0.0, 0.05, 10_001), [0.05, np.nextafter(0.05, 0)]])
    y = np.zeros(p.size, dtype=int)
    loss, grad = aca_loss(p, y, ACAConfig()), aca_grad(p, y, ACAConfig())
    ok = bool(np.all(loss == 0.0) and np.all(grad == 0.0))
    record(2, "ACA dead zone", ok, f"{p.size} points p <= 0.05, max |loss| {np.abs(loss).max()}, "
                                   f"max |grad| {np.abs(grad).max()}")
    assert ok


def test_criterion_3_realign_zero_init_and_backward():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_fwd = 0.0
    for i in range(100):
        layer = init_realign(6, 5, 2, seed=i)
        X = rng.normal(size=(int(rng.integers(1, 20)), 6))
        worst_fwd = max(worst_fwd, float(np.abs(layer.forward(X) - X @ layer.W0.T).max()))
    grads = check_realign(random_layer(k=6, d=5, r=2, dropout=0.0, seed=3))
    worst_bwd = max(r.max_rel_err for r in grads)
    elapsed = time.perf_counter() - t0
    ok = worst_fwd == 0.0 and all(r.passed for r in grads) and elapsed < 5.0
    record(3, "realignment zero-init and backward", ok,
           f"forward max err {worst_fwd}, backward max rel err {worst_bwd:.2e} (< 1e-4), {elapsed:.2f}s (< 5s)")
    assert ok


def _random_instance(rng):
    gt, props = {}, []
    for v in range(int(rng.integers(1, 5))):
        vid = f"v{v}"
        starts = rng.integers(0, 12, size=int(rng.integers(0, 4))) / 2
        gt[vid] = [(float(s), float(s + rng.integers(1, 5) / 2)) for s in starts]
        for _ in range(int(rng.integers(0, 7))):
            s = rng.integers(0, 12) / 2
            # coarse scores so ties are common
            score = float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]))
            props.append(Proposal(float(s), float(s + rng.integers(1, 5) / 2), score, vid))
    return props, gt


def test_criterion_4_metric_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        props, gt = _random_instance(rng)
        tau = float(rng.choice([0.5, 0.75, 0.95]))
        worst = max(worst, abs(average_precision(props, gt, tau)[0] - oracle_ap(props, gt, tau)))
    fixture_ap = average_precision([Proposal(3, 4, 0.95, "v"), Proposal(1, 2, 0.9, "v")], {"v": [(1, 2)]}, 0.5)[0]
    fixture_ar = average_recall_at_n({"v": [Proposal(1, 1.8, 0.9, "v")]}, {"v": [(1, 2)]}, 1, EvalConfig())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and abs(fixture_ap - 0.5) <= 1e-12 and abs(fixture_ar - 0.7) <= 1e-12 and elapsed < 10
    record(4, "metric oracle equivalence", ok,
           f"max |AP - oracle| {worst:.1e} over 1000 instances, fixture AP {fixture_ap}, "
           f"fixture AR@1 {fixture_ar:.12g}, {elapsed:.2f}s (< 10s)")
    assert ok


@pytest.mark.slow
def test_criterion_5_end_to_end(e2e):
    rep = e2e["report"]
    ap95, ar5 = rep.ap[0.95], rep.ar[5]
    ok = ap95 >= 0.95 and ar5 >= 0.95 and e2e["elapsed"] < 300
    record(5, "end-to-end synthetic localization", ok,
           f"AP@0.95 {ap95:.4f} (>= 0.95), AR@5 {ar5:.4f} (>= 0.95), {e2e['elapsed']:.1f}s (< 300s)")
    assert ok


@pytest.mark.slow
def test_criterion_6_ablation_ordering():
    cfg = dataclasses.replace(E2E_SYNTH, fake_token_rate=0.05)
    train_set, test_set = split(generate(cfg), N_TEST)
    medians = {}
    for kind in ("aca", "focal", "bce"):
        aps = []
        for seed in (0, 1, 2):
            tcfg = dataclasses.replace(E2E_TRAIN, loss_kind=kind, seed=seed)
            bundle = init_bundle(32, 32, tcfg.model, seed=seed)
            train(train_set, bundle, tcfg)
            aps.append(evaluate(test_set, score_dataset(bundle, test_set, E2E_PAD)).ap[0.95])
        medians[kind] = float(np.median(aps))
    ok = medians["aca"] >= medians["focal"] >= medians["bce"]
    record(6, "ablation ordering ACA >= Focal >= BCE", ok,
           "median AP@0.95 " + ", ".join(f"{k} {v:.5f}" for k, v in medians.items()))
    assert ok


@pytest.mark.slow
def test_criterion_7_separability(e2e):
    test_set, bundle = e2e["test"], e2e["bundle"]
    xv, xa = stack_padded(test_set, E2E_PAD, dtype=np.float64)
    after = separation_statistic(test_set, bundle.fused_features(xv, xa))
    before = separation_statistic(test_set, pooled_raw_features(test_set, E2E_PAD))
    ratio = after / before
    ok = ratio >= 5.0
    record(7, "separability gain", ok, f"raw {before:.4f}, fused {after:.4f}, ratio {ratio:.2f}x (>= 5x)")
    assert ok


@pytest.mark.slow
def test_criterion_8_sampler_and_determinism(e2e):
    counts = e2e["result"].batch_fake_counts
    balanced = len(counts) == E2E_TRAIN.iterations and all(c == 32 for c in counts)
    again = init_bundle(32, 32, E2E_TRAIN.model, seed=E2E_TRAIN.seed)
    train(e2e["train"], again, E2E_TRAIN)
    report2 = evaluate(e2e["test"], score_dataset(again, e2e["test"], E2E_PAD))
    cfg = checkpoint_config(E2E_TRAIN)
    same_ckpt = checkpoint_bytes(e2e["bundle"], cfg) == checkpoint_bytes(again, cfg)
    same_params = all(np.array_equal(a, again.tensors()[k]) for k, a in e2e["bundle"].tensors().items())
    same_report = e2e["report"].to_json() == report2.to_json()
    ok = balanced and same_ckpt and same_params and same_report
    record(8, "sampler and determinism", ok,
           f"{sum(c == 32 for c in counts)}/{len(counts)} batches 32+32, identical checkpoint {same_ckpt}, "
           f"identical params {same_params}, identical report {same_report}")
    assert ok


@pytest.mark.slow
def test_criterion_9_format_round_trips(e2e, tmp_path):
    ds = e2e["test"]
    storage.save_manifest(ds.videos, tmp_path / "m1.json")
    storage.save_manifest(storage.load_manifest(tmp_path / "m1.json"), tmp_path / "m2.json")
    storage.save_features(ds.feature_store, tmp_path / "f1.bin")
    storage.save_features(storage.load_features(tmp_path / "f1.bin"), tmp_path / "f2.bin")
    save_checkpoint(e2e["bundle"], tmp_path / "c1.ckpt", checkpoint_config(E2E_TRAIN))
    bundle, cfg = load_checkpoint(tmp_path / "c1.ckpt")
    save_checkpoint(bundle, tmp_path / "c2.ckpt", {k: v for k, v in cfg.items() if k != "layers"})
    same = {name: (tmp_path / f"{name[0]}1.{ext}").read_bytes() == (tmp_path / f"{name[0]}2.{ext}").read_bytes()
            for name, ext in (("manifest", "json"), ("features", "bin"), ("checkpoint", "ckpt"))}
    magic = ((tmp_path / "f1.bin").read_bytes()[:8], (tmp_path / "c1.ckpt").read_bytes()[:8])
    ok = all(same.values()) and magic == (b"WAFLFT01", b"WAFLCKP1")
    record(9, "format round-trips", ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok
