"""Acceptance checks, one test per criterion.

Each test records a pass/fail line (printed in the terminal summary) and
then asserts, so the full run fails on any unmet criterion.
"""

import csv
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from deepmix.bench import bench_augmentor
from deepmix.container import FormatError, decode, encode
from deepmix.corpus import build_corpus
from deepmix.episode import episode_loss
from deepmix.experiment import ExperimentConfig, run_experiment, run_experiment_config
from deepmix.metrics import FrameResult, reset_eval, success_auc
from deepmix.mix import BoundingBox, MixKernelPair, deepmix_combine, sample_mix_conv
from deepmix.mixnet import (
    load_weights,
    mixnet_forward,
    mixnet_init,
    mixnet_value_and_grad,
    save_weights,
    train_mixnet,
)
from deepmix.opt import OptConfig, deepmix_opt, opt_gradient, opt_objective
from deepmix.sequence import Difficulty, gen_sequence
from deepmix.tensor import conv2d, conv2d_grad, make_rng
from deepmix.tracker import Augmentor, TrackerConfig, run_tracker
from oracles import central_fd, rel_err, small_episode, tap_combine, tap_sample_mix


def mixing_kernel(r, k, n, dtype):
    """Random signed kernel with unit L1 norm per output, the scale of an averaging kernel."""
    w = r.uniform(-1, 1, (k, n, 3, 3))
    return (w / np.abs(w).sum(axis=(1, 2, 3), keepdims=True)).astype(dtype)


def random_mix_instance(r, dtype):
    n, k, c = (int(v) for v in r.integers(1, 5, size=3))
    c = min(c, 3)
    h, w = (int(v) for v in r.integers(1, 7, size=2))
    x = r.uniform(-1, 1, (n, c, h, w)).astype(dtype)
    w_obj = mixing_kernel(r, k, n, dtype)
    w_bkg = mixing_kernel(r, k, n, dtype)
    mask = (r.random((k, c, h, w)) < 0.5).astype(dtype)
    return x, w_obj, w_bkg, mask


def test_criterion_01_mixing_matches_loop_oracle(report):
    r = np.random.default_rng(101)
    tol = {np.float32: 1e-6, np.float64: 1e-12}
    worst = {np.float32: 0.0, np.float64: 0.0}
    t0 = time.perf_counter()
    instances = 120
    for _ in range(instances):
        for dtype in (np.float32, np.float64):
            x, w_obj, w_bkg, mask = random_mix_instance(r, dtype)
            got = sample_mix_conv(x, w_obj)
            err = np.abs(got - tap_sample_mix(x, w_obj)).max()
            comb = deepmix_combine(x, MixKernelPair(w_obj, w_bkg), mask)
            err = max(err, np.abs(comb - tap_combine(x, w_obj, w_bkg, mask)).max())
            assert got.dtype == comb.dtype == dtype
            worst[dtype] = max(worst[dtype], float(err))
    elapsed = time.perf_counter() - t0
    ok = all(worst[d] <= tol[d] for d in tol) and elapsed < 10
    report(1, ok, f"{instances} instances x 2 dtypes, max err f32 {worst[np.float32]:.2e} "
                  f"f64 {worst[np.float64]:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_mixing_invariants(report):
    r = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        x, w_obj, w_bkg, mask = random_mix_instance(r, np.float64)
        k, n = w_obj.shape[:2]
        # delta kernel picks one sample unchanged
        pick = r.integers(0, n, size=k)
        delta = np.zeros_like(w_obj)
        delta[np.arange(k), pick, 1, 1] = 1.0
        worst = max(worst, np.abs(sample_mix_conv(x, delta) - x[pick]).max())
        # all-ones mask keeps only the object branch
        ones = np.ones_like(mask)
        worst = max(worst, np.abs(deepmix_combine(x, MixKernelPair(w_obj, w_bkg), ones)
                                  - sample_mix_conv(x, w_obj)).max())
        # equal branches make the mask irrelevant
        same = MixKernelPair(w_obj, w_obj.copy())
        worst = max(worst, np.abs(deepmix_combine(x, same, mask) - deepmix_combine(x, same, 1 - mask)).max())
    ok = worst <= 1e-6
    report(2, ok, f"100 instances, max deviation {worst:.2e}")
    assert ok


def _conv_fd_errors(r, count):
    errs = []
    for _ in range(count):
        n, cin, cout = (int(v) for v in r.integers(1, 4, size=3))
        kh = int(r.choice([1, 3]))
        p = int(r.integers(0, 2))
        h, w = (int(v) for v in r.integers(kh, 6, size=2))
        x = r.standard_normal((n, cin, h, w))
        k = r.standard_normal((cout, cin, kh, kh))
        g = r.standard_normal(conv2d(x, k, p).shape)
        gi, gk = conv2d_grad(x, k, g, p)
        errs.append(rel_err(gi, central_fd(lambda v: float((conv2d(v, k, p) * g).sum()), x)))
        errs.append(rel_err(gk, central_fd(lambda v: float((conv2d(x, v, p) * g).sum()), k)))
    return errs


def _mixnet_fd_errors(r, count):
    errs = []
    for i in range(count):
        mode = ("classifier", "siamese")[i % 2]
        branches = ("dual", "single")[(i // 2) % 2]
        ep = small_episode(r, mode, n=3, c=2, h=5, w=5)
        k = 3 if mode == "classifier" else 1
        w = mixnet_init(3, k, branches, make_rng(i), dtype=np.float64)
        for name in w.params:
            w.params[name] = w.params[name] + 0.2 * r.standard_normal(w.params[name].shape)
        _, grads = mixnet_value_and_grad(w, ep)
        for name, g in grads.items():
            def f(v, name=name):
                ww = w.copy()
                ww.params[name] = v
                return episode_loss(mixnet_forward(ww, ep.samples), ep)
            coords = r.choice(g.size, size=min(g.size, 6), replace=False)
            fd = central_fd(f, w.params[name], coords=coords)
            errs.append(rel_err(g.ravel()[coords], fd.ravel()[coords]))
    return errs


def _opt_fd_errors(r, count):
    errs = []
    for i in range(count):
        mode = ("classifier", "siamese")[i % 2]
        ep = small_episode(r, mode, n=3, c=2, h=5, w=5)
        k = 3 if mode == "classifier" else 1
        pair = MixKernelPair(r.uniform(-0.5, 0.5, (k, 3, 3, 3)), r.uniform(-0.5, 0.5, (k, 3, 3, 3)))
        g_obj, g_bkg = opt_gradient(pair, ep)
        fd_obj = central_fd(lambda v: opt_objective(MixKernelPair(v, pair.w_bkg), ep), pair.w_obj)
        fd_bkg = central_fd(lambda v: opt_objective(MixKernelPair(pair.w_obj, v), ep), pair.w_bkg)
        errs.append(rel_err(np.concatenate([g_obj.ravel(), g_bkg.ravel()]),
                            np.concatenate([fd_obj.ravel(), fd_bkg.ravel()])))
    return errs


def test_criterion_03_gradients_match_finite_differences(report):
    r = np.random.default_rng(303)
    t0 = time.perf_counter()
    groups = {
        "conv2d_grad": _conv_fd_errors(r, 20),
        "mixnet": _mixnet_fd_errors(r, 20),
        "opt_gradient": _opt_fd_errors(r, 20),
    }
    elapsed = time.perf_counter() - t0
    worst = {k: max(v) for k, v in groups.items()}
    ok = all(v <= 1e-5 for v in worst.values()) and elapsed < 60
    report(3, ok, "20 instances each, max rel err "
           + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")
    assert ok


def test_criterion_04_opt_trace_non_increasing(report):
    r = np.random.default_rng(404)
    bad = []
    for seed in range(50):
        mode = ("classifier", "siamese")[seed % 2]
        ep = small_episode(r, mode, n=4, c=3, h=6, w=6, q=2)
        _, trace = deepmix_opt(ep, OptConfig(iterations=10))
        assert len(trace) == 11
        if any(b > a for a, b in zip(trace, trace[1:])):
            bad.append(seed)
    ok = not bad
    report(4, ok, f"50 seeds, non-monotone: {bad or 'none'}")
    assert ok


def test_criterion_05_mixnet_faster_than_opt(report):
    shape = (50, 32, 22, 22)
    net = bench_augmentor(shape, "mixnet", repetitions=10)
    opt = bench_augmentor(shape, "opt", repetitions=3)
    ratio = opt.median / net.median
    ok = ratio >= 2
    report(5, ok, f"median mixnet {net.median * 1e3:.1f} ms, opt {opt.median * 1e3:.1f} ms, "
                  f"speed-up {ratio:.1f}x")
    assert ok


@pytest.mark.slow
def test_criterion_06_trained_mixnet_beats_baseline(report, tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(reset=False, timing=False)
    corpus = build_corpus(cfg.mode, cfg.corpus_config)
    losses = {}
    for branches in ("dual", "single"):
        result = train_mixnet(corpus, cfg.train_config, branches=branches, blend=cfg.blend)
        losses[branches] = result.loss_history
        save_weights(result.weights, tmp_path / f"{branches}.dmix")
    aucs = []
    for seed in range(1, 6):
        run = replace(cfg, seed=seed, weights=str(tmp_path / "dual.dmix"),
                      single_weights=str(tmp_path / "single.dmix"), out=str(tmp_path / f"seed{seed}"))
        summary = run_experiment_config(run)["augmentors"]
        aucs.append({name: summary[name]["auc"] for name in ("none", "mixnet", "single")})
    elapsed = time.perf_counter() - t0
    wins = sum(a["mixnet"] >= a["none"] for a in aucs)
    mean = {name: float(np.mean([a[name] for a in aucs])) for name in ("none", "mixnet", "single")}
    learned = all(h[-1] < h[0] for h in losses.values())
    ok = wins >= 4 and mean["mixnet"] >= mean["single"] and elapsed < 900 and learned
    report(6, ok, f"dual >= none on {wins}/5 seeds; mean AUC none {mean['none']:.4f} "
                  f"dual {mean['mixnet']:.4f} single {mean['single']:.4f}; {elapsed:.0f}s")
    assert ok


def test_criterion_07_zero_augmentation_weight_is_baseline(report):
    seq = gen_sequence(77, 60, Difficulty())
    r = np.random.default_rng(7)
    identical = True
    for mode in ("classifier", "siamese"):
        k = 50 if mode == "classifier" else 1
        n = 50 if mode == "classifier" else 15
        cfg0 = TrackerConfig.for_mode(mode)
        cfg = replace(cfg0, blend=replace(cfg0.blend, alpha_aug=0.0, alpha_raw=1.0))
        base = run_tracker(seq, mode, Augmentor("none"), cfg0)
        augs = [Augmentor("opt")]
        for branches, name in (("dual", "mixnet"), ("single", "single")):
            w = mixnet_init(n, k, branches, make_rng(3))
            for p in w.params:
                w.params[p] = w.params[p] + 0.05 * r.standard_normal(w.params[p].shape).astype(np.float32)
            augs.append(Augmentor(name, w))
        for aug in augs:
            res = run_tracker(seq, mode, aug, cfg)
            identical &= res.boxes == base.boxes and res.peaks == base.peaks
    report(7, identical, "alpha_aug=0 runs (mixnet, single, opt; both modes) equal the baseline bit for bit")
    assert identical


def test_criterion_08_reset_fixture(report):
    truth = [BoundingBox(10.0, 10.0, 10.0, 10.0)] * 30
    starts = []

    def runner(start):
        starts.append(start)
        for t in range(start, len(truth)):
            yield t, (BoundingBox(500.0, 500.0, 10.0, 10.0) if t == 12 else truth[t])

    res = reset_eval(runner, truth)
    ok = res.robustness == 1 and res.failures == [12] and res.restarts == [17] and starts == [0, 17]
    report(8, ok, f"robustness {res.robustness}, failure at {res.failures}, restart at {res.restarts}")
    assert ok


BOX_COLUMNS = ("pred_x", "pred_y", "pred_w", "pred_h", "gt_x", "gt_y", "gt_w", "gt_h")


def _recompute_summary(frames_csv):
    """Metrics straight from the CSV columns, with no package code."""
    per_seq = {}
    with open(frames_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            per_seq.setdefault(row["seq_id"], []).append(row)
    aucs, precs, nprecs = [], [], []
    frames, seconds = 0, 0.0
    for rows in per_seq.values():
        ious = []
        for row in rows:
            px, py, pw, ph, gx, gy, gw, gh = (float(row[k]) for k in BOX_COLUMNS)
            ix = max(0.0, min(px + pw, gx + gw) - max(px, gx))
            iy = max(0.0, min(py + ph, gy + gh) - max(py, gy))
            inter = ix * iy
            union = pw * ph + gw * gh - inter
            ious.append(inter / union if union > 0 else 0.0)
            seconds += float(row["frame_seconds"])
            frames += 1
        rates = [sum(v > t for v in ious) / len(ious) for t in (i / 20 for i in range(21))]
        aucs.append(sum(rates) / 21)
        errs, nerrs = [], []
        for row in rows:
            pc = (float(row["pred_x"]) + float(row["pred_w"]) / 2, float(row["pred_y"]) + float(row["pred_h"]) / 2)
            gc = (float(row["gt_x"]) + float(row["gt_w"]) / 2, float(row["gt_y"]) + float(row["gt_h"]) / 2)
            d = math.hypot(pc[0] - gc[0], pc[1] - gc[1])
            errs.append(d)
            nerrs.append(d / math.hypot(float(row["gt_w"]), float(row["gt_h"])))
        precs.append(sum(e <= 20 for e in errs) / len(errs))
        nprecs.append(sum(e <= 0.2 for e in nerrs) / len(nerrs))
    return {
        "auc": sum(aucs) / len(aucs),
        "precision": sum(precs) / len(precs),
        "norm_precision": sum(nprecs) / len(nprecs),
        "mean_fps": frames / seconds,
    }


def test_criterion_09_metric_fixtures_and_summary(report, tmp_path):
    truth = BoundingBox(0.0, 0.0, 10.0, 10.0)
    half = BoundingBox(0.0, 0.0, 10.0, 5.0)  # IoU exactly 0.5
    fixtures = [
        ([truth] * 4, 20 / 21),
        ([BoundingBox(50.0, 50.0, 10.0, 10.0)] * 4, 0.0),
        ([half], 10 / 21),
    ]
    fixture_err = max(abs(success_auc([FrameResult("s", i, p, truth) for i, p in enumerate(preds)]) - want)
                      for preds, want in fixtures)
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"sequences = 2\nframes = 30\naugmentors = none, opt\nout = {tmp_path}\n", encoding="utf-8")
    assert run_experiment(cfg) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())["augmentors"]
    summary_err = 0.0
    for name in ("none", "opt"):
        want = _recompute_summary(tmp_path / f"frames_{name}.csv")
        for key, value in want.items():
            summary_err = max(summary_err, abs(summary[name][key] - value))
        with open(tmp_path / f"reset_{name}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        scored = sum(int(r["scored_frames"]) for r in rows)
        assert summary[name]["robustness"] == sum(int(r["failures"]) for r in rows)
        summary_err = max(summary_err, abs(summary[name]["accuracy"]
                                           - sum(float(r["overlap_sum"]) for r in rows) / scored))
    ok = fixture_err <= 1e-9 and summary_err <= 1e-9
    report(9, ok, f"fixture err {fixture_err:.1e}, summary vs recomputation err {summary_err:.1e}")
    assert ok


def test_criterion_10_weight_file_round_trip(report, tmp_path):
    w = mixnet_init(5, 5, "dual", make_rng(10))
    r = np.random.default_rng(10)
    for name in w.params:
        w.params[name] = r.standard_normal(w.params[name].shape).astype(np.float32)
    path = tmp_path / "w.dmix"
    save_weights(w, path)
    back = load_weights(path)
    exact = back.params.keys() == w.params.keys() and all(
        back.params[k].dtype == w.params[k].dtype and back.params[k].tobytes() == w.params[k].tobytes()
        for k in w.params)
    data = path.read_bytes()
    corrupt = [b"DMIY" + data[4:], data[:4] + (2).to_bytes(4, "little") + data[8:],
               data[:8] + (999).to_bytes(4, "little") + data[12:], data[:10]]
    rejected = 0
    for bad in corrupt:
        try:
            decode(bad)
        except FormatError:
            rejected += 1
    ok = exact and rejected == len(corrupt) and decode(encode(w.params)).keys() == w.params.keys()
    report(10, ok, f"bit-exact round trip: {exact}; corrupted headers rejected {rejected}/{len(corrupt)}")
    assert ok


def test_criterion_11_runs_are_reproducible(report, tmp_path):
    text = ("sequences = 2\nframes = 30\naugmentors = none, mixnet, opt\ntiming = off\n"
            "train_videos = 3\ntrain_frames = 20\nepochs = 1\nsamples_per_epoch = 3\n")
    outputs = []
    for run in ("a", "b"):
        cfg = tmp_path / f"{run}.cfg"
        cfg.write_text(text + f"out = {tmp_path / run}\n", encoding="utf-8")
        assert run_experiment(cfg) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
    same = outputs[0] == outputs[1]
    report(11, same, f"{len(outputs[0])} output files byte-identical across two runs")
    assert same
