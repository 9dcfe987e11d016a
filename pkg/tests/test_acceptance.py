"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-9 share one full run on the default configuration (seed 0);
criterion 8 adds a second run into a fresh directory and compares bytes.
"""

import math
import time

import numpy as np
import pytest

from oracles import auc_pairs, central_diff, cosine_xent, rel_error
from voicefp.corpus import load_manifest
from voicefp.embedder import ProjectionHead
from voicefp.evaluation import ScoredTrial, roc, trapezoid_auc
from voicefp.pipeline import ExperimentConfig, run_experiment
from voicefp.trainer import AamConfig, aam_backward, aam_forward, aam_loss, chain_through_head

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def unit_rows(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    return run_experiment(tmp_path_factory.mktemp("accept") / "a", ExperimentConfig())


def test_1_gradient_oracle(report):
    rng = np.random.default_rng(100)
    cfg = AamConfig()
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        x = unit_rows(rng.standard_normal(16))
        W = unit_rows(rng.standard_normal((6, 16)))
        y = int(rng.integers(6))
        gx, gW = aam_backward(x, y, cfg, W)
        worst = max(worst, rel_error(gx, central_diff(lambda v: aam_loss(v, y, W, cfg.scale_s, cfg.margin_m), x)))
        worst = max(worst, rel_error(gW, central_diff(lambda w: aam_loss(x, y, w, cfg.scale_s, cfg.margin_m), W)))
    for _ in range(20):
        d = 12
        head = ProjectionHead(rng.standard_normal((d, d)) * 0.4, rng.standard_normal(d) * 0.2)
        base = unit_rows(rng.standard_normal(d))
        up = rng.standard_normal(d)
        gW, gb = chain_through_head(base, head, up)
        nW = central_diff(lambda w: up @ ProjectionHead(w, head.bias).apply(base), head.weight)
        nb = central_diff(lambda b: up @ ProjectionHead(head.weight, b).apply(base), head.bias)
        worst = max(worst, rel_error(gW, nW), rel_error(gb, nb))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-4 and elapsed < 5.0, f"max relative error {worst:.2e} (<= 1e-4), {elapsed:.2f} s (< 5 s)")


def test_2_loss_reduction(report):
    rng = np.random.default_rng(200)
    cfg = AamConfig(scale_s=1.0, margin_m=0.0)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 10))
        x = unit_rows(rng.standard_normal(24))
        W = unit_rows(rng.standard_normal((k, 24)))
        y = int(rng.integers(k))
        loss, _ = aam_forward(x, y, cfg, W)
        worst = max(worst, abs(loss - cosine_xent(x, y, W)))
    report(2, worst <= 1e-10, f"max |loss - cosine xent| {worst:.2e} over 100 instances (<= 1e-10)")


def test_3_auc_oracle(report):
    rng = np.random.default_rng(300)
    worst = 0.0
    n_tied = 0
    for s in range(50):
        n_pos, n_neg = int(rng.integers(1, 60)), int(rng.integers(1, 60))
        # integer grid guarantees ties within and across classes
        pos = rng.integers(-4, 8, n_pos).astype(float)
        neg = rng.integers(-8, 4, n_neg).astype(float)
        if s % 5 == 0:
            neg[: n_neg // 2] = pos[0]
        n_tied += bool(set(pos) & set(neg))
        trials = [ScoredTrial(f"p{i}", "a", True, v) for i, v in enumerate(pos)]
        trials += [ScoredTrial(f"n{i}", "a", False, v) for i, v in enumerate(neg)]
        c = roc(trials)
        worst = max(worst, abs(trapezoid_auc(c) - auc_pairs(pos, neg)), abs(c.auc - auc_pairs(pos, neg)))
    report(3, worst <= 1e-12 and n_tied >= 10,
           f"max |trapezoid - pair count| {worst:.1e} over 50 sets, {n_tied} with cross-class ties (<= 1e-12)")


def test_4_spoof_detection(report, default_run):
    auc = default_run.spoof.mean_auc
    secs = default_run.timings["generate"] + default_run.timings["spoof"]
    n = len(default_run.spoof.per_identity)
    report(4, auc >= 0.95 and secs < 180.0 and n == 16,
           f"mean AUC {auc:.4f} over {n} identities (>= 0.95), corpus + analysis {secs:.0f} s (< 180 s)")


def test_5_fingerprinting(report, default_run):
    base = default_run.fingerprint_base.mean_auc
    head = default_run.fingerprint_head.mean_auc
    secs = default_run.timings["total"]
    ok = base <= 0.70 and head >= 0.85 and head - base >= 0.15 and secs < 300.0
    report(5, ok, f"held out {list(default_run.test_identities)}: base {base:.4f} (<= 0.70), "
                  f"head {head:.4f} (>= 0.85), gain {head - base:.4f} (>= 0.15), total {secs:.0f} s (< 300 s)")


def test_6_self_only_confusion(report, default_run):
    per = default_run.self_only["per_identity"]
    self_mean = np.mean([v["mean_self_score"] for v in per.values()])
    cross_mean = np.mean([v["mean_cross_score"] for v in per.values()])
    above = default_run.self_only["fraction_others_above_threshold"]
    lower = default_run.self_only["fraction_cross_lower"]
    report(6, cross_mean < self_mean and above >= 0.5,
           f"mean cross {cross_mean:.4f} < mean self {self_mean:.4f} (lower for {lower:.0%} of identities), "
           f"others at/above EER threshold {above:.1%} (>= 50%)")


def test_7_split_disjointness(report, default_run):
    out = default_run.out_dir / "corpus"
    test_ids = set(default_run.test_identities)
    leaks = 0
    scanned = 0
    for name in ("train", "val"):
        for e in load_manifest(out / f"{name}.jsonl").entries:
            scanned += 1
            leaks += e.label.driver in test_ids or e.label.target in test_ids
    m = default_run.manifest
    n = len(m.identities())
    self_pairs = {(e.label.driver, e.label.target) for e in m.entries if e.label.is_self_reenactment}
    cross_pairs = {(e.label.driver, e.label.target) for e in m.entries if e.label.is_cross_reenactment}
    k = m.generator_params["corpus"]["clips_per_pair"]
    c = m.counts()
    ok = (leaks == 0 and len(self_pairs) == n and len(cross_pairs) == n * (n - 1)
          and c["self"] == k * n and c["cross"] == k * n * (n - 1))
    report(7, ok, f"{scanned} train/val entries scanned, {leaks} leaks; {len(self_pairs)} self pairs (N={n}), "
                  f"{len(cross_pairs)} cross pairs (N(N-1)={n * (n - 1)})")


def test_8_determinism(report, default_run):
    first = default_run.out_dir
    second = first.parent / "b"
    run_experiment(second, ExperimentConfig())
    files = ["corpus/manifest.jsonl", "head.json", "reports/spoof/report.json",
             "reports/fingerprint_base/report.json", "reports/fingerprint_head/report.json"]
    diff = [f for f in files if (first / f).read_bytes() != (second / f).read_bytes()]
    report(8, not diff, f"{len(files) - len(diff)}/{len(files)} artifacts bit-identical" + (f", differ: {diff}" if diff else ""))


def test_9_training_sanity(report, default_run):
    losses = [r["mean_loss"] for r in default_run.history]
    ok = len(losses) == 10 and all(math.isfinite(v) for v in losses) and losses[-1] < losses[0]
    report(9, ok, f"epoch 1 loss {losses[0]:.4f} -> epoch {len(losses)} loss {losses[-1]:.4f}, all finite")
