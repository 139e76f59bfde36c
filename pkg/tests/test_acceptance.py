"""End-to-end acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one ``criterion N: PASS|FAIL ...`` line, printed in the
terminal summary, before asserting.
"""

import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from rdae_sid import dsp, synth
from rdae_sid.augmentation import (
    DEFAULT_SNR_LEVELS,
    SnrCondition,
    build_multicondition,
    highpass_noise,
)
from rdae_sid.cache import write_cache
from rdae_sid.features import log_mel_spectrogram
from rdae_sid.harness import experiment as E
from rdae_sid.harness.folds import group_speakers, make_fold_plan
from rdae_sid.harness.grid import select_best
from rdae_sid.harness.report import emit_report, parse_metrics_csv
from rdae_sid.neural.models import Rdae, SnnClassifier, classify, rdae_forward
from rdae_sid.neural.training import TrainConfig, replay_early_stopping
from rdae_sid.pipeline import synthetic_feature_sets

import gradsuite
from conftest import ACCEPTANCE_LINES, make_feature_set

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
LOW_SNRS = ("-5", "0", "5")
_RUNS: dict = {}


def verdict(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def corpus():
    """5 speakers x 60 s, 3 synthetic noises x 6 SNRs, seed 0."""
    return synthetic_feature_sets(n_speakers=5, seconds_per_speaker=60, seed=0)


def run(corpus, system, seed):
    key = (system, seed)
    if key not in _RUNS:
        features = corpus["handcrafted" if system == "handcrafted" else "mel"]
        _RUNS[key] = E.run_system(system, features, seed=seed)
    return _RUNS[key]


# ---------------------------------------------------------------- 1


def test_criterion_1_shape_pipeline():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    seg = synth.synth_utterance(synth.make_profiles(1, 0)[0], 1.0, 0).samples
    mel = log_mel_spectrogram(seg)
    rdae = Rdae.initialized(40, rng)
    emb, recon = rdae_forward(mel, rdae)
    snn = SnnClassifier.initialized(1080, 5, rng)
    p = classify(emb, snn)
    elapsed = time.perf_counter() - start
    ok = (
        seg.shape == (16000,)
        and mel.shape == (27, 140)
        and emb.shape == (1080,)
        and recon.shape == (27, 140)
        and p.shape == (5,)
        and abs(p.sum() - 1) <= 1e-9
        and elapsed < 1.0
    )
    verdict(1, ok, f"mel {mel.shape}, embedding {emb.shape}, recon {recon.shape}, sum(p)-1={p.sum() - 1:.1e}, {elapsed:.2f}s")


# ---------------------------------------------------------------- 2


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    worst = {name: max(check(seed) for seed in range(10)) for name, check in gradsuite.SUITE.items()}
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(2, ok, f"max rel err over 10 seeds: {detail}; {elapsed:.0f}s")


# ---------------------------------------------------------------- 3


def test_criterion_3_snr_fidelity():
    start = time.perf_counter()
    # six sources: each synthetic kind at two seeds
    noises = [
        highpass_noise(synth.synth_noise(kind, 10, s))
        for kind in synth.NOISE_KINDS
        for s in (0, 1)
    ]
    noises = [replace(n, name=f"{n.name}{i % 2}") for i, n in enumerate(noises)]
    profile = synth.make_profiles(1, 3)[0]
    speech = synth.synth_utterance(profile, 2.0, 0)
    segs = [s for s in dsp.segment_and_vad(speech) if s.is_speech]
    # a near-full-scale square wave forces the clipping rescale at low SNR
    loud = dsp.Segment(0.99 * np.sign(np.sin(2 * np.pi * 250 * np.arange(16000) / 16000)), "loud", 0, True, "x")
    segs.append(loud)
    snrs = [SnrCondition(None)] + [SnrCondition(v) for v in DEFAULT_SNR_LEVELS]
    out = build_multicondition(segs, noises, snrs, rng_seed=11)
    clean = {s.group_key: s.samples for s in segs}
    worst, combos, rescaled = 0.0, set(), 0
    for o in out:
        if o.snr.is_clean:
            continue
        s = o.rescale_factor * clean[o.group_key]
        noise_part = o.samples - s  # measured from the stored mixture
        realized = 10 * np.log10(np.mean(s**2) / np.mean(noise_part**2))
        worst = max(worst, abs(realized - o.snr.db))
        combos.add((o.noise_name, o.snr.db))
        rescaled += o.rescale_factor < 1
        assert np.max(np.abs(o.samples)) <= 1 + 1e-12
    elapsed = time.perf_counter() - start
    ok = len(combos) == 36 and worst <= 0.01 and rescaled > 0 and elapsed < 60
    verdict(3, ok, f"{len(combos)} combinations, worst |realized-target| {worst:.2e} dB, {rescaled} rescaled mixtures, {elapsed:.1f}s")


# ---------------------------------------------------------------- 4


def test_criterion_4_leakage_freedom():
    start = time.perf_counter()
    # exhaustive bucket check on 5 speakers x 420 groups x 37 versions
    records = [
        {"group_key": f"s{s}_u{g // 10:03d}#{g % 10:05d}", "speaker_id": f"s{s}"}
        for s in range(5)
        for g in range(420)
        for _ in range(37)
    ]
    plan = make_fold_plan(records, seed=0)
    bucket_of = {}
    for b, keys in enumerate(plan.buckets()):
        for k in keys:
            assert k not in bucket_of
            bucket_of[k] = b
    spans = sum(1 for r in records if r["group_key"] not in bucket_of)
    buckets_per_group = {}
    for r in records:
        buckets_per_group.setdefault(r["group_key"], set()).add(bucket_of[r["group_key"]])
    spanning = sum(len(v) > 1 for v in buckets_per_group.values()) + spans
    n_groups = len(group_speakers(records))

    # instrumented counter across a full nested run on 2000 groups
    fs = make_feature_set(n_speakers=5, groups_per_speaker=400, versions=(("clean", None), ("0", "white"), ("-5", "pink")),
                          shape=(40,), kind="handcrafted")
    res = E.run_system("handcrafted", fs, seed=0, base_config=TrainConfig(epochs=2, patience=1, snn_hidden=16))
    elapsed = time.perf_counter() - start
    ok = n_groups >= 2000 and spanning == 0 and res.test_reads_before_evaluation == 0 and fs.audit.protected_reads == 1 and elapsed < 60
    verdict(4, ok, f"{n_groups} groups, {spanning} spanning buckets, {res.test_reads_before_evaluation} test reads before evaluation, {elapsed:.1f}s")


# ---------------------------------------------------------------- 5 and 6


def test_criterion_5_end_to_end_learning(corpus):
    start = time.perf_counter()
    j = {s: run(corpus, "jrdae", s).per_snr["clean"] for s in SEEDS}
    h = {s: run(corpus, "handcrafted", s).per_snr["clean"] for s in SEEDS}
    elapsed = time.perf_counter() - start
    j_pass = sum(v >= 0.80 for v in j.values())
    h_pass = sum(v >= 0.60 for v in h.values())
    ok = j_pass >= 2 and h_pass >= 2 and elapsed < 15 * 60
    fmt = lambda d: ", ".join(f"{v:.3f}" for v in d.values())
    verdict(5, ok, f"clean accuracy jRDAE [{fmt(j)}] ({j_pass}/3 >= 0.80), handcrafted [{fmt(h)}] ({h_pass}/3 >= 0.60), {elapsed:.0f}s")


def test_criterion_6_denoising(corpus):
    reductions = []
    for s in SEEDS:
        d = run(corpus, "jrdae", s).denoising
        model = np.mean([d[c]["model_mse"] for c in LOW_SNRS])
        identity = np.mean([d[c]["identity_mse"] for c in LOW_SNRS])
        reductions.append(1 - model / identity)
    ok = all(r >= 0.30 for r in reductions)
    verdict(6, ok, "MSE reduction vs identity over -5/0/5 dB per seed: " + ", ".join(f"{r:.1%}" for r in reductions))


# ---------------------------------------------------------------- 7


def test_criterion_7_determinism(corpus, tmp_path):
    mel = corpus["mel"]
    cache = tmp_path / "mel.cache"
    write_cache(cache, "mel", mel.records, mel.values)
    start = time.perf_counter()
    outs = []
    for threads in ("1", "4"):
        out = tmp_path / f"run_t{threads}"
        env = dict(os.environ, OPENBLAS_NUM_THREADS=threads, OMP_NUM_THREADS=threads, MKL_NUM_THREADS=threads)
        cmd = [sys.executable, "-m", "rdae_sid", "train", "--system", "jrdae", "--seed", "7", "--cache", str(cache), "--out", str(out)]
        subprocess.run(cmd, env=env, check=True, capture_output=True)
        outs.append(out)
    elapsed = time.perf_counter() - start
    names = ["jrdae.ckpt", "metrics.csv"]
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names}
    ok = all(same.values()) and elapsed < 2 * 15 * 60
    verdict(7, ok, f"bitwise identical across 1 and 4 threads: {same}, {elapsed:.0f}s")


# ---------------------------------------------------------------- 8


def test_criterion_8_protocol(tmp_path):
    start = time.perf_counter()
    checks = {}
    checks["replay"] = (
        replay_early_stopping([1, 2, 3, 4, 5, 6], 5, 15) == (6, 1)
        and replay_early_stopping(list(range(15, 0, -1)), 5, 15) == (15, 15)
    )
    plan = make_fold_plan([{"group_key": f"s{s}_g{g}", "speaker_id": f"s{s}"} for s in range(5) for g in range(20)], 0)
    checks["fold_plan"] = len(plan.outer_test) == 33 and sorted(map(len, plan.inner_folds)) == [22, 22, 23]
    checks["argmin"] = (
        select_best({(1e-3,): 0.5, (1e-2,): 0.4, (1e-1,): 0.6}) == (1e-2,)
        and select_best({(0.1, 2): 0.3, (0.01, 5): 0.3}) == (0.01, 5)
    )

    fs = make_feature_set(groups_per_speaker=6, shape=(27, 140), seed=1)
    cfg = TrainConfig(epochs=2, patience=1, snn_hidden=16)
    res = E.run_system("irdae", fs, seed=0, base_config=cfg)
    fitted = res.fitted
    paths = E.write_checkpoints(fitted, tmp_path)
    reloaded = E.load_fitted(paths[1])
    x = fs.take(np.arange(4))
    checks["irdae"] = (
        [p.name for p in paths] == ["irdae_stage1_rdae.ckpt", "irdae_stage2_snn.ckpt"]
        and set(fitted.histories) == {"reconstruction", "classifier"}
        and np.array_equal(reloaded.predict_proba(x), fitted.predict_proba(x))
    )
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 60
    verdict(8, ok, f"{checks}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 9


def test_criterion_9_four_system_comparison(corpus, tmp_path):
    start = time.perf_counter()
    results = [run(corpus, s, 0) for s in E.SYSTEMS]
    csv_path, md_path = emit_report(results, tmp_path / "report")
    rows = parse_metrics_csv(csv_path.read_text())
    elapsed = sum(r.wall_time_s for r in results)
    j = results[0].per_snr
    order = [str(v) for v in sorted(DEFAULT_SNR_LEVELS, reverse=True)]
    # non-increasing within 5 points: no lower SNR beats any higher one by more than 0.05
    violations = [(a, b) for i, a in enumerate(order) for b in order[i + 1 :] if j[b] > j[a] + 0.05]
    ok = len(rows) == 28 and md_path.exists() and not violations and elapsed < 3600
    table = ", ".join(f"{c}:{j[c]:.3f}" for c in ["clean"] + order)
    overall = ", ".join(f"{r.display_name} {r.accuracy:.3f}" for r in results)
    verdict(9, ok, f"{len(rows)} report rows; jRDAE per-SNR {table}; overall {overall}; violations {violations}; "
                   f"{elapsed:.0f}s training ({time.perf_counter() - start:.0f}s this test)")
