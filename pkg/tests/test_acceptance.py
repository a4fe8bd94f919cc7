"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
values, then asserts. Runtime limits are asserted where they are stated.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from wmtrace.bitstats import fpr_of_threshold, tail_beta, tail_exact, threshold_for_fpr
from wmtrace.codecs import adversarial_remove, embed, extract, fit_key_whitening, keygen
from wmtrace.imaging import COMBINED, TransformSpec, apply_transform, psnr, seed_corpus
from wmtrace.tracing import (
    ChannelModel,
    run_collusion_experiment,
    run_identification_experiment,
    validate_fpr_empirical,
)
from wmtrace.whitening import fit_whitening, hard_bits, iid_diagnostics

N_SEED_IMAGES = 64
N_MESSAGES = 10
VANILLA_OFFSET = 5000
N_VANILLA = 300
ROBUSTNESS_EDITS = ("brightness:2", "resize:0.7", "jpeg:80", "crop:0.1", COMBINED.label)
LAMBDAS = (0.8, 0.4, 0.2, 0.1, 0.05, 0.025)


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}")


def message(i, j):
    return np.random.default_rng([2024, i, j]).integers(0, 2, 48).astype(np.uint8)


@pytest.fixture(scope="module")
def ss_key():
    vanilla = seed_corpus(N_VANILLA, size=256, offset=VANILLA_OFFSET)
    return fit_key_whitening(keygen("spreadspectrum", 48, 2024), vanilla)


@pytest.fixture(scope="module")
def dct_key():
    return keygen("dctdwt", 48, 2024)


@pytest.fixture(scope="module")
def seed_images():
    return seed_corpus(N_SEED_IMAGES)


@pytest.fixture(scope="module")
def corpus_runs(ss_key, dct_key, seed_images):
    """Embed every seed image with every message for both codecs, once.

    Returns per-codec arrays of clean accuracy, PSNR and accuracy after each
    robustness edit, plus the wall-clock time of the whole sweep.
    """
    start = time.perf_counter()
    edits = [TransformSpec.parse(t) for t in ROBUSTNESS_EDITS]
    out = {}
    for name, key in (("dctdwt", dct_key), ("spreadspectrum", ss_key)):
        clean, quality, edited = [], [], []
        for i, x in enumerate(seed_images):
            for j in range(N_MESSAGES):
                m = message(i, j)
                xw = embed(x, key, m)
                clean.append(np.mean(extract(xw, key) == m))
                quality.append(psnr(x, xw))
                edited.append([np.mean(extract(apply_transform(xw, t, i), key) == m) for t in edits])
        out[name] = {
            "clean": np.array(clean),
            "psnr": np.array(quality),
            "edited": dict(zip(ROBUSTNESS_EDITS, np.array(edited).T)),
        }
    out["seconds"] = time.perf_counter() - start
    return out


def test_criterion_01_threshold_anchors(capsys):
    start = time.perf_counter()
    t1 = threshold_for_fpr(48, 1e-6, 1)
    t1000 = threshold_for_fpr(48, 1e-6, 1000)
    elapsed = time.perf_counter() - start
    ok = t1 == 41 and t1000 == 44 and elapsed < 1.0
    verdict(capsys, 1, "threshold anchors", ok, f"tau(N=1)={t1}, tau(N=1000)={t1000}, {elapsed:.3f}s")
    assert ok


def test_criterion_02_fpr_closed_form(capsys):
    start = time.perf_counter()
    worst = 0.0
    for k in range(1, 65):
        for tau in range(k + 1):
            exact = tail_exact(k, tau)
            closed = tail_beta(k, tau)
            worst = max(worst, abs(closed - float(exact)) / float(exact))
            assert fpr_of_threshold(k, tau) == float(exact)
    # Brute force: enumerate all 2^k messages against the all-zero key.
    enum_ok = True
    for k in range(1, 17):
        matches = k - np.bitwise_count(np.arange(2**k, dtype=np.uint32))
        counts = np.bincount(matches, minlength=k + 1)
        tails = np.cumsum(counts[::-1])[::-1]
        for tau in range(k + 1):
            enum_ok &= tail_exact(k, tau) == Fraction(int(tails[tau]), 2**k)
            enum_ok &= math.isclose(tail_beta(k, tau), tails[tau] / 2**k, rel_tol=1e-12)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and enum_ok and elapsed < 60
    verdict(capsys, 2, "FPR closed form", ok,
            f"max rel err beta vs exact (k<=64) = {worst:.2e}, enumeration k<=16 exact: {enum_ok}, {elapsed:.2f}s")
    assert ok


def test_criterion_03_empirical_fpr(capsys):
    start = time.perf_counter()
    rep = validate_fpr_empirical(16, [12], 10**6, "synthetic", seed=3)
    elapsed = time.perf_counter() - start
    row = rep.rows[0]
    theory = 2517 / 65536
    sigma = math.sqrt(theory * (1 - theory) / 10**6)
    z = (row["fpr_empirical"] - theory) / sigma
    ok = row["fpr_theoretical"] == theory and abs(z) <= 3 and elapsed < 60
    verdict(capsys, 3, "empirical FPR", ok,
            f"empirical {row['fpr_empirical']:.6f} vs {theory:.6f} (z={z:+.2f}), {elapsed:.2f}s")
    assert ok


def test_criterion_04_whitening(capsys):
    start = time.perf_counter()
    k, n = 48, 10**4
    rng = np.random.default_rng(4)
    mix = rng.standard_normal((k, k)) + 1.5 * np.eye(k)
    mean = rng.normal(0.0, 2.0, k)
    samples = rng.standard_normal((n, k)) @ mix.T + mean
    t = fit_whitening(samples)
    held_out = rng.standard_normal((n, k)) @ mix.T + mean
    corr_fit = np.corrcoef(t(samples), rowvar=False)
    corr_held = np.corrcoef(t(held_out), rowvar=False)
    off = ~np.eye(k, dtype=bool)
    max_corr = max(np.max(np.abs(corr_fit[off])), np.max(np.abs(corr_held[off])))
    bits = iid_diagnostics(hard_bits(t(held_out)))
    raw_corr = np.max(np.abs(np.corrcoef(samples, rowvar=False)[off]))
    elapsed = time.perf_counter() - start
    ok = max_corr <= 0.05 and bits.max_bias <= 0.02 and elapsed < 60
    verdict(capsys, 4, "whitening", ok,
            f"max |offdiag corr| {raw_corr:.3f} -> {max_corr:.4f}, hard-bit max |mean-0.5| {bits.max_bias:.4f}, "
            f"{elapsed:.2f}s")
    assert ok


def test_criterion_05_codec_roundtrips(capsys, corpus_runs):
    dct = corpus_runs["dctdwt"]
    ss = corpus_runs["spreadspectrum"]
    dct_acc, ss_acc, ss_psnr = dct["clean"].mean(), ss["clean"].mean(), ss["psnr"].mean()
    ok = dct_acc == 1.0 and ss_acc >= 0.99 and 28 <= ss_psnr <= 32
    verdict(capsys, 5, "codec roundtrips", ok,
            f"{N_SEED_IMAGES} images x {N_MESSAGES} messages: dctdwt acc {dct_acc:.4f} "
            f"(PSNR {dct['psnr'].mean():.1f} dB), spreadspectrum acc {ss_acc:.4f} "
            f"(min {ss['clean'].min():.3f}), PSNR {ss_psnr:.2f} dB")
    assert ok


def test_criterion_06_robustness_ordering(capsys, corpus_runs):
    ss = {t: v.mean() for t, v in corpus_runs["spreadspectrum"]["edited"].items()}
    dct = {t: v.mean() for t, v in corpus_runs["dctdwt"]["edited"].items()}
    elapsed = corpus_runs["seconds"]
    ok = (ss["brightness:2"] >= 0.95 and ss["resize:0.7"] >= 0.85 and ss["jpeg:80"] >= 0.85
          and dct["crop:0.1"] <= 0.60 and elapsed < 600)
    verdict(capsys, 6, "robustness ordering", ok,
            "spreadspectrum " + ", ".join(f"{t} {v:.3f}" for t, v in ss.items())
            + " | dctdwt " + ", ".join(f"{t} {v:.3f}" for t, v in dct.items())
            + f" | embedding sweep {elapsed:.0f}s")
    assert ok


def test_criterion_07_identification(capsys):
    start = time.perf_counter()
    rep = run_identification_experiment(100, 900, 100, ChannelModel.bsc(0.92, seed=7), 1e-6, 48, seed=7)
    elapsed = time.perf_counter() - start
    m = rep.metrics
    oracle = stats.binom.sf(43, 48, 0.92)
    ok = (m["tau"] == 44 and rep.samples["n_trials"] == 10**4 and abs(m["accuracy"] - oracle) <= 0.015
          and m["false_accusations"] == 0 and elapsed < 60)
    verdict(capsys, 7, "identification simulation", ok,
            f"N={m['n_keys']}, tau={m['tau']}, accuracy {m['accuracy']:.4f} vs oracle {oracle:.4f}, "
            f"false accusations {m['false_accusations']}, {elapsed:.2f}s")
    assert ok


def test_criterion_08_collusion(capsys):
    start = time.perf_counter()
    keys = np.random.default_rng(8).integers(0, 2, (2, 48))
    rep = run_collusion_experiment(keys[0], keys[1], 0.9, 4_800_000, seed=8, images_per_trial=100)
    elapsed = time.perf_counter() - start
    m = rep.metrics
    ok = (rep.samples["n_bits"] >= 48000 and abs(m["disagree_ones_frequency"] - 0.5) <= 0.02
          and m["agree_accuracy"] >= 0.9 - 0.02 and m["trials_both_colluders_outscore_innocent"] >= 0.99
          and elapsed < 60)
    verdict(capsys, 8, "collusion", ok,
            f"{rep.samples['n_bits']} bits, {rep.samples['n_trials']} trials of {rep.samples['images_per_trial']} "
            f"images: disagree freq {m['disagree_ones_frequency']:.4f}, agree acc {m['agree_accuracy']:.4f}, "
            f"colluders beat innocent in {m['trials_both_colluders_outscore_innocent']:.3f} of trials "
            f"({m['images_both_colluders_outscore_innocent']:.3f} per image), {elapsed:.2f}s")
    assert ok


def test_criterion_09_whitebox_removal(capsys, ss_key, seed_images):
    start = time.perf_counter()
    low, high = [], []
    for i, x in enumerate(seed_images[:32]):
        m = message(i, 99)
        xw = embed(x, ss_key, m)
        low.append(np.mean(extract(adversarial_remove(xw, ss_key, 26, seed=1000 + i).image, ss_key) == m))
        high.append(np.mean(extract(adversarial_remove(xw, ss_key, 60, seed=1000 + i).image, ss_key) == m))
    elapsed = time.perf_counter() - start
    ok = np.mean(low) <= 0.6 and np.mean(high) >= 0.95 and elapsed < 300
    verdict(capsys, 9, "white-box removal", ok,
            f"acc after attack: floor 26 dB {np.mean(low):.3f}, floor 60 dB {np.mean(high):.3f} "
            f"(32 images), {elapsed:.0f}s")
    assert ok


def test_criterion_10_tradeoff_sweep(capsys, ss_key, seed_images):
    start = time.perf_counter()
    images = seed_images[:8]
    augment = (TransformSpec("identity"), COMBINED)
    mean_psnr, mean_acc = [], []
    for lam in LAMBDAS:
        q, a = [], []
        for i, x in enumerate(images):
            m = message(i, 77)
            xw = embed(x, ss_key, m, lambda_i=lam, augment=augment)
            q.append(psnr(x, xw))
            a.append(np.mean(extract(apply_transform(xw, COMBINED, i), ss_key) == m))
        mean_psnr.append(np.mean(q))
        mean_acc.append(np.mean(a))
    elapsed = time.perf_counter() - start
    psnr_down = all(a > b for a, b in zip(mean_psnr, mean_psnr[1:]))
    acc_up = all(a <= b for a, b in zip(mean_acc, mean_acc[1:]))
    ok = psnr_down and acc_up and elapsed < 600
    verdict(capsys, 10, "trade-off sweep", ok,
            "lambda/PSNR/acc " + ", ".join(f"{l}:{p:.2f}/{a:.3f}" for l, p, a in zip(LAMBDAS, mean_psnr, mean_acc))
            + f", {elapsed:.0f}s")
    assert ok
