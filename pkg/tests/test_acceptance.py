"""Gating acceptance suite.

Each test checks one release criterion and prints a single
``ACCEPTANCE <name>: PASS|FAIL`` line (shown even while pytest captures
output). The oracle-equivalence and numerical criteria are exact or
tight-tolerance checks against independent reference implementations; the
directional criteria reproduce the core speaker-normalization effects on the
built-in synthetic corpus; the runtime and determinism criteria exercise the
full pipeline through its public entry point.
"""

import itertools
import time

import numpy as np
import pytest

from zrspeech.abx import abx_score, dtw_distance, extract_items
from zrspeech.aud import (
    clustering_metrics,
    frame_pairs,
    kmeans_fit,
    quantize,
    training_frames,
    units_to_archive,
)
from zrspeech.cli import _frame_labels, _split_utterances, load_pipeline_config, run_pipeline
from zrspeech.corpus import SynthConfig, generate_synthetic
from zrspeech.normalize import standardize_archive
from zrspeech.probe import ProbeConfig, init_params, loss_and_grad, run_probe
from zrspeech.slm import BOS, train_ngram
from zrspeech.verify import compute_eer

from _oracles import clustering_metrics_oracle, dtw_enumerate, eer_sweep, spearman_oracle
from test_probe import _finite_diff_grads


@pytest.fixture
def announce(capsys):
    def check(name: str, ok: bool, detail: str = ""):
        line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        with capsys.disabled():
            print(line)
        assert ok, line

    return check


# ---------------------------------------------------------------------------
# Oracle equivalences
# ---------------------------------------------------------------------------

def test_dtw_matches_exhaustive_enumeration(announce):
    rng = np.random.default_rng(0)
    worst = 0.0
    n_checked = 0
    for tx, ty in itertools.product(range(1, 7), range(1, 7)):
        for trial in range(5):
            x = rng.standard_normal((tx, 3))
            y = rng.standard_normal((ty, 3))
            if trial == 2:  # exercise the zero-norm cost rules too
                x[rng.integers(0, tx)] = 0.0
                y[rng.integers(0, ty)] = 0.0
            diff = abs(dtw_distance(x, y) - dtw_enumerate(x.tolist(), y.tolist()))
            worst = max(worst, diff)
            n_checked += 1
    announce(
        "dtw_exhaustive_equivalence",
        worst <= 1e-9,
        f"max |Δ| {worst:.2e} over {n_checked} sequence pairs (lengths ≤ 6)",
    )


def test_clustering_metrics_match_brute_force(announce):
    rng = np.random.default_rng(1)
    worst = 0.0
    n_checked = 0
    for n in range(2, 13):
        labelings = [
            (np.zeros(n, dtype=int), ["a"] * n),  # single unit, single class
            (np.arange(n), [f"c{i}" for i in range(n)]),  # all distinct
            (rng.integers(0, 2, n), ["a"] * n),  # many units, one class
        ]
        for _ in range(40):
            labelings.append(
                (
                    rng.integers(0, int(rng.integers(1, n + 1)), n),
                    [f"c{v}" for v in rng.integers(0, int(rng.integers(1, n + 1)), n)],
                )
            )
        for units, classes in labelings:
            got = clustering_metrics(list(zip(units.tolist(), classes))).as_dict()
            want = clustering_metrics_oracle(units.tolist(), classes)
            for key in ("ari", "ami", "homogeneity", "completeness"):
                worst = max(worst, abs(got[key] - want[key]))
            n_checked += 1
    announce(
        "clustering_metrics_oracle_equivalence",
        worst <= 1e-9,
        f"max |Δ| {worst:.2e} over {n_checked} labelings (n ≤ 12)",
    )


def test_eer_matches_exhaustive_sweep(announce):
    rng = np.random.default_rng(2)
    n_checked, n_exact = 0, 0
    for n in (2, 3, 10, 57, 200, 1000):
        for tied in (False, True):
            for _ in range(10):
                scores = (
                    rng.integers(0, 6, n).astype(float) if tied else rng.standard_normal(n)
                )
                labels = rng.integers(0, 2, n).astype(bool)
                if labels.all() or not labels.any():
                    labels[0] = not labels[0]
                got, _ = compute_eer(scores, labels)
                n_checked += 1
                n_exact += got == eer_sweep(scores.tolist(), labels.tolist())
    announce(
        "eer_exhaustive_equivalence",
        n_exact == n_checked,
        f"{n_exact}/{n_checked} trial sets exact (n ≤ 1000)",
    )


def test_spearman_matches_rank_then_pearson(announce):
    from zrspeech.slm import spearman

    rng = np.random.default_rng(3)
    worst = 0.0
    n_checked = 0
    for trial in range(200):
        n = int(rng.integers(4, 60))
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        if trial % 2 == 0:  # heavy ties
            x, y = np.round(x), np.round(2 * y) / 2
            if len(set(x.tolist())) < 2 or len(set(y.tolist())) < 2:
                continue
        worst = max(worst, abs(spearman(x, y) - spearman_oracle(x, y)))
        n_checked += 1
    announce(
        "spearman_oracle_equivalence",
        worst <= 1e-12,
        f"max |Δ| {worst:.2e} over {n_checked} samples with ties",
    )


# ---------------------------------------------------------------------------
# Numerical checks
# ---------------------------------------------------------------------------

def test_probe_gradients_match_finite_differences(announce):
    rng = np.random.default_rng(4)
    n, dim, n_classes = 12, 4, 3
    x = rng.standard_normal((n, dim))
    y_idx = rng.integers(0, n_classes, n)
    worst = 0.0
    for kind in ("linear", "mlp"):
        params = init_params(kind, dim, n_classes, 7, rng)
        params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
        _, analytic = loss_and_grad(kind, params, x, y_idx, n_classes)
        numeric = _finite_diff_grads(kind, params, x, y_idx, n_classes)
        for key in params:
            a, b = analytic[key], numeric[key]
            rel = np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), np.ones_like(a)])
            worst = max(worst, float(rel.max()))
    announce(
        "probe_gradient_check",
        worst <= 1e-4,
        f"max relative error {worst:.2e} (linear and one-hidden-layer)",
    )


def test_ngram_conditionals_normalized(announce):
    rng = np.random.default_rng(5)
    worst = 0.0
    n_contexts = 0
    for k, order in ((5, 2), (64, 3)):
        seqs = [
            rng.integers(0, k, size=int(rng.integers(1, 13))).tolist() for _ in range(40)
        ]
        lm = train_ngram(seqs, order=order, k=k)
        for ctx in itertools.product([BOS] + list(range(k)), repeat=order - 1):
            worst = max(worst, abs(lm.conditional_distribution(ctx).sum() - 1.0))
            n_contexts += 1
    announce(
        "ngram_normalization",
        worst <= 1e-9,
        f"max |Σp − 1| {worst:.2e} over {n_contexts} contexts (vocab ≤ 64, exhaustive)",
    )


def test_kmeans_inertia_monotone(announce):
    rng = np.random.default_rng(6)
    worst_rise = -np.inf
    n_iters = 0
    for seed in range(5):
        x = np.concatenate(
            [rng.standard_normal((80, 4)) + 4.0 * rng.standard_normal(4) for _ in range(6)]
        )
        codebook = kmeans_fit(x, 8, seed=seed)
        h = codebook.inertia_history
        worst_rise = max(
            worst_rise, max((b - a for a, b in zip(h, h[1:])), default=-np.inf)
        )
        n_iters += len(h)
    announce(
        "kmeans_inertia_monotonicity",
        worst_rise <= 1e-12,
        f"largest per-iteration change {worst_rise:.2e} over {n_iters} iterations, 5 seeds",
    )


# ---------------------------------------------------------------------------
# Directional reproduction on the default synthetic corpus
# ---------------------------------------------------------------------------

def test_speaker_probe_contrast(announce):
    started = time.perf_counter()
    archive, manifest, alignment = generate_synthetic(SynthConfig())
    standardized = standardize_archive(archive)
    train_utts, test_utts = _split_utterances(manifest, archive, 5, 0)
    config = ProbeConfig(kind="linear", n_runs=3, seed=0)

    acc: dict[str, dict[str, float]] = {}
    for task in ("speaker", "phone"):
        train_y = _frame_labels(task, train_utts, manifest, alignment)
        test_y = _frame_labels(task, test_utts, manifest, alignment)
        acc[task] = {}
        for name, variant in (("raw", archive), ("standardized", standardized)):
            train_x = np.concatenate([variant.frames(u) for u in train_utts])
            test_x = np.concatenate([variant.frames(u) for u in test_utts])
            acc[task][name] = run_probe(train_x, train_y, test_x, test_y, config).mean_accuracy

    elapsed = time.perf_counter() - started
    phone_shift = abs(acc["phone"]["standardized"] - acc["phone"]["raw"])
    ok = (
        acc["speaker"]["raw"] >= 0.80
        and acc["speaker"]["standardized"] <= 0.15
        and phone_shift <= 0.05
        and elapsed <= 120.0
    )
    announce(
        "speaker_probe_contrast",
        ok,
        f"speaker raw {acc['speaker']['raw']:.3f} ≥ 0.80, "
        f"standardized {acc['speaker']['standardized']:.3f} ≤ 0.15 (chance 0.05), "
        f"phone shift {phone_shift * 100:.2f} ≤ 5 points, {elapsed:.0f}s ≤ 120s",
    )


@pytest.fixture(scope="module")
def standardization_contrast():
    """K=10 unit inventories and their evaluations, raw vs standardized, 5 seeds."""
    started = time.perf_counter()
    runs = {}
    for seed in range(5):
        archive, manifest, alignment = generate_synthetic(SynthConfig(seed=seed))
        items = extract_items(alignment, manifest)
        runs[seed] = {}
        for name, variant in (("raw", archive), ("standardized", standardize_archive(archive))):
            codebook = kmeans_fit(
                training_frames(variant),
                10,
                seed=seed,
                standardized_input=bool(variant.standardized),
            )
            units = quantize(variant, codebook)
            onehot = units_to_archive(units, 10)
            report = abx_score(items, onehot, "across", seed=seed)
            metrics = clustering_metrics(frame_pairs(units, alignment)).as_dict()
            runs[seed][name] = {
                "abx": report.error_rate,
                "n_triples": report.n_triples,
                "metrics": metrics,
            }
    return runs, time.perf_counter() - started


def test_clustered_abx_standardization_gain(announce, standardization_contrast):
    runs, elapsed = standardization_contrast
    improved = sum(
        run["standardized"]["abx"] < run["raw"]["abx"] for run in runs.values()
    )
    min_triples = min(
        run[name]["n_triples"] for run in runs.values() for name in ("raw", "standardized")
    )
    pairs = ", ".join(
        f"{run['raw']['abx']:.3f}→{run['standardized']['abx']:.3f}" for run in runs.values()
    )
    ok = improved == 5 and min_triples >= 2000 and elapsed <= 180.0
    announce(
        "clustered_abx_standardization_gain",
        ok,
        f"across-speaker error {pairs}; {improved}/5 seeds lower, "
        f"min {min_triples} triples ≥ 2000, {elapsed:.0f}s ≤ 180s",
    )


def test_clustering_metrics_standardization_gain(announce, standardization_contrast):
    runs, _ = standardization_contrast
    n_seeds_ok = sum(
        all(
            run["standardized"]["metrics"][key] > run["raw"]["metrics"][key]
            for key in ("ari", "ami", "homogeneity", "completeness")
        )
        for run in runs.values()
    )
    announce(
        "clustering_metrics_standardization_gain",
        n_seeds_ok == 5,
        f"all four metrics strictly higher with standardization on {n_seeds_ok}/5 seeds",
    )


# ---------------------------------------------------------------------------
# Sanity bounds
# ---------------------------------------------------------------------------

def test_onehot_phone_abx_floor(announce):
    # Aligned phone labels as exact one-hot frames. Sequences avoid adjacent
    # repeated phones, as real alignments do (contiguous same-label frames
    # form a single segment); windows like (a,a,b) vs (a,b,b) would otherwise
    # collapse to identical frame runs that no metric could separate.
    from zrspeech.corpus import Alignment, Manifest, ManifestRecord, Segment

    rng = np.random.default_rng(0)
    n_phones = 10
    mapping, records, onehot = {}, [], {}
    for s in range(8):
        speaker = f"s{s:03d}"
        for j in range(10):
            utt_id = f"{speaker}_u{j:03d}"
            seq = [int(rng.integers(0, n_phones))]
            while len(seq) < 30:
                seq.append((seq[-1] + int(rng.integers(1, n_phones))) % n_phones)
            durations = rng.integers(3, 11, size=30)
            segments, start = [], 0
            for p, d in zip(seq, durations):
                segments.append(Segment(f"p{p}", start, start + int(d)))
                start += int(d)
            mapping[utt_id] = segments
            records.append(ManifestRecord(utt_id, speaker, "FM"[s % 2], start))
            labels = np.repeat(np.array(seq), durations)
            eye = np.zeros((start, n_phones), dtype=np.float32)
            eye[np.arange(start), labels] = 1.0
            onehot[utt_id] = eye
    manifest, alignment = Manifest(records), Alignment(mapping)
    items = extract_items(alignment, manifest)
    errors = {
        mode: abx_score(items, onehot, mode, seed=0).error_rate
        for mode in ("within", "across")
    }
    ok = all(err <= 0.01 for err in errors.values())
    announce(
        "onehot_abx_floor",
        ok,
        f"within {errors['within']:.4f}, across {errors['across']:.4f}, both ≤ 0.01",
    )


def test_gaussian_abx_chance(announce):
    rng = np.random.default_rng(7)
    config = SynthConfig(
        n_speakers=6, utterances_per_speaker=12, segments_per_utterance=30, n_phones=4
    )
    archive, manifest, alignment = generate_synthetic(config)
    gaussian = {
        u: rng.standard_normal((archive.num_frames(u), 8)).astype(np.float32)
        for u in archive.utt_ids
    }
    report = abx_score(extract_items(alignment, manifest), gaussian, "across", seed=0)
    ok = report.n_triples >= 10_000 and abs(report.error_rate - 0.5) <= 0.02
    announce(
        "gaussian_abx_chance",
        ok,
        f"error {report.error_rate:.4f} within 0.50 ± 0.02, {report.n_triples} triples",
    )


def test_random_label_eer_chance(announce):
    rng = np.random.default_rng(8)
    scores = rng.standard_normal(10_000)
    labels = rng.integers(0, 2, 10_000).astype(bool)
    got, _ = compute_eer(scores, labels)
    announce(
        "random_label_eer_chance",
        abs(got - 0.5) <= 0.02,
        f"EER {got:.4f} within 0.50 ± 0.02 on 10000 shuffled trials",
    )


# ---------------------------------------------------------------------------
# Pipeline determinism and runtime
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_config_runs(tmp_path_factory):
    """Three executions of the default pipeline: twice serial, once with 8 workers."""
    base = tmp_path_factory.mktemp("determinism")
    config_path = base / "pipeline.ini"
    config_path.write_text("[run]\nworkers = 1\n")
    config = load_pipeline_config(config_path)
    reports = {}
    for name, workers in (("first", None), ("repeat", None), ("workers8", 8)):
        run_pipeline(config, base / name, workers=workers)
        reports[name] = (base / name / "metrics.json").read_bytes()
    return reports


def test_run_determinism(announce, default_config_runs):
    reports = default_config_runs
    rerun_ok = reports["first"] == reports["repeat"]
    workers_ok = reports["first"] == reports["workers8"]
    announce(
        "run_determinism",
        rerun_ok and workers_ok,
        f"metric reports byte-identical: rerun {rerun_ok}, workers 1 vs 8 {workers_ok} "
        f"({len(reports['first'])} bytes)",
    )


def test_pipeline_runtime(announce, tmp_path):
    config_path = tmp_path / "pipeline.ini"
    config_path.write_text("[prune]\nenabled = true\nn_keep = 12\n")
    config = load_pipeline_config(config_path)
    started = time.perf_counter()
    report, _ = run_pipeline(config, tmp_path / "out")
    elapsed = time.perf_counter() - started
    stages = tuple(report["stages"])
    expected = {"corpus", "prune", "normalize", "verify", "probe", "aud", "metrics", "abx", "lm"}
    ok = elapsed <= 300.0 and expected <= set(stages)
    announce(
        "pipeline_runtime",
        ok,
        f"{elapsed:.0f}s ≤ 300s for stages {', '.join(stages)}",
    )


@pytest.mark.skip(
    reason="informative benchmark against published reference numbers; needs a "
    "pretrained checkpoint and a real speech corpus, neither of which is bundled"
)
def test_pretrained_checkpoint_benchmarks():
    pass
