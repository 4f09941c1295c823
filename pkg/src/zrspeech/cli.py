"""Command-line interface: one subcommand per pipeline stage plus `run`/`sweep`.

`run` executes the full flow (corpus -> optional prune -> normalize ->
verification/probes -> K-means units -> clustering metrics -> ABX -> unit LM)
from one INI config, writing every intermediate artifact plus two reports:
report.json (with wall-clock timings) and metrics.json (metrics only, byte
reproducible for fixed config and seeds at any worker count). `sweep` repeats
`run` over a list of K or n_keep values and tabulates the results.

Exit codes: 0 success, 1 configuration/usage error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    FeatureArchive,
    Manifest,
    SynthConfig,
    generate_synthetic,
    read_alignment,
    read_archive,
    read_manifest,
    write_alignment,
    write_archive,
    write_manifest,
)
from .normalize import standardize_archive
from .mfcc import MfccConfig, extract_archive
from .aud import (
    clustering_metrics,
    frame_pairs,
    kmeans_fit,
    quantize,
    read_codebook,
    read_units,
    training_frames,
    units_to_archive,
    write_codebook,
    write_units,
)
from .abx import abx_score, extract_items
from .verify import verify_archive
from .probe import (
    ForestConfig,
    ImportanceRanking,
    ProbeConfig,
    forest_importance,
    probe_on_units,
    prune,
    run_probe,
)
from .slm import (
    load_lm,
    pairwise_accuracy,
    read_pairs,
    read_simi_items,
    save_lm,
    semantic_similarity,
    sequence_logprob,
    train_ngram,
    unit_count_vectors,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class CliError(Exception):
    """Configuration or usage problem (exit code 1)."""


class StageError(Exception):
    """A pipeline stage failed (exit code 2)."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors, not crashes
        raise CliError(message)


def _write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _print_json(report: dict) -> None:
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _emit(args, report: dict) -> None:
    """Report destination for analysis commands: --out file, else stdout."""
    if getattr(args, "out", None):
        _write_json(args.out, report)
    else:
        _print_json(report)


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def _load_archive(path, what="features") -> FeatureArchive:
    return read_archive(_require_file(path, what))


# ---------------------------------------------------------------------------
# Simple subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    config = SynthConfig(
        n_speakers=args.n_speakers,
        n_phones=args.n_phones,
        dim=args.dim,
        utterances_per_speaker=args.utterances_per_speaker,
        segments_per_utterance=args.segments_per_utterance,
        frames_per_segment_range=(args.frames_min, args.frames_max),
        sigma_speaker=args.sigma_speaker,
        sigma_gender=args.sigma_gender,
        sigma_phone=args.sigma_phone,
        sigma_noise=args.sigma_noise,
        seed=args.seed,
    )
    archive, manifest, alignment = generate_synthetic(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_archive(archive, out / "features.zrfa")
    write_manifest(manifest, out / "manifest.csv")
    write_alignment(alignment, out / "alignment.txt")
    echo = {
        "n_speakers": args.n_speakers,
        "n_phones": args.n_phones,
        "dim": args.dim,
        "utterances_per_speaker": args.utterances_per_speaker,
        "segments_per_utterance": args.segments_per_utterance,
        "frames_per_segment_range": [args.frames_min, args.frames_max],
        "sigma_speaker": args.sigma_speaker,
        "sigma_gender": args.sigma_gender,
        "sigma_phone": args.sigma_phone,
        "sigma_noise": args.sigma_noise,
        "seed": args.seed,
    }
    _emit(
        args,
        {
            "config": echo,
            "features": str(out / "features.zrfa"),
            "manifest": str(out / "manifest.csv"),
            "alignment": str(out / "alignment.txt"),
            "n_utterances": len(archive),
            "n_frames": int(sum(archive.num_frames(u) for u in archive.utt_ids)),
        },
    )


def cmd_extract_mfcc(args) -> None:
    wav_dir = Path(args.wav_dir)
    if not wav_dir.is_dir():
        raise CliError(f"wav directory not found: {wav_dir}")
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        raise CliError(f"no .wav files in {wav_dir}")
    config = MfccConfig(
        sample_rate_hz=args.sample_rate,
        window_ms=args.window_ms,
        hop_ms=args.hop_ms,
        n_fft=args.n_fft,
        n_mel_filters=args.n_mels,
        n_cepstra=args.n_cepstra,
        pre_emphasis=args.pre_emphasis,
        include_deltas=not args.no_deltas,
    )
    archive = FeatureArchive(
        config.dim, config.frame_period_us, extract_archive(wavs, config), standardized=False
    )
    write_archive(archive, args.out)
    _print_json({"out": args.out, "n_utterances": len(archive), "dim": archive.dim})


def cmd_normalize(args) -> None:
    archive = _load_archive(args.in_path)
    if args.per_speaker:
        manifest = read_manifest(_require_file(args.per_speaker, "manifest"))
        normalized = standardize_archive(archive, per_speaker=True, manifest=manifest)
    else:
        normalized = standardize_archive(archive)
    write_archive(normalized, args.out)
    _print_json({"out": args.out, "per_speaker": bool(args.per_speaker), "n_utterances": len(archive)})


def cmd_kmeans_fit(args) -> None:
    archive = _load_archive(args.features)
    manifest = read_manifest(_require_file(args.manifest, "manifest")) if args.manifest else None
    speakers = args.speakers.split(",") if args.speakers else None
    frames = training_frames(
        archive,
        manifest=manifest,
        speakers=speakers,
        n_speakers=args.n_speakers,
        max_frames=args.max_frames,
        seed=args.subset_seed,
    )
    codebook = kmeans_fit(
        frames,
        args.k,
        seed=args.seed,
        max_iters=args.max_iters,
        tol=args.tol,
        standardized_input=args.standardized,
        n_workers=args.workers,
    )
    write_codebook(codebook, args.out)
    _print_json(
        {
            "out": args.out,
            "k": codebook.k,
            "dim": codebook.dim,
            "seed": args.seed,
            "standardized_input": codebook.standardized_input,
            "n_training_frames": int(frames.shape[0]),
            "n_iterations": len(codebook.inertia_history),
            "final_inertia": codebook.inertia_history[-1],
        },
    )


def cmd_quantize(args) -> None:
    archive = _load_archive(args.features)
    if args.assume_standardized:
        archive.standardized = True
    elif args.assume_raw:
        archive.standardized = False
    codebook = read_codebook(_require_file(args.codebook, "codebook"))
    units = quantize(archive, codebook, n_workers=args.workers)
    write_units(units, args.out)
    _print_json({"out": args.out, "k": codebook.k, "n_utterances": len(units)})


def cmd_abx(args) -> None:
    if (args.features is None) == (args.onehot is None):
        raise CliError("pass exactly one of --features or --onehot")
    if args.onehot is not None:
        if args.k is None:
            raise CliError("--onehot requires --k")
        units = read_units(_require_file(args.onehot, "units"))
        features = units_to_archive(units, args.k)
    else:
        features = _load_archive(args.features)
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    alignment = read_alignment(_require_file(args.alignment, "alignment"), manifest)
    items = extract_items(alignment, manifest, silence_labels=args.silence.split(","))
    report = abx_score(
        items, features, args.mode, x_cap=args.x_cap, seed=args.seed, n_workers=args.workers
    )
    _emit(args, report.as_dict())


def cmd_verify(args) -> None:
    archive = _load_archive(args.features)
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    report = verify_archive(archive, manifest, n_enroll=args.n_enroll, seed=args.seed)
    _emit(args, report.as_dict() | {"n_enroll": args.n_enroll, "seed": args.seed})


def _split_utterances(manifest: Manifest, archive: FeatureArchive, n_test_per_speaker: int,
                      split_seed: int) -> tuple[list[str], list[str]]:
    rng = np.random.default_rng(split_seed)
    test: set[str] = set()
    for speaker in manifest.speakers():
        utts = [u for u in manifest.utterances_of(speaker) if u in archive]
        if len(utts) <= n_test_per_speaker:
            raise ValueError(
                f"speaker {speaker!r} has {len(utts)} utterances; cannot hold out "
                f"{n_test_per_speaker}"
            )
        chosen = rng.choice(len(utts), size=n_test_per_speaker, replace=False)
        test.update(utts[i] for i in chosen.tolist())
    train = [u for u in archive.utt_ids if u not in test]
    return train, [u for u in archive.utt_ids if u in test]


def _frame_labels(task: str, utts, manifest, alignment) -> list[str]:
    labels: list[str] = []
    for utt_id in utts:
        n = alignment.total_frames(utt_id)
        if task == "phone":
            labels.extend(alignment.frame_labels(utt_id))
        elif task == "speaker":
            labels.extend([manifest.speaker_of(utt_id)] * n)
        else:
            labels.extend([manifest.gender_of(utt_id)] * n)
    return labels


def cmd_probe(args) -> None:
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    alignment = read_alignment(_require_file(args.alignment, "alignment"), manifest)
    config = ProbeConfig(
        kind=args.kind,
        hidden_units=args.hidden_units,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        n_runs=args.n_runs,
    )
    if (args.features is None) == (args.onehot is None):
        raise CliError("pass exactly one of --features or --onehot")
    if args.onehot is not None:
        if args.k is None:
            raise CliError("--onehot requires --k")
        units = read_units(_require_file(args.onehot, "units"))
        archive = units_to_archive(units, args.k)
    else:
        archive = _load_archive(args.features)
    alignment.validate_against(archive)
    train_utts, test_utts = _split_utterances(
        manifest, archive, args.n_test_per_speaker, args.split_seed
    )
    train_x = np.concatenate([archive.frames(u) for u in train_utts])
    test_x = np.concatenate([archive.frames(u) for u in test_utts])
    train_y = _frame_labels(args.task, train_utts, manifest, alignment)
    test_y = _frame_labels(args.task, test_utts, manifest, alignment)
    result = run_probe(train_x, train_y, test_x, test_y, config)
    _emit(
        args,
        {
            "task": args.task,
            "kind": args.kind,
            "seed": args.seed,
            "n_runs": args.n_runs,
            "n_train_frames": int(train_x.shape[0]),
            "n_test_frames": int(test_x.shape[0]),
        }
        | result.as_dict(),
    )


def cmd_cluster_metrics(args) -> None:
    units = read_units(_require_file(args.units, "units"))
    alignment = read_alignment(_require_file(args.alignment, "alignment"))
    pairs = frame_pairs(
        units,
        alignment,
        exclude_silence=not args.include_silence,
        silence_labels=args.silence.split(","),
    )
    report = clustering_metrics(pairs)
    _emit(args, report.as_dict() | {"exclude_silence": not args.include_silence})


def cmd_feature_rank(args) -> None:
    archive = _load_archive(args.features)
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    manifest.validate_against(archive)
    config = ForestConfig(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        features_per_split=args.features_per_split,
        min_samples_leaf=args.min_samples_leaf,
        seed=args.seed,
    )
    frames = np.concatenate([f for _, f in archive.items()])
    labels = []
    for utt_id in archive.utt_ids:
        labels.extend([manifest.speaker_of(utt_id)] * archive.num_frames(utt_id))
    ranking = forest_importance(frames, labels, config)
    _emit(args, ranking.as_dict() | {"seed": args.seed, "n_trees": args.n_trees})


def cmd_prune(args) -> None:
    archive = _load_archive(args.features)
    with open(_require_file(args.ranking, "ranking"), encoding="utf-8") as f:
        data = json.load(f)
    ranking = ImportanceRanking(
        np.asarray(data["importance"], dtype=np.float64), np.asarray(data["order"], dtype=np.int64)
    )
    pruned = prune(archive, ranking, args.keep)
    write_archive(pruned, args.out)
    _print_json({"out": args.out, "n_keep": args.keep, "kept_dims": np.sort(ranking.order[archive.dim - args.keep :]).tolist()})


def cmd_lm_train(args) -> None:
    units = read_units(_require_file(args.units, "units"))
    lm = train_ngram(units, order=args.order, discount=args.discount, k=args.k)
    save_lm(lm, args.out)
    total_lp = 0.0
    total_toks = 0
    for _, seq in units.items():
        total_lp += sequence_logprob(lm, seq)
        total_toks += seq.shape[0] + 1  # end symbol is scored too
    _print_json(
        {
            "out": args.out,
            "order": lm.order,
            "k": lm.k,
            "discount": lm.discount,
            "mean_logprob_per_token": total_lp / total_toks,
        },
    )


def cmd_lm_pairs(args) -> None:
    lm = load_lm(_require_file(args.model, "model"))
    units = read_units(_require_file(args.units, "units"))
    pairs = read_pairs(_require_file(args.pairs, "pairs"))
    accuracy = pairwise_accuracy(lm, pairs, units, length_normalized=args.length_normalized)
    _emit(
        args,
        {
            "accuracy": accuracy,
            "n_pairs": len(pairs),
            "length_normalized": args.length_normalized,
        },
    )


def cmd_lm_simi(args) -> None:
    items = read_simi_items(_require_file(args.items, "similarity items"))
    if (args.units is None) == (args.features is None):
        raise CliError("pass exactly one of --units (with --k) or --features")
    if args.units is not None:
        if args.k is None:
            raise CliError("--units requires --k")
        units = read_units(_require_file(args.units, "units"))
        vectors = unit_count_vectors(units, args.k)
        source = {"kind": "unit_counts", "k": args.k}
    else:
        from .slm import pool_vectors

        archive = _load_archive(args.features)
        vectors = {u: pool_vectors(f, args.pooling) for u, f in archive.items()}
        source = {"kind": "pooled_features", "pooling": args.pooling}
    report = semantic_similarity(vectors, items)
    _emit(args, report.as_dict() | {"source": source})


# ---------------------------------------------------------------------------
# Pipeline config
# ---------------------------------------------------------------------------

# (type, default); "" defaults mean optional paths/values resolved to None
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "corpus": {
        "synth": ("bool", True),
        "seed": ("int", 0),
        "n_speakers": ("int", 20),
        "n_phones": ("int", 10),
        "dim": ("int", 16),
        "utterances_per_speaker": ("int", 20),
        "segments_per_utterance": ("int", 40),
        "frames_min": ("int", 3),
        "frames_max": ("int", 10),
        "sigma_speaker": ("float", 1.0),
        "sigma_gender": ("float", 0.5),
        "sigma_phone": ("float", 1.0),
        "sigma_noise": ("float", 0.1),
        "features": ("optstr", None),
        "manifest": ("optstr", None),
        "alignment": ("optstr", None),
    },
    "prune": {
        "enabled": ("bool", False),
        "n_keep": ("optint", None),
        "n_trees": ("int", 100),
        "max_depth": ("int", 12),
        "min_samples_leaf": ("int", 5),
        "seed": ("int", 0),
    },
    "normalize": {
        "enabled": ("bool", True),
        "per_speaker": ("bool", False),
    },
    "verify": {
        "enabled": ("bool", True),
        "n_enroll": ("int", 5),
        "seed": ("int", 0),
    },
    "probe": {
        "enabled": ("bool", True),
        "tasks": ("strlist", ["speaker", "phone"]),
        "kind": ("str", "linear"),
        "epochs": ("int", 10),
        "batch_size": ("int", 256),
        "learning_rate": ("float", 0.01),
        "hidden_units": ("int", 1024),
        "n_runs": ("int", 3),
        "seed": ("int", 0),
        "n_test_per_speaker": ("int", 5),
        "split_seed": ("int", 0),
    },
    "aud": {
        "k": ("int", 50),
        "seed": ("int", 0),
        "max_iters": ("int", 300),
        "tol": ("float", 1e-4),
        "n_speakers": ("optint", None),
        "max_frames": ("optint", None),
        "subset_seed": ("int", 0),
    },
    "abx": {
        "enabled": ("bool", True),
        "modes": ("strlist", ["within", "across"]),
        "x_cap": ("int", 10),
        "seed": ("int", 0),
        "write_cells": ("bool", False),
    },
    "metrics": {
        "enabled": ("bool", True),
        "exclude_silence": ("bool", True),
    },
    "lm": {
        "enabled": ("bool", True),
        "order": ("int", 3),
        "discount": ("float", 0.75),
        "length_normalized": ("bool", False),
        "pairs": ("optstr", None),
        "simi": ("optstr", None),
    },
    "run": {
        "workers": ("int", 1),
    },
}


def _parse_value(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "optint":
            return int(raw) if raw else None
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "optstr":
            return raw or None
        if kind == "strlist":
            return [part.strip() for part in raw.split(",") if part.strip()]
        raise ValueError(f"unknown schema kind {kind}")
    except ValueError as e:
        raise CliError(f"config {where}: {e}") from None


def load_pipeline_config(path: str | Path) -> dict:
    """Parse the INI config, resolving every key to a typed value (defaults included)."""
    parser = configparser.ConfigParser()
    read = parser.read(_require_file(path, "config"))
    if not read:
        raise CliError(f"cannot read config: {path}")
    config = {section: {key: default for key, (_, default) in keys.items()}
              for section, keys in _SCHEMA.items()}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise CliError(f"config: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise CliError(f"config: unknown key {key!r} in [{section}]")
            kind, _ = _SCHEMA[section][key]
            config[section][key] = _parse_value(kind, raw, f"[{section}] {key}")
    return config


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def run_pipeline(config: dict, out_dir: str | Path, workers: int | None = None) -> tuple[dict, dict]:
    """Execute all enabled stages; returns (full report, metrics-only report).

    Artifacts and both reports are written under out_dir. Raises StageError
    (with the stage name) on failure; artifacts from completed stages remain.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_workers = workers if workers is not None else config["run"]["workers"]
    stage_results: dict[str, dict] = {}
    stage_seconds: dict[str, float] = {}

    def run_stage(name: str, fn):
        start = time.perf_counter()
        try:
            stage_results[name] = fn()
        except Exception as e:
            raise StageError(name, e) from e
        stage_seconds[name] = time.perf_counter() - start

    state: dict = {}

    def stage_corpus():
        c = config["corpus"]
        if c["synth"]:
            synth = SynthConfig(
                n_speakers=c["n_speakers"],
                n_phones=c["n_phones"],
                dim=c["dim"],
                utterances_per_speaker=c["utterances_per_speaker"],
                segments_per_utterance=c["segments_per_utterance"],
                frames_per_segment_range=(c["frames_min"], c["frames_max"]),
                sigma_speaker=c["sigma_speaker"],
                sigma_gender=c["sigma_gender"],
                sigma_phone=c["sigma_phone"],
                sigma_noise=c["sigma_noise"],
                seed=c["seed"],
            )
            archive, manifest, alignment = generate_synthetic(synth)
            write_archive(archive, out / "features.zrfa")
            write_manifest(manifest, out / "manifest.csv")
            write_alignment(alignment, out / "alignment.txt")
        else:
            for key in ("features", "manifest", "alignment"):
                if not c[key]:
                    raise ValueError(f"[corpus] synth=false requires {key}")
            archive = read_archive(_require_file(c["features"], "features"))
            archive.standardized = False
            manifest = read_manifest(_require_file(c["manifest"], "manifest"))
            alignment = read_alignment(_require_file(c["alignment"], "alignment"), manifest)
        manifest.validate_against(archive)
        alignment.validate_against(archive)
        state.update(archive=archive, manifest=manifest, alignment=alignment)
        return {
            "n_utterances": len(archive),
            "n_speakers": len(manifest.speakers()),
            "n_frames": int(sum(archive.num_frames(u) for u in archive.utt_ids)),
            "dim": archive.dim,
        }

    def stage_prune():
        c = config["prune"]
        if c["n_keep"] is None:
            raise ValueError("[prune] enabled requires n_keep")
        archive, manifest = state["archive"], state["manifest"]
        frames = np.concatenate([f for _, f in archive.items()])
        labels = []
        for utt_id in archive.utt_ids:
            labels.extend([manifest.speaker_of(utt_id)] * archive.num_frames(utt_id))
        ranking = forest_importance(
            frames,
            labels,
            ForestConfig(
                n_trees=c["n_trees"],
                max_depth=c["max_depth"],
                min_samples_leaf=c["min_samples_leaf"],
                seed=c["seed"],
            ),
        )
        _write_json(out / "ranking.json", ranking.as_dict())
        pruned = prune(archive, ranking, c["n_keep"])
        write_archive(pruned, out / "pruned.zrfa")
        state["archive"] = pruned
        return {"n_keep": c["n_keep"], "dim": pruned.dim}

    def stage_normalize():
        c = config["normalize"]
        normalized = standardize_archive(
            state["archive"], per_speaker=c["per_speaker"], manifest=state["manifest"]
        )
        write_archive(normalized, out / "normalized.zrfa")
        state["active"] = normalized
        return {"per_speaker": c["per_speaker"]}

    def stage_verify():
        c = config["verify"]
        report = verify_archive(
            state["archive"], state["manifest"], n_enroll=c["n_enroll"], seed=c["seed"]
        )
        return report.as_dict() | {"seed": c["seed"]}

    def stage_probe():
        c = config["probe"]
        archive, manifest, alignment = state["archive"], state["manifest"], state["alignment"]
        probe_config = ProbeConfig(
            kind=c["kind"],
            hidden_units=c["hidden_units"],
            epochs=c["epochs"],
            batch_size=c["batch_size"],
            learning_rate=c["learning_rate"],
            seed=c["seed"],
            n_runs=c["n_runs"],
        )
        train_utts, test_utts = _split_utterances(
            manifest, archive, c["n_test_per_speaker"], c["split_seed"]
        )
        variants = {"raw": archive}
        if config["normalize"]["enabled"]:
            variants["standardized"] = state["active"]
        results: dict[str, dict[str, float]] = {}
        for task in c["tasks"]:
            if task not in ("phone", "speaker", "gender"):
                raise ValueError(f"unknown probe task {task!r}")
            train_y = _frame_labels(task, train_utts, manifest, alignment)
            test_y = _frame_labels(task, test_utts, manifest, alignment)
            results[task] = {}
            for variant, arch in variants.items():
                train_x = np.concatenate([arch.frames(u) for u in train_utts])
                test_x = np.concatenate([arch.frames(u) for u in test_utts])
                result = run_probe(train_x, train_y, test_x, test_y, probe_config)
                results[task][variant] = result.mean_accuracy
        return {"tasks": results, "kind": c["kind"], "n_runs": c["n_runs"], "seed": c["seed"]}

    def stage_aud():
        c = config["aud"]
        active = state["active"]
        frames = training_frames(
            active,
            manifest=state["manifest"],
            n_speakers=c["n_speakers"],
            max_frames=c["max_frames"],
            seed=c["subset_seed"],
        )
        codebook = kmeans_fit(
            frames,
            c["k"],
            seed=c["seed"],
            max_iters=c["max_iters"],
            tol=c["tol"],
            standardized_input=bool(active.standardized),
            n_workers=n_workers,
        )
        write_codebook(codebook, out / "codebook.zrcb")
        units = quantize(active, codebook, n_workers=n_workers)
        write_units(units, out / "units.txt")
        state.update(codebook=codebook, units=units)
        return {
            "k": codebook.k,
            "seed": c["seed"],
            "n_training_frames": int(frames.shape[0]),
            "n_iterations": len(codebook.inertia_history),
            "final_inertia": codebook.inertia_history[-1],
        }

    def stage_metrics():
        c = config["metrics"]
        pairs = frame_pairs(state["units"], state["alignment"], exclude_silence=c["exclude_silence"])
        report = clustering_metrics(pairs)
        _write_json(out / "cluster_metrics.json", report.as_dict())
        return report.as_dict()

    def stage_abx():
        c = config["abx"]
        onehot = units_to_archive(state["units"], state["codebook"].k)
        items = extract_items(state["alignment"], state["manifest"])
        results = {}
        for mode in c["modes"]:
            report = abx_score(
                items, onehot, mode, x_cap=c["x_cap"], seed=c["seed"], n_workers=n_workers
            )
            artifact = report.as_dict()
            if not c["write_cells"]:  # per-cell table can dwarf everything else
                del artifact["cells"]
            _write_json(out / f"abx_{mode}.json", artifact)
            results[mode] = {
                "error_rate": report.error_rate,
                "n_cells": report.n_cells,
                "n_triples": report.n_triples,
                "n_cells_skipped": report.n_cells_skipped,
            }
        return results | {"seed": c["seed"], "x_cap": c["x_cap"]}

    def stage_lm():
        c = config["lm"]
        units = state["units"]
        lm = train_ngram(units, order=c["order"], discount=c["discount"], k=state["codebook"].k)
        save_lm(lm, out / "lm.json")
        total_lp, total_toks = 0.0, 0
        for _, seq in units.items():
            total_lp += sequence_logprob(lm, seq)
            total_toks += seq.shape[0] + 1
        metrics = {
            "order": lm.order,
            "discount": lm.discount,
            "k": lm.k,
            "mean_logprob_per_token": total_lp / total_toks,
            "length_normalized": c["length_normalized"],
        }
        if c["pairs"]:
            pairs = read_pairs(_require_file(c["pairs"], "pairs"))
            metrics["pairs_accuracy"] = pairwise_accuracy(
                lm, pairs, units, length_normalized=c["length_normalized"]
            )
            metrics["n_pairs"] = len(pairs)
        if c["simi"]:
            items = read_simi_items(_require_file(c["simi"], "similarity items"))
            simi = semantic_similarity(unit_count_vectors(units, lm.k), items)
            metrics["simi"] = simi.as_dict()
        return metrics

    run_stage("corpus", stage_corpus)
    if config["prune"]["enabled"]:
        run_stage("prune", stage_prune)
    if config["normalize"]["enabled"]:
        run_stage("normalize", stage_normalize)
    else:
        state["active"] = state["archive"]
    if config["verify"]["enabled"]:
        run_stage("verify", stage_verify)
    if config["probe"]["enabled"]:
        run_stage("probe", stage_probe)
    run_stage("aud", stage_aud)
    if config["metrics"]["enabled"]:
        run_stage("metrics", stage_metrics)
    if config["abx"]["enabled"]:
        run_stage("abx", stage_abx)
    if config["lm"]["enabled"]:
        run_stage("lm", stage_lm)

    metrics_report = {
        "version": __version__,
        "config": config,
        "stages": stage_results,
    }
    report = {
        "version": __version__,
        "config": config,
        "workers": n_workers,
        "stages": stage_results,
        "seconds": stage_seconds,
        "total_seconds": sum(stage_seconds.values()),
    }
    _write_json(out / "metrics.json", metrics_report)
    _write_json(out / "report.json", report)
    return report, metrics_report


def cmd_run(args) -> None:
    config = load_pipeline_config(args.config)
    report, _ = run_pipeline(config, args.out_dir, workers=args.workers)
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


_SWEEP_COLUMNS = (
    ("verify_eer", ("verify", "eer")),
    ("verify_accuracy", ("verify", "accuracy")),
    ("probe_speaker_raw", ("probe", "tasks", "speaker", "raw")),
    ("probe_speaker_standardized", ("probe", "tasks", "speaker", "standardized")),
    ("probe_phone_raw", ("probe", "tasks", "phone", "raw")),
    ("probe_phone_standardized", ("probe", "tasks", "phone", "standardized")),
    ("ari", ("metrics", "ari")),
    ("ami", ("metrics", "ami")),
    ("homogeneity", ("metrics", "homogeneity")),
    ("completeness", ("metrics", "completeness")),
    ("abx_within", ("abx", "within", "error_rate")),
    ("abx_across", ("abx", "across", "error_rate")),
    ("lm_logprob_per_token", ("lm", "mean_logprob_per_token")),
)


def _dig(stages: dict, path: tuple) -> object:
    node: object = stages
    for key in path:
        if not isinstance(node, dict) or key not in node:
            return None
        node = node[key]
    return node


def cmd_sweep(args) -> None:
    config = load_pipeline_config(args.config)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not values:
        raise CliError("--values is empty")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        run_config = json.loads(json.dumps(config))  # deep copy
        if args.param == "K":
            run_config["aud"]["k"] = value
        else:
            run_config["prune"]["enabled"] = True
            run_config["prune"]["n_keep"] = value
        row: dict = {"value": value}
        try:
            _, metrics = run_pipeline(run_config, out / f"{args.param}_{value}", workers=args.workers)
        except StageError as e:
            row["error"] = str(e)
        else:
            for name, path in _SWEEP_COLUMNS:
                got = _dig(metrics["stages"], path)
                if got is not None:
                    row[name] = got
        rows.append(row)
    summary = {"param": args.param, "values": values, "rows": rows}
    _write_json(out / "summary.json", summary)
    columns = ["value"] + [name for name, _ in _SWEEP_COLUMNS] + ["error"]
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if any("error" in row for row in rows):
        raise StageError("sweep", RuntimeError("one or more sweep values failed"))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zrspeech", description=__doc__)
    parser.add_argument("--version", action="version", version=f"zrspeech {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "generate the synthetic oracle corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-speakers", type=int, default=20)
    p.add_argument("--n-phones", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--utterances-per-speaker", type=int, default=20)
    p.add_argument("--segments-per-utterance", type=int, default=40)
    p.add_argument("--frames-min", type=int, default=3)
    p.add_argument("--frames-max", type=int, default=10)
    p.add_argument("--sigma-speaker", type=float, default=1.0)
    p.add_argument("--sigma-gender", type=float, default=0.5)
    p.add_argument("--sigma-phone", type=float, default=1.0)
    p.add_argument("--sigma-noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("extract-mfcc", cmd_extract_mfcc, "compute MFCC features from WAV files")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--window-ms", type=float, default=25.0)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--n-fft", type=int, default=None)
    p.add_argument("--n-mels", type=int, default=40)
    p.add_argument("--n-cepstra", type=int, default=13)
    p.add_argument("--pre-emphasis", type=float, default=0.97)
    p.add_argument("--no-deltas", action="store_true")

    p = add("normalize", cmd_normalize, "standardize features per utterance (or per speaker)")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-speaker", metavar="MANIFEST", default=None)

    p = add("kmeans-fit", cmd_kmeans_fit, "fit a K-means codebook on feature frames")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--standardized", action="store_true",
                   help="mark the codebook as fit on standardized features")
    p.add_argument("--manifest", default=None)
    p.add_argument("--speakers", default=None, help="comma-separated training speakers")
    p.add_argument("--n-speakers", type=int, default=None, help="seeded random speaker subset")
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("--subset-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = add("quantize", cmd_quantize, "map frames to nearest-centroid unit sequences")
    p.add_argument("--features", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--assume-standardized", action="store_true")
    g.add_argument("--assume-raw", action="store_true")
    p.add_argument("--workers", type=int, default=1)

    p = add("abx", cmd_abx, "ABX phone discrimination over features or one-hot units")
    p.add_argument("--features")
    p.add_argument("--onehot", help="units file; evaluates one-hot unit codes")
    p.add_argument("--k", "--K", type=int, default=None)
    p.add_argument("--alignment", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("within", "across"), required=True)
    p.add_argument("--x-cap", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--silence", default="sil")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")

    p = add("verify", cmd_verify, "speaker verification from utterance means")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-enroll", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("probe", cmd_probe, "frame-level phone/speaker/gender probing classifier")
    p.add_argument("--task", choices=("phone", "speaker", "gender"), required=True)
    p.add_argument("--kind", choices=("linear", "mlp"), default="linear")
    p.add_argument("--features")
    p.add_argument("--onehot", help="units file; probes one-hot unit codes")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--alignment", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--hidden-units", type=int, default=1024)
    p.add_argument("--n-runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-test-per-speaker", type=int, default=5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out")

    p = add("cluster-metrics", cmd_cluster_metrics, "ARI/AMI/homogeneity/completeness of units")
    p.add_argument("--units", required=True)
    p.add_argument("--alignment", required=True)
    p.add_argument("--include-silence", action="store_true")
    p.add_argument("--silence", default="sil")
    p.add_argument("--out")

    p = add("feature-rank", cmd_feature_rank, "random-forest speaker importance per dimension")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--features-per-split", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("prune", cmd_prune, "drop the most speaker-predictive dimensions")
    p.add_argument("--features", required=True)
    p.add_argument("--ranking", required=True)
    p.add_argument("--keep", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("lm-train", cmd_lm_train, "train a Kneser-Ney n-gram model on unit sequences")
    p.add_argument("--units", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--discount", type=float, default=0.75)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("lm-pairs", cmd_lm_pairs, "lexical/syntactic pairwise accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--units", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--length-normalized", action="store_true")
    p.add_argument("--out")

    p = add("lm-simi", cmd_lm_simi, "semantic similarity Spearman correlation")
    p.add_argument("--items", required=True)
    p.add_argument("--units")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--features")
    p.add_argument("--pooling", choices=("min", "mean", "max"), default="min")
    p.add_argument("--out")

    p = add("run", cmd_run, "run the full pipeline from an INI config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None)

    p = add("sweep", cmd_sweep, "run the pipeline over a list of K or n_keep values")
    p.add_argument("--config", required=True)
    p.add_argument("--param", choices=("K", "n_keep"), required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
