"""Utterance-mean computation and feature standardization.

The core transform: shift and scale feature frames so every dimension has
zero mean and unit variance over the chosen frame set. The default frame set
is a single utterance, which removes per-recording offsets and scales
(speaker and channel effects) without needing any labels; an explicit
per-speaker mode pools statistics over all of a speaker's utterances instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import FeatureArchive, Manifest

EPSILON = 1e-8


@dataclass(frozen=True)
class NormStats:
    """Per-dimension population mean and standard deviation of a frame set."""

    mean: np.ndarray
    std: np.ndarray
    n_frames: int

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if np.any(self.std < 0):
            raise ValueError("std entries must be >= 0")


def utterance_mean(frames: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the frames per dimension (the speaker summary vector)."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"frames must be a non-empty T x d matrix, got shape {frames.shape}")
    return frames.mean(axis=0, dtype=np.float64)


def fit_stats(frames: np.ndarray) -> NormStats:
    """Population mean and standard deviation (divide by T, not T-1) per dimension.

    Pass a single utterance, or frames pooled over several utterances of one
    speaker; pooled statistics equal the statistics of the concatenation.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"frames must be a non-empty T x d matrix, got shape {frames.shape}")
    x = frames.astype(np.float64)
    return NormStats(mean=x.mean(axis=0), std=x.std(axis=0), n_frames=x.shape[0])


def standardize(frames: np.ndarray, stats: NormStats, eps: float = EPSILON) -> np.ndarray:
    """Apply out[t, j] = (in[t, j] - mean[j]) / max(std[j], eps).

    The eps guard maps constant dimensions to zero instead of dividing by
    zero; a single-frame utterance therefore standardizes to all zeros.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
    if frames.shape[1] != stats.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: frames have dim {frames.shape[1]}, stats have {stats.mean.shape[0]}"
        )
    denom = np.maximum(stats.std, eps)
    return ((frames.astype(np.float64) - stats.mean) / denom).astype(np.float32)


def standardize_archive(
    archive: FeatureArchive,
    per_speaker: bool = False,
    manifest: Manifest | None = None,
    eps: float = EPSILON,
) -> FeatureArchive:
    """Standardize every utterance of an archive.

    Default mode fits statistics per utterance. With per_speaker=True, the
    statistics are fit once per speaker on that speaker's pooled frames
    (manifest required) and applied to each of their utterances.
    """
    if per_speaker:
        if manifest is None:
            raise ValueError("per-speaker standardization requires a manifest")
        manifest.validate_against(archive)
        stats_by_speaker: dict[str, NormStats] = {}
        for speaker in manifest.speakers():
            utts = [u for u in manifest.utterances_of(speaker) if u in archive]
            if not utts:
                continue
            pooled = np.concatenate([archive.frames(u) for u in utts], axis=0)
            stats_by_speaker[speaker] = fit_stats(pooled)
        out = (
            (utt_id, standardize(frames, stats_by_speaker[manifest.speaker_of(utt_id)], eps))
            for utt_id, frames in archive.items()
        )
    else:
        out = (
            (utt_id, standardize(frames, fit_stats(frames), eps))
            for utt_id, frames in archive.items()
        )
    return FeatureArchive(archive.dim, archive.frame_period_us, out, standardized=True)
