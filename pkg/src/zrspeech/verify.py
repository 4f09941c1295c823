"""Speaker verification over utterance-mean embeddings.

Each speaker is enrolled as the mean of a few utterance means; test
utterances are scored against every enrolled speaker by Euclidean distance.
Reports closed-set identification accuracy (nearest speaker wins) and the
equal error rate of the verification trials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import FeatureArchive, Manifest
from .normalize import utterance_mean


@dataclass(frozen=True)
class SpeakerEmbedding:
    speaker_id: str
    embedding: np.ndarray
    n_enrolled: int

    def __post_init__(self):
        if self.n_enrolled < 1:
            raise ValueError("n_enrolled must be >= 1")
        if not np.all(np.isfinite(self.embedding)):
            raise ValueError(f"speaker {self.speaker_id!r}: embedding must be finite")


@dataclass(frozen=True)
class Trial:
    speaker_id: str
    utt_id: str
    distance: float
    is_target: bool


@dataclass(frozen=True)
class VerifyReport:
    eer: float
    eer_threshold: float
    accuracy: float
    n_trials: int
    n_tests: int

    def as_dict(self) -> dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "accuracy": self.accuracy,
            "n_trials": self.n_trials,
            "n_tests": self.n_tests,
        }


def enroll(
    archive: FeatureArchive,
    manifest: Manifest,
    n_enroll: int = 5,
    seed: int = 0,
) -> tuple[list[SpeakerEmbedding], list[str]]:
    """Pick n_enroll utterances per speaker (seeded) and average their means.

    Returns the embeddings (speakers in sorted order) and the held-out test
    utterances (archive order). Every speaker must have more than n_enroll
    utterances so the test set is never empty.
    """
    if n_enroll < 1:
        raise ValueError("n_enroll must be >= 1")
    manifest.validate_against(archive)
    rng = np.random.default_rng(seed)
    enrolled: set[str] = set()
    embeddings = []
    for speaker in manifest.speakers():
        utts = [u for u in manifest.utterances_of(speaker) if u in archive]
        if len(utts) <= n_enroll:
            raise ValueError(
                f"speaker {speaker!r} has {len(utts)} utterances; "
                f"need more than n_enroll={n_enroll} to keep a test set"
            )
        chosen = rng.choice(len(utts), size=n_enroll, replace=False)
        chosen_ids = [utts[i] for i in sorted(chosen.tolist())]
        enrolled.update(chosen_ids)
        means = np.stack([utterance_mean(archive.frames(u)) for u in chosen_ids])
        embeddings.append(SpeakerEmbedding(speaker, means.mean(axis=0), n_enroll))
    test_utts = [u for u in archive.utt_ids if u not in enrolled]
    return embeddings, test_utts


def score_trials(
    embeddings: list[SpeakerEmbedding],
    archive: FeatureArchive,
    test_utts: list[str],
    manifest: Manifest,
) -> list[Trial]:
    """One Euclidean-distance trial per (test utterance, enrolled speaker)."""
    trials = []
    for utt_id in test_utts:
        mean = utterance_mean(archive.frames(utt_id))
        true_speaker = manifest.speaker_of(utt_id)
        for emb in embeddings:
            if emb.embedding.shape != mean.shape:
                raise ValueError(
                    f"dimension mismatch: embedding {emb.embedding.shape}, "
                    f"utterance mean {mean.shape}"
                )
            dist = float(np.linalg.norm(mean - emb.embedding))
            trials.append(Trial(emb.speaker_id, utt_id, dist, emb.speaker_id == true_speaker))
    return trials


def closed_set_accuracy(trials: list[Trial]) -> float:
    """Fraction of test utterances whose nearest enrolled speaker is the true one.

    Distance ties are broken toward the lexicographically smallest speaker id.
    """
    by_utt: dict[str, list[Trial]] = {}
    for t in trials:
        by_utt.setdefault(t.utt_id, []).append(t)
    if not by_utt:
        raise ValueError("no trials")
    n_speakers = len({t.speaker_id for t in trials})
    correct = 0
    for utt_id, utt_trials in by_utt.items():
        if len(utt_trials) != n_speakers:
            raise ValueError(
                f"utterance {utt_id!r} has {len(utt_trials)} trials, expected {n_speakers}"
            )
        best = min(utt_trials, key=lambda t: (t.distance, t.speaker_id))
        correct += int(best.is_target)
    return correct / len(by_utt)


def compute_eer(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Equal error rate over a finite threshold sweep; larger score = more target-like.

    Candidate thresholds are the midpoints of consecutive distinct scores
    plus -inf and +inf. FRR(t) is the fraction of targets with score < t,
    FAR(t) the fraction of impostors with score >= t; the reported EER is
    (FRR+FAR)/2 at the first threshold (ascending) minimizing |FRR - FAR|.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    targets = np.sort(scores[labels])
    impostors = np.sort(scores[~labels])
    if targets.size == 0 or impostors.size == 0:
        raise ValueError("need at least one target and one impostor trial")
    uniq = np.unique(scores)
    thresholds = np.concatenate([[-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]])
    frr = np.searchsorted(targets, thresholds, side="left") / targets.size
    far = (impostors.size - np.searchsorted(impostors, thresholds, side="left")) / impostors.size
    idx = int(np.argmin(np.abs(frr - far)))
    return float((frr[idx] + far[idx]) / 2.0), float(thresholds[idx])


def verify_archive(
    archive: FeatureArchive,
    manifest: Manifest,
    n_enroll: int = 5,
    seed: int = 0,
) -> VerifyReport:
    """Full protocol: enroll, score all trials, report EER and accuracy."""
    embeddings, test_utts = enroll(archive, manifest, n_enroll, seed)
    trials = score_trials(embeddings, archive, test_utts, manifest)
    accuracy = closed_set_accuracy(trials)
    scores = np.array([-t.distance for t in trials])
    labels = np.array([t.is_target for t in trials])
    eer, threshold = compute_eer(scores, labels)
    return VerifyReport(eer, threshold, accuracy, len(trials), len(test_utts))
