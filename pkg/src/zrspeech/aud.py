"""Acoustic unit discovery: K-means over feature frames and cluster quality metrics.

Frames (optionally standardized first) are clustered with seeded K-means;
each frame is then quantized to its nearest centroid, turning every utterance
into a discrete unit sequence. Units are compared against phone alignments
with chance-adjusted clustering metrics (ARI, AMI, homogeneity, completeness).

The assignment step works on fixed-size chunks reduced in chunk order, so
results are bit-identical for any worker count.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np
from scipy.special import gammaln

from .corpus import (
    Alignment,
    BadMagicError,
    CorpusError,
    DuplicateUttIdError,
    FeatureArchive,
    Manifest,
    TruncatedStreamError,
    VersionMismatchError,
    _open_binary,
    _open_text,
    _read_exact,
)

CODEBOOK_MAGIC = b"ZRCB"
CODEBOOK_VERSION = 1
FLAG_STANDARDIZED_INPUT = 1
DEFAULT_CHUNK = 8192
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 300
SILENCE_LABELS = ("sil",)


@dataclass(frozen=True)
class Codebook:
    """K centroid vectors plus the provenance needed to use them correctly.

    standardized_input records whether the codebook was fit on standardized
    frames (quantization refuses archives whose provenance contradicts it).
    seed is kept for reporting but is not part of the serialized format, so
    it is None on codebooks read from disk. inertia_history holds the
    objective recorded at the start of each fitting iteration.
    """

    centroids: np.ndarray
    standardized_input: bool
    seed: int | None = None
    inertia_history: tuple[float, ...] | None = None

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float32)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"centroids must be a K x d matrix with K >= 1, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroid rows must be finite")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def write_codebook(codebook: Codebook, dest: str | Path | BinaryIO) -> None:
    f, close = _open_binary(dest, "wb")
    try:
        flags = FLAG_STANDARDIZED_INPUT if codebook.standardized_input else 0
        f.write(CODEBOOK_MAGIC)
        f.write(struct.pack("<IIII", CODEBOOK_VERSION, codebook.k, codebook.dim, flags))
        f.write(np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes())
    finally:
        if close:
            f.close()


def read_codebook(source: str | Path | BinaryIO) -> Codebook:
    f, close = _open_binary(source, "rb")
    try:
        magic = _read_exact(f, 4, "magic")
        if magic != CODEBOOK_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {CODEBOOK_MAGIC!r}")
        version, k, dim, flags = struct.unpack("<IIII", _read_exact(f, 16, "header"))
        if version != CODEBOOK_VERSION:
            raise VersionMismatchError(
                f"unsupported codebook version {version}, expected {CODEBOOK_VERSION}"
            )
        payload = _read_exact(f, k * dim * 4, "centroids")
        centroids = np.frombuffer(payload, dtype="<f4").reshape(k, dim)
        return Codebook(centroids, standardized_input=bool(flags & FLAG_STANDARDIZED_INPUT))
    finally:
        if close:
            f.close()


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------

def _chunk_ranges(n: int, chunk_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]


def _map_chunks(fn, ranges, n_workers: int):
    """Apply fn over chunk ranges, returning results in chunk order."""
    if n_workers <= 1 or len(ranges) <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, ranges))


def assign_frames(
    frames: np.ndarray,
    centroids: np.ndarray,
    chunk_size: int = DEFAULT_CHUNK,
    n_workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid assignment (ties to the lowest index) and squared distances.

    Returns (labels int32, squared distance to the assigned centroid float64).
    """
    x = np.asarray(frames, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    if x.shape[1] != c.shape[1]:
        raise ValueError(f"dimension mismatch: frames {x.shape[1]}, centroids {c.shape[1]}")
    c_sq = np.einsum("kd,kd->k", c, c)
    labels = np.empty(x.shape[0], dtype=np.int32)
    min_d2 = np.empty(x.shape[0], dtype=np.float64)

    def work(rng: tuple[int, int]):
        s, e = rng
        chunk = x[s:e]
        d2 = np.einsum("nd,nd->n", chunk, chunk)[:, None] - 2.0 * (chunk @ c.T) + c_sq[None, :]
        lab = np.argmin(d2, axis=1)
        best = np.maximum(d2[np.arange(e - s), lab], 0.0)
        return s, e, lab, best

    for s, e, lab, best in _map_chunks(work, _chunk_ranges(x.shape[0], chunk_size), n_workers):
        labels[s:e] = lab
        min_d2[s:e] = best
    return labels, min_d2


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = np.maximum(np.einsum("nd,nd->n", x - centroids[0], x - centroids[0]), 0.0)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = x[idx]
        cand = np.einsum("nd,nd->n", x - centroids[j], x - centroids[j])
        d2 = np.minimum(d2, np.maximum(cand, 0.0))
    return centroids


def kmeans_fit(
    frames: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    standardized_input: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
    n_workers: int = 1,
) -> Codebook:
    """Fit K centroids with k-means++ initialization and Lloyd iterations.

    Stops when the assignment is stable, the max centroid shift drops below
    tol, or max_iters is reached. The inertia (sum of squared distances to
    assigned centroids) is recorded at each iteration and asserted
    non-increasing. Empty clusters are reseeded to the point currently
    farthest from its assigned centroid.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"frames must be a N x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("frames must be finite")
    n, d = x.shape
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} frames, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, k, rng)
    ranges = _chunk_ranges(n, chunk_size)
    history: list[float] = []
    prev_labels: np.ndarray | None = None

    for _ in range(max_iters):
        labels, min_d2 = assign_frames(x, centroids, chunk_size, n_workers)
        inertia = float(sum(float(min_d2[s:e].sum()) for s, e in ranges))
        if history and inertia > history[-1]:
            raise AssertionError(
                f"inertia increased: {history[-1]!r} -> {inertia!r}"
            )
        history.append(inertia)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels

        def sums_counts(rng_: tuple[int, int]):
            s, e = rng_
            part_sum = np.zeros((k, d), dtype=np.float64)
            np.add.at(part_sum, labels[s:e], x[s:e])
            part_count = np.bincount(labels[s:e], minlength=k).astype(np.int64)
            return part_sum, part_count

        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for part_sum, part_count in _map_chunks(sums_counts, ranges, n_workers):
            sums += part_sum
            counts += part_count

        new_centroids = centroids.copy()
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not np.all(nonempty):
            spare = min_d2.copy()
            for j in np.flatnonzero(~nonempty):
                idx = int(np.argmax(spare))
                new_centroids[j] = x[idx]
                spare[idx] = -1.0
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break

    return Codebook(
        centroids.astype(np.float32),
        standardized_input=standardized_input,
        seed=seed,
        inertia_history=tuple(history),
    )


def training_frames(
    archive: FeatureArchive,
    manifest: Manifest | None = None,
    speakers: Sequence[str] | None = None,
    n_speakers: int | None = None,
    max_frames: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Gather fitting frames, optionally from a speaker subset with a frame cap.

    `speakers` picks an explicit subset; `n_speakers` picks a seeded random
    subset instead (manifest required for either). `max_frames` uniformly
    subsamples the gathered frames (seeded) when they exceed the cap.
    """
    rng = np.random.default_rng(seed)
    utt_ids: Iterable[str] = archive.utt_ids
    if speakers is not None or n_speakers is not None:
        if manifest is None:
            raise ValueError("speaker selection requires a manifest")
        if speakers is not None and n_speakers is not None:
            raise ValueError("pass either speakers or n_speakers, not both")
        if n_speakers is not None:
            pool = manifest.speakers()
            if n_speakers > len(pool):
                raise ValueError(f"asked for {n_speakers} speakers, manifest has {len(pool)}")
            chosen = set(rng.choice(len(pool), size=n_speakers, replace=False).tolist())
            speakers = [pool[i] for i in sorted(chosen)]
        keep = set(speakers)
        unknown = keep - set(manifest.speakers())
        if unknown:
            raise ValueError(f"unknown speakers: {sorted(unknown)}")
        utt_ids = [u for u in archive.utt_ids if manifest.speaker_of(u) in keep]
    stacked = np.concatenate([archive.frames(u) for u in utt_ids], axis=0)
    if max_frames is not None and stacked.shape[0] > max_frames:
        idx = np.sort(rng.choice(stacked.shape[0], size=max_frames, replace=False))
        stacked = stacked[idx]
    return stacked


# ---------------------------------------------------------------------------
# Unit sequences
# ---------------------------------------------------------------------------

class UnitSequences:
    """Ordered mapping from utt_id to an integer unit sequence."""

    def __init__(self, sequences: Iterable[tuple[str, np.ndarray]]):
        self._ids: list[str] = []
        self._units: dict[str, np.ndarray] = {}
        for utt_id, units in sequences:
            if utt_id in self._units:
                raise DuplicateUttIdError(f"duplicate utt_id {utt_id!r}")
            u = np.asarray(units, dtype=np.int32)
            if u.ndim != 1:
                raise ValueError(f"{utt_id!r}: units must be 1-D")
            if u.size and u.min() < 0:
                raise ValueError(f"{utt_id!r}: units must be non-negative")
            u = u.copy()
            u.setflags(write=False)
            self._ids.append(utt_id)
            self._units[utt_id] = u

    @property
    def utt_ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def units(self, utt_id: str) -> np.ndarray:
        return self._units[utt_id]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for utt_id in self._ids:
            yield utt_id, self._units[utt_id]

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._units

    def max_unit(self) -> int:
        return max((int(u.max()) for u in self._units.values() if u.size), default=-1)


def write_units(units: UnitSequences, dest: str | Path | TextIO) -> None:
    f, close = _open_text(dest, "w")
    try:
        for utt_id, seq in units.items():
            f.write(utt_id + ("" if seq.size == 0 else " " + " ".join(map(str, seq.tolist()))) + "\n")
    finally:
        if close:
            f.close()


def read_units(source: str | Path | TextIO) -> UnitSequences:
    f, close = _open_text(source, "r")
    try:
        seqs = []
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            utt_id, toks = parts[0], parts[1:]
            try:
                units = np.array([int(t) for t in toks], dtype=np.int32)
            except ValueError:
                raise CorpusError(f"units line {lineno}: non-integer unit") from None
            if units.size and units.min() < 0:
                raise CorpusError(f"units line {lineno}: negative unit")
            seqs.append((utt_id, units))
        return UnitSequences(seqs)
    finally:
        if close:
            f.close()


def quantize(
    archive: FeatureArchive,
    codebook: Codebook,
    chunk_size: int = DEFAULT_CHUNK,
    n_workers: int = 1,
) -> UnitSequences:
    """Map every frame to its nearest centroid (ties to the lowest index).

    Refuses archives whose standardization provenance contradicts the
    codebook's standardized_input flag; archives with unknown provenance
    (e.g. freshly read from disk) are accepted as-is.
    """
    if archive.dim != codebook.dim:
        raise ValueError(
            f"dimension mismatch: archive dim {archive.dim}, codebook dim {codebook.dim}"
        )
    if archive.standardized is not None and archive.standardized != codebook.standardized_input:
        want = "standardized" if codebook.standardized_input else "raw"
        got = "standardized" if archive.standardized else "raw"
        raise ValueError(f"codebook expects {want} features but archive holds {got} features")
    offsets = [0]
    for utt_id in archive.utt_ids:
        offsets.append(offsets[-1] + archive.num_frames(utt_id))
    stacked = np.concatenate([f for _, f in archive.items()], axis=0)
    labels, _ = assign_frames(stacked, codebook.centroids, chunk_size, n_workers)
    return UnitSequences(
        (utt_id, labels[offsets[i] : offsets[i + 1]])
        for i, utt_id in enumerate(archive.utt_ids)
    )


def one_hot(units: np.ndarray, k: int) -> np.ndarray:
    """T x K one-hot (standard basis) encoding of a unit sequence."""
    u = np.asarray(units, dtype=np.int64)
    if u.ndim != 1:
        raise ValueError("units must be 1-D")
    if u.size and (u.min() < 0 or u.max() >= k):
        raise ValueError(f"units must lie in [0, {k}), got range [{u.min()}, {u.max()}]")
    out = np.zeros((u.shape[0], k), dtype=np.float32)
    out[np.arange(u.shape[0]), u] = 1.0
    return out


def units_to_archive(units: UnitSequences, k: int, frame_period_us: int = 10000) -> FeatureArchive:
    """One-hot encode every unit sequence into a K-dimensional feature archive."""
    return FeatureArchive(
        k, frame_period_us, ((utt_id, one_hot(seq, k)) for utt_id, seq in units.items())
    )


# ---------------------------------------------------------------------------
# Clustering metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterMetricsReport:
    ari: float
    ami: float
    homogeneity: float
    completeness: float
    n_frames: int

    def as_dict(self) -> dict:
        return {
            "ari": self.ari,
            "ami": self.ami,
            "homogeneity": self.homogeneity,
            "completeness": self.completeness,
            "n_frames": self.n_frames,
        }


def frame_pairs(
    units: UnitSequences,
    alignment: Alignment,
    exclude_silence: bool = True,
    silence_labels: Sequence[str] = SILENCE_LABELS,
) -> list[tuple[int, str]]:
    """Pair each frame's unit with its aligned phone label.

    Lengths must agree per utterance. With exclude_silence (the default),
    frames whose phone is a silence label are dropped.
    """
    silence = set(silence_labels)
    pairs: list[tuple[int, str]] = []
    for utt_id, seq in units.items():
        if utt_id not in alignment:
            raise CorpusError(f"utterance {utt_id!r} missing from alignment")
        phones = alignment.frame_labels(utt_id)
        if len(phones) != seq.shape[0]:
            raise CorpusError(
                f"{utt_id!r}: {seq.shape[0]} units but alignment covers {len(phones)} frames"
            )
        for unit, phone in zip(seq.tolist(), phones):
            if exclude_silence and phone in silence:
                continue
            pairs.append((unit, phone))
    return pairs


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def expected_mutual_information(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """E[MI] over the hypergeometric model of random contingency tables.

    For each (row total a_i, column total b_j), sums MI contributions over
    all feasible cell values n_ij weighted by the hypergeometric probability
    of n_ij given margins.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    lg = gammaln(np.arange(n + 2))  # lg[m] = ln((m-1)!)
    log_n = np.log(n)
    emi = 0.0
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1)
            term = (nij / n) * (log_n + np.log(nij) - np.log(ai) - np.log(bj))
            log_p = (
                lg[ai + 1]
                + lg[bj + 1]
                + lg[n - ai + 1]
                + lg[n - bj + 1]
                - lg[n + 1]
                - lg[nij + 1]
                - lg[ai - nij + 1]
                - lg[bj - nij + 1]
                - lg[n - ai - bj + nij + 1]
            )
            emi += float((term * np.exp(log_p)).sum())
    return emi


def _contingency(u: Sequence, v: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, ui = np.unique(np.asarray(u), return_inverse=True)
    _, vi = np.unique(np.asarray(v), return_inverse=True)
    table = np.zeros((ui.max() + 1, vi.max() + 1), dtype=np.int64)
    np.add.at(table, (ui, vi), 1)
    return table, table.sum(axis=1), table.sum(axis=0)


def clustering_metrics(pairs: Sequence[tuple[int, str]]) -> ClusterMetricsReport:
    """ARI, AMI, homogeneity, completeness of unit labels against phone labels.

    Units play the cluster role, phones the class role: homogeneity asks
    whether each unit maps to a single phone, completeness whether each
    phone maps to a single unit. Natural-log entropies; AMI uses the
    arithmetic mean normalizer and the exact hypergeometric expected MI.
    """
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 frames, got {len(pairs)}")
    units = [p[0] for p in pairs]
    phones = [p[1] for p in pairs]
    table, a, b = _contingency(units, phones)
    n = len(pairs)

    trivial = (len(a) == len(b) == 1) or (len(a) == n and len(b) == n)
    if trivial:
        # Both labelings are degenerate in the same way (one block each, or
        # all singletons): declared perfect agreement by convention.
        return ClusterMetricsReport(1.0, 1.0, 1.0, 1.0, n)

    # ARI by pair counting
    sum_cells = float((table * (table - 1) // 2).sum())
    sum_a = float((a * (a - 1) // 2).sum())
    sum_b = float((b * (b - 1) // 2).sum())
    n_pairs = n * (n - 1) / 2
    expected = sum_a * sum_b / n_pairs
    max_index = (sum_a + sum_b) / 2
    ari = 1.0 if max_index == expected else (sum_cells - expected) / (max_index - expected)

    # Entropies and MI (natural log)
    h_u = _entropy(a, n)
    h_v = _entropy(b, n)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = (a[:, None] * b[None, :])[nz].astype(np.float64)
    mi = float(((nij / n) * np.log(n * nij / outer)).sum())

    emi = expected_mutual_information(a, b, n)
    denom = 0.5 * (h_u + h_v) - emi
    if denom == 0.0:
        ami = 1.0 if mi == emi else 0.0
    else:
        ami = (mi - emi) / denom

    # homogeneity/completeness from conditional entropies; units are
    # clusters (U), phones are classes (V)
    row_totals = np.broadcast_to(a[:, None], table.shape)[nz].astype(np.float64)
    col_totals = np.broadcast_to(b[None, :], table.shape)[nz].astype(np.float64)
    h_v_given_u = float(-((nij / n) * np.log(nij / row_totals)).sum())
    h_u_given_v = float(-((nij / n) * np.log(nij / col_totals)).sum())
    homogeneity = 1.0 if h_v == 0.0 else 1.0 - h_v_given_u / h_v
    completeness = 1.0 if h_u == 0.0 else 1.0 - h_u_given_v / h_u

    return ClusterMetricsReport(float(ari), float(ami), float(homogeneity), float(completeness), n)
