"""Feature archives, speaker manifests, phone alignments, and a synthetic oracle corpus.

The archive is the interchange format for every stage of the toolkit: a set of
per-utterance frame matrices sharing one dimensionality and one frame period.
The synthetic generator produces an archive whose latent structure (speaker,
gender and phone vectors) is known exactly, so downstream metrics can be
checked against ground truth.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

ARCHIVE_MAGIC = b"ZRFA"
ARCHIVE_VERSION = 1
MANIFEST_HEADER = ("utt_id", "speaker_id", "gender", "num_frames")
GENDERS = ("F", "M")

_U64_MASK = 0xFFFFFFFFFFFFFFFF


class CorpusError(Exception):
    """Base class for file-format and validation errors raised by this module."""


class BadMagicError(CorpusError):
    pass


class VersionMismatchError(CorpusError):
    pass


class TruncatedStreamError(CorpusError):
    pass


class DuplicateUttIdError(CorpusError):
    pass


class FeatureArchive:
    """Ordered collection of (utt_id, T x dim frame matrix) pairs.

    All utterances share `dim`; frames are stored as read-only float32 arrays.
    `standardized` is in-memory provenance only (the byte format has no slot
    for it): True after standardization, False for raw features, None when
    unknown, e.g. freshly read from disk.
    """

    def __init__(
        self,
        dim: int,
        frame_period_us: int,
        utterances: Iterable[tuple[str, np.ndarray]],
        standardized: bool | None = None,
    ):
        if int(dim) < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if int(frame_period_us) < 1:
            raise ValueError(f"frame_period_us must be >= 1, got {frame_period_us}")
        self.dim = int(dim)
        self.frame_period_us = int(frame_period_us)
        self.standardized = standardized
        self._ids: list[str] = []
        self._frames: dict[str, np.ndarray] = {}
        for utt_id, frames in utterances:
            if not utt_id:
                raise ValueError("utt_id must be a non-empty string")
            if utt_id in self._frames:
                raise DuplicateUttIdError(f"duplicate utt_id {utt_id!r}")
            fr = np.asarray(frames, dtype=np.float32)
            if fr.ndim != 2:
                raise ValueError(f"{utt_id!r}: frames must be 2-D, got shape {fr.shape}")
            if fr.shape[1] != self.dim:
                raise ValueError(
                    f"{utt_id!r}: expected dim {self.dim}, got {fr.shape[1]}"
                )
            if fr.shape[0] < 1:
                raise ValueError(f"{utt_id!r}: utterance must have at least one frame")
            fr = fr.copy()
            fr.setflags(write=False)
            self._ids.append(utt_id)
            self._frames[utt_id] = fr

    @property
    def utt_ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def frames(self, utt_id: str) -> np.ndarray:
        return self._frames[utt_id]

    def num_frames(self, utt_id: str) -> int:
        return self._frames[utt_id].shape[0]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for utt_id in self._ids:
            yield utt_id, self._frames[utt_id]

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._frames


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedStreamError(f"stream truncated while reading {what}")
    return data


def write_archive(archive: FeatureArchive, dest: str | Path | BinaryIO) -> None:
    """Serialize an archive: ZRFA magic, little-endian header, float32 frames."""
    f, close = _open_binary(dest, "wb")
    try:
        f.write(ARCHIVE_MAGIC)
        f.write(
            struct.pack(
                "<IIIQ",
                ARCHIVE_VERSION,
                archive.dim,
                archive.frame_period_us,
                len(archive),
            )
        )
        for utt_id, frames in archive.items():
            raw_id = utt_id.encode("utf-8")
            if len(raw_id) > 0xFFFF:
                raise ValueError(f"utt_id too long to serialize: {utt_id!r}")
            f.write(struct.pack("<H", len(raw_id)))
            f.write(raw_id)
            f.write(struct.pack("<I", frames.shape[0]))
            f.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())
    finally:
        if close:
            f.close()


def read_archive(source: str | Path | BinaryIO) -> FeatureArchive:
    f, close = _open_binary(source, "rb")
    try:
        magic = _read_exact(f, 4, "magic")
        if magic != ARCHIVE_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {ARCHIVE_MAGIC!r}")
        version, dim, frame_period_us, n_utts = struct.unpack(
            "<IIIQ", _read_exact(f, 20, "header")
        )
        if version != ARCHIVE_VERSION:
            raise VersionMismatchError(
                f"unsupported archive version {version}, expected {ARCHIVE_VERSION}"
            )
        utterances = []
        for _ in range(n_utts):
            (id_len,) = struct.unpack("<H", _read_exact(f, 2, "utt_id length"))
            utt_id = _read_exact(f, id_len, "utt_id").decode("utf-8")
            (num_frames,) = struct.unpack("<I", _read_exact(f, 4, "frame count"))
            payload = _read_exact(f, num_frames * dim * 4, f"frames of {utt_id!r}")
            frames = np.frombuffer(payload, dtype="<f4").reshape(num_frames, dim)
            utterances.append((utt_id, frames))
        return FeatureArchive(dim, frame_period_us, utterances)
    finally:
        if close:
            f.close()


def _open_binary(target, mode: str) -> tuple[BinaryIO, bool]:
    if isinstance(target, (str, Path)):
        return open(target, mode), True
    return target, False


def _open_text(target, mode: str) -> tuple[TextIO, bool]:
    if isinstance(target, (str, Path)):
        return open(target, mode, encoding="utf-8", newline=""), True
    return target, False


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    speaker_id: str
    gender: str
    num_frames: int


class Manifest:
    """Speaker/gender metadata per utterance."""

    def __init__(self, records: Iterable[ManifestRecord]):
        self.records: tuple[ManifestRecord, ...] = tuple(records)
        self._by_id: dict[str, ManifestRecord] = {}
        for rec in self.records:
            if rec.utt_id in self._by_id:
                raise DuplicateUttIdError(f"duplicate utt_id {rec.utt_id!r} in manifest")
            if rec.gender not in GENDERS:
                raise ValueError(f"{rec.utt_id!r}: gender must be one of {GENDERS}")
            if rec.num_frames < 0:
                raise ValueError(f"{rec.utt_id!r}: num_frames must be >= 0")
            self._by_id[rec.utt_id] = rec

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._by_id

    def record(self, utt_id: str) -> ManifestRecord:
        return self._by_id[utt_id]

    def speaker_of(self, utt_id: str) -> str:
        return self._by_id[utt_id].speaker_id

    def gender_of(self, utt_id: str) -> str:
        return self._by_id[utt_id].gender

    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({r.speaker_id for r in self.records}))

    def utterances_of(self, speaker_id: str) -> tuple[str, ...]:
        return tuple(r.utt_id for r in self.records if r.speaker_id == speaker_id)

    def validate_against(self, archive: FeatureArchive) -> None:
        for utt_id in archive.utt_ids:
            if utt_id not in self._by_id:
                raise CorpusError(f"archive utterance {utt_id!r} missing from manifest")
            rec = self._by_id[utt_id]
            if rec.num_frames != archive.num_frames(utt_id):
                raise CorpusError(
                    f"{utt_id!r}: manifest says {rec.num_frames} frames, "
                    f"archive has {archive.num_frames(utt_id)}"
                )


def read_manifest(source: str | Path | TextIO) -> Manifest:
    f, close = _open_text(source, "r")
    try:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError("manifest is empty") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise CorpusError(
                f"manifest header must be {','.join(MANIFEST_HEADER)!r}, got {header!r}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise CorpusError(f"manifest line {lineno}: expected 4 fields, got {len(row)}")
            utt_id, speaker_id, gender, nf = (field.strip() for field in row)
            if gender not in GENDERS:
                raise CorpusError(f"manifest line {lineno}: bad gender {gender!r}")
            try:
                num_frames = int(nf)
            except ValueError:
                raise CorpusError(f"manifest line {lineno}: bad num_frames {nf!r}") from None
            records.append(ManifestRecord(utt_id, speaker_id, gender, num_frames))
        return Manifest(records)
    finally:
        if close:
            f.close()


def write_manifest(manifest: Manifest, dest: str | Path | TextIO) -> None:
    f, close = _open_text(dest, "w")
    try:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            writer.writerow([rec.utt_id, rec.speaker_id, rec.gender, rec.num_frames])
    finally:
        if close:
            f.close()


@dataclass(frozen=True)
class Segment:
    phone: str
    start: int
    end: int


class Alignment:
    """Frame-aligned phone segments per utterance; spans are half-open [start, end)."""

    def __init__(self, segments: Mapping[str, Sequence[Segment]]):
        self._segments: dict[str, tuple[Segment, ...]] = {}
        for utt_id, segs in segments.items():
            segs = tuple(segs)
            if not segs:
                raise ValueError(f"{utt_id!r}: alignment has no segments")
            if segs[0].start != 0:
                raise ValueError(f"{utt_id!r}: first segment must start at frame 0")
            prev_end = 0
            for seg in segs:
                if seg.end <= seg.start:
                    raise ValueError(
                        f"{utt_id!r}: segment {seg.phone!r} has end {seg.end} <= start {seg.start}"
                    )
                if seg.start != prev_end:
                    raise ValueError(
                        f"{utt_id!r}: segment {seg.phone!r} starts at {seg.start}, "
                        f"previous segment ended at {prev_end} (gap or overlap)"
                    )
                prev_end = seg.end
            self._segments[utt_id] = segs

    @property
    def utt_ids(self) -> tuple[str, ...]:
        return tuple(self._segments)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._segments

    def segments(self, utt_id: str) -> tuple[Segment, ...]:
        return self._segments[utt_id]

    def total_frames(self, utt_id: str) -> int:
        return self._segments[utt_id][-1].end

    def frame_labels(self, utt_id: str) -> list[str]:
        labels: list[str] = []
        for seg in self._segments[utt_id]:
            labels.extend([seg.phone] * (seg.end - seg.start))
        return labels

    def validate_against(self, archive: FeatureArchive) -> None:
        for utt_id in archive.utt_ids:
            if utt_id not in self._segments:
                raise CorpusError(f"archive utterance {utt_id!r} missing from alignment")
            if self.total_frames(utt_id) != archive.num_frames(utt_id):
                raise CorpusError(
                    f"{utt_id!r}: alignment covers {self.total_frames(utt_id)} frames, "
                    f"archive has {archive.num_frames(utt_id)}"
                )


def read_alignment(source: str | Path | TextIO, manifest: Manifest | None = None) -> Alignment:
    """Parse `utt_id phone start_frame end_frame` lines, one segment per line.

    Segments of one utterance must appear in order; contiguity is enforced.
    When a manifest is given, every utt_id must be known to it.
    """
    f, close = _open_text(source, "r")
    try:
        raw: dict[str, list[Segment]] = {}
        last_end: dict[str, int] = {}
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CorpusError(f"alignment line {lineno}: expected 4 fields, got {len(parts)}")
            utt_id, phone, start_s, end_s = parts
            try:
                start, end = int(start_s), int(end_s)
            except ValueError:
                raise CorpusError(f"alignment line {lineno}: bad frame index") from None
            if manifest is not None and utt_id not in manifest:
                raise CorpusError(f"alignment line {lineno}: unknown utt_id {utt_id!r}")
            if end <= start:
                raise CorpusError(f"alignment line {lineno}: end {end} <= start {start}")
            if utt_id not in raw:
                if start != 0:
                    raise CorpusError(
                        f"alignment line {lineno}: first segment of {utt_id!r} must start at 0"
                    )
                raw[utt_id] = []
                last_end[utt_id] = 0
            if start != last_end[utt_id]:
                raise CorpusError(
                    f"alignment line {lineno}: segment starts at {start} but previous "
                    f"segment of {utt_id!r} ended at {last_end[utt_id]} (gap or overlap)"
                )
            raw[utt_id].append(Segment(phone, start, end))
            last_end[utt_id] = end
        if not raw:
            raise CorpusError("alignment is empty")
        return Alignment(raw)
    finally:
        if close:
            f.close()


def write_alignment(alignment: Alignment, dest: str | Path | TextIO) -> None:
    f, close = _open_text(dest, "w")
    try:
        for utt_id in alignment.utt_ids:
            for seg in alignment.segments(utt_id):
                f.write(f"{utt_id} {seg.phone} {seg.start} {seg.end}\n")
    finally:
        if close:
            f.close()


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Controls the synthetic oracle corpus.

    Every frame is s_i + g_i + p_k + n with per-speaker, per-gender, per-phone
    and per-frame Gaussian draws; defaults keep speaker and phone structure
    both recoverable but separable by standardization.
    """

    n_speakers: int = 20
    n_phones: int = 10
    dim: int = 16
    utterances_per_speaker: int = 20
    segments_per_utterance: int = 40
    frames_per_segment_range: tuple[int, int] = (3, 10)
    sigma_speaker: float = 1.0
    sigma_gender: float = 0.5
    sigma_phone: float = 1.0
    sigma_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in (
            "n_speakers",
            "n_phones",
            "dim",
            "utterances_per_speaker",
            "segments_per_utterance",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        lo, hi = self.frames_per_segment_range
        if lo < 1 or hi < lo:
            raise ValueError("frames_per_segment_range must be a non-empty interval with lo >= 1")
        for name in ("sigma_speaker", "sigma_gender", "sigma_phone", "sigma_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class SynthLatents:
    speaker_vectors: np.ndarray  # (n_speakers, dim)
    gender_vectors: dict[str, np.ndarray]
    phone_vectors: np.ndarray  # (n_phones, dim)


# Substream domains for per-entity seed derivation. Sampling uses numpy's
# PCG64 generator keyed by SeedSequence((seed, domain, index)), so every
# speaker, gender, phone and utterance draws from its own deterministic
# stream regardless of generation order or parallelism.
_DOM_SPEAKER, _DOM_GENDER, _DOM_PHONE, _DOM_UTTERANCE = 0, 1, 2, 3


def _substream(seed: int, domain: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed & _U64_MASK, domain, index)))
    )


def synth_latents(config: SynthConfig) -> SynthLatents:
    """Recompute the generator's latent vectors; the oracle for synthetic data."""
    d = config.dim
    speaker = np.stack(
        [
            config.sigma_speaker * _substream(config.seed, _DOM_SPEAKER, i).standard_normal(d)
            for i in range(config.n_speakers)
        ]
    )
    gender = {
        g: config.sigma_gender * _substream(config.seed, _DOM_GENDER, gi).standard_normal(d)
        for gi, g in enumerate(GENDERS)
    }
    phone = np.stack(
        [
            config.sigma_phone * _substream(config.seed, _DOM_PHONE, k).standard_normal(d)
            for k in range(config.n_phones)
        ]
    )
    return SynthLatents(speaker, gender, phone)


def speaker_name(i: int) -> str:
    return f"s{i:03d}"


def phone_name(k: int) -> str:
    return f"p{k}"


def generate_synthetic(config: SynthConfig) -> tuple[FeatureArchive, Manifest, Alignment]:
    """Generate (archive, manifest, alignment); deterministic given config.seed."""
    latents = synth_latents(config)
    lo, hi = config.frames_per_segment_range
    utterances = []
    records = []
    segments: dict[str, list[Segment]] = {}
    for i in range(config.n_speakers):
        spk = speaker_name(i)
        gender = GENDERS[i % 2]
        base = latents.speaker_vectors[i] + latents.gender_vectors[gender]
        for j in range(config.utterances_per_speaker):
            utt_id = f"{spk}_u{j:03d}"
            u_index = i * config.utterances_per_speaker + j
            rng = _substream(config.seed, _DOM_UTTERANCE, u_index)
            phones = rng.integers(0, config.n_phones, size=config.segments_per_utterance)
            durations = rng.integers(lo, hi + 1, size=config.segments_per_utterance)
            total = int(durations.sum())
            frame_phones = np.repeat(phones, durations)
            frames = (
                base[None, :]
                + latents.phone_vectors[frame_phones]
                + config.sigma_noise * rng.standard_normal((total, config.dim))
            )
            utterances.append((utt_id, frames.astype(np.float32)))
            records.append(ManifestRecord(utt_id, spk, gender, total))
            segs = []
            pos = 0
            for k, dur in zip(phones, durations):
                segs.append(Segment(phone_name(int(k)), pos, pos + int(dur)))
                pos += int(dur)
            segments[utt_id] = segs
    archive = FeatureArchive(config.dim, 10_000, utterances, standardized=False)
    return archive, Manifest(records), Alignment(segments)
