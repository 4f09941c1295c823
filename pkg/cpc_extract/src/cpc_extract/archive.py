"""Writer for the zrspeech feature-archive byte format.

Layout: magic "ZRFA"; little-endian header `<IIIQ` of (version=1, dim,
frame period in microseconds, utterance count); then per utterance a
`<H`-length-prefixed UTF-8 id, a `<I` frame count, and row-major float32
frames. Written archives open unchanged in the zrspeech toolkit.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"ZRFA"
VERSION = 1
_HEADER = struct.Struct("<IIIQ")


def write_archive(
    dest: str | Path,
    dim: int,
    frame_period_us: int,
    utterances: Iterable[tuple[str, np.ndarray]],
) -> tuple[tuple[str, int], ...]:
    """Stream (utt_id, T x dim float32 frames) pairs to a new archive file.

    The utterance count is back-patched into the header after the stream is
    exhausted, so `utterances` may be a generator. Returns the
    (utt_id, n_frames) pairs actually written.
    """
    if int(dim) < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if int(frame_period_us) < 1:
        raise ValueError(f"frame_period_us must be >= 1, got {frame_period_us}")
    written: list[tuple[str, int]] = []
    seen: set[str] = set()
    with open(dest, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, int(dim), int(frame_period_us), 0))
        for utt_id, frames in utterances:
            if not utt_id:
                raise ValueError("utt_id must be a non-empty string")
            if utt_id in seen:
                raise ValueError(f"duplicate utt_id {utt_id!r}")
            raw_id = utt_id.encode("utf-8")
            if len(raw_id) > 0xFFFF:
                raise ValueError(f"utt_id too long to serialize: {utt_id!r}")
            fr = np.ascontiguousarray(frames, dtype="<f4")
            if fr.ndim != 2 or fr.shape[1] != dim:
                raise ValueError(
                    f"{utt_id!r}: expected frames of shape (T, {dim}), got {fr.shape}"
                )
            if fr.shape[0] < 1:
                raise ValueError(f"{utt_id!r}: utterance must have at least one frame")
            f.write(struct.pack("<H", len(raw_id)))
            f.write(raw_id)
            f.write(struct.pack("<I", fr.shape[0]))
            f.write(fr.tobytes())
            seen.add(utt_id)
            written.append((utt_id, fr.shape[0]))
        f.seek(len(MAGIC))
        f.write(_HEADER.pack(VERSION, int(dim), int(frame_period_us), len(written)))
    return tuple(written)
