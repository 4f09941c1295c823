"""ABX phone discrimination with DTW-aligned cosine distance.

Items are triphones (three consecutive aligned segments); a minimal pair
shares its left and right phones and differs in the center. Given instances
A and X of one triphone and B of its minimal-pair partner, a triple is
correct when X is DTW-closer to A than to B. Within-speaker cells take A, B
and X from one speaker; across-speaker cells take A and B from one speaker
and X from another. Cell errors are averaged over speaker contexts, the two
orders of each triphone pair are averaged, and pairs are averaged into the
final error rate — which is therefore recomputable from the per-cell
breakdown alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .corpus import Alignment, FeatureArchive, Manifest

COST_SNAP = 1e-12
DEFAULT_X_CAP = 10
SILENCE_LABELS = ("sil",)


class AbxError(Exception):
    """Raised when an ABX evaluation cannot produce a score (e.g. no valid cells)."""


@dataclass(frozen=True)
class AbxItem:
    utt_id: str
    speaker_id: str
    left: str
    center: str
    right: str
    start: int
    end: int

    @property
    def triphone(self) -> tuple[str, str, str]:
        return (self.left, self.center, self.right)


@dataclass(frozen=True)
class AbxCell:
    triphone_a: tuple[str, str, str]
    triphone_b: tuple[str, str, str]
    speakers: tuple[str, ...]  # (spk,) within; (spk_ab, spk_x) across
    error: float
    n_triples: int

    def as_dict(self) -> dict:
        return {
            "triphone_a": list(self.triphone_a),
            "triphone_b": list(self.triphone_b),
            "speakers": list(self.speakers),
            "error": self.error,
            "n_triples": self.n_triples,
        }


@dataclass(frozen=True)
class AbxReport:
    mode: str
    error_rate: float
    n_cells: int
    n_triples: int
    n_cells_skipped: int
    x_cap: int | None
    seed: int
    cells: tuple[AbxCell, ...]

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "error_rate": self.error_rate,
            "n_cells": self.n_cells,
            "n_triples": self.n_triples,
            "n_cells_skipped": self.n_cells_skipped,
            "x_cap": self.x_cap,
            "seed": self.seed,
            "cells": [c.as_dict() for c in self.cells],
        }


def extract_items(
    alignment: Alignment,
    manifest: Manifest,
    silence_labels: Sequence[str] = SILENCE_LABELS,
) -> list[AbxItem]:
    """One item per window of three consecutive segments, skipping silence centers."""
    silence = set(silence_labels)
    items = []
    for utt_id in alignment.utt_ids:
        speaker = manifest.speaker_of(utt_id)
        segs = alignment.segments(utt_id)
        for i in range(len(segs) - 2):
            left, center, right = segs[i], segs[i + 1], segs[i + 2]
            if center.phone in silence:
                continue
            items.append(
                AbxItem(utt_id, speaker, left.phone, center.phone, right.phone, left.start, right.end)
            )
    return items


# ---------------------------------------------------------------------------
# DTW with cosine frame distance
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _dtw_from_normalized(xn, x_zero, yn, y_zero):  # pragma: no cover - jitted
    tx, ty = xn.shape[0], yn.shape[0]
    cost = np.empty((tx, ty))
    for i in range(tx):
        for j in range(ty):
            if x_zero[i] and y_zero[j]:
                c = 0.0
            elif x_zero[i] or y_zero[j]:
                c = 1.0
            else:
                s = 0.0
                for k in range(xn.shape[1]):
                    s += xn[i, k] * yn[j, k]
                c = 1.0 - s
            if c < COST_SNAP:
                c = 0.0
            elif c > 2.0:
                c = 2.0
            cost[i, j] = c

    # accumulate (path sum, path node count); ties on sum prefer fewer nodes
    acc = np.empty((tx, ty))
    nodes = np.empty((tx, ty), dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    nodes[0, 0] = 1
    for i in range(1, tx):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        nodes[i, 0] = i + 1
    for j in range(1, ty):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        nodes[0, j] = j + 1
    for i in range(1, tx):
        for j in range(1, ty):
            best_s = acc[i - 1, j - 1]
            best_n = nodes[i - 1, j - 1]
            if acc[i - 1, j] < best_s or (acc[i - 1, j] == best_s and nodes[i - 1, j] < best_n):
                best_s = acc[i - 1, j]
                best_n = nodes[i - 1, j]
            if acc[i, j - 1] < best_s or (acc[i, j - 1] == best_s and nodes[i, j - 1] < best_n):
                best_s = acc[i, j - 1]
                best_n = nodes[i, j - 1]
            acc[i, j] = best_s + cost[i, j]
            nodes[i, j] = best_n + 1
    return acc[tx - 1, ty - 1] / nodes[tx - 1, ty - 1]


@njit(cache=True, nogil=True)
def _dtw_pairs(flat, zeros, starts, ends, ii, jj, out):  # pragma: no cover - jitted
    for p in range(ii.shape[0]):
        i, j = ii[p], jj[p]
        out[p] = _dtw_from_normalized(
            flat[starts[i] : ends[i]],
            zeros[starts[i] : ends[i]],
            flat[starts[j] : ends[j]],
            zeros[starts[j] : ends[j]],
        )


def _normalize_rows(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(frames, dtype=np.float64)
    norms = np.sqrt(np.einsum("td,td->t", x, x))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return x / safe[:, None], zero


def dtw_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Mean cosine frame cost along the optimal monotone alignment path.

    Steps {(1,0),(0,1),(1,1)}; frame cost 1 - cosine similarity, with
    zero-norm frames costing 1 against anything and 0 against another zero
    frame. Returns (optimal path cost sum) / (path node count); among
    minimal-sum paths the shortest is used, making the result symmetric.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("inputs must be T x d matrices")
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ValueError("sequences must have at least one frame")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    xn, xz = _normalize_rows(x)
    yn, yz = _normalize_rows(y)
    return float(_dtw_from_normalized(xn, xz, yn, yz))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

_PAIR_CHUNK = 4096
_CELL_CHUNK = 16384


class _ItemBank:
    """Pre-normalized frame matrices for a set of items, stored contiguously."""

    def __init__(self, items: Sequence[AbxItem], frames_of):
        normed_list, zero_list = [], []
        starts = np.empty(len(items), dtype=np.int64)
        ends = np.empty(len(items), dtype=np.int64)
        offset = 0
        for idx, it in enumerate(items):
            frames = frames_of(it.utt_id)
            if it.end > frames.shape[0]:
                raise ValueError(
                    f"item span [{it.start}, {it.end}) exceeds utterance "
                    f"{it.utt_id!r} length {frames.shape[0]}"
                )
            normed, zero = _normalize_rows(frames[it.start : it.end])
            normed_list.append(normed)
            zero_list.append(zero)
            starts[idx] = offset
            offset += normed.shape[0]
            ends[idx] = offset
        self.n_items = len(items)
        self.flat = np.concatenate(normed_list) if normed_list else np.empty((0, 1))
        self.zero = np.concatenate(zero_list) if zero_list else np.empty(0, dtype=bool)
        self.starts = starts
        self.ends = ends

    def distance(self, i: int, j: int) -> float:
        return float(
            _dtw_from_normalized(
                self.flat[self.starts[i] : self.ends[i]],
                self.zero[self.starts[i] : self.ends[i]],
                self.flat[self.starts[j] : self.ends[j]],
                self.zero[self.starts[j] : self.ends[j]],
            )
        )

    def distances(self, ii: np.ndarray, jj: np.ndarray, n_workers: int = 1) -> np.ndarray:
        """DTW distances for index pairs (ii[p], jj[p]), batched through the kernel.

        Each pair is independent, so chunked threads write disjoint slices and
        the result does not depend on worker count or scheduling.
        """
        out = np.empty(ii.shape[0])
        spans = [(s, min(s + _PAIR_CHUNK, ii.shape[0])) for s in range(0, ii.shape[0], _PAIR_CHUNK)]

        def work(span):
            s, e = span
            _dtw_pairs(self.flat, self.zero, self.starts, self.ends, ii[s:e], jj[s:e], out[s:e])

        if n_workers <= 1 or len(spans) <= 1:
            for span in spans:
                work(span)
        else:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                list(pool.map(work, spans))
        return out


@njit(cache=True, nogil=True)
def _cross_keys(n_items, left, right, l_off, l_len, r_off, r_len, out_off, keys):  # pragma: no cover
    """Encoded (i, j) keys i * n_items + j for each block's cross product."""
    for g in range(l_off.shape[0]):
        p = out_off[g]
        for li in range(l_len[g]):
            i = left[l_off[g] + li]
            for ri in range(r_len[g]):
                keys[p] = i * n_items + right[r_off[g] + ri]
                p += 1


@njit(cache=True, nogil=True)
def _score_cells(  # pragma: no cover - jitted
    pair_keys, pair_dist, n_items, aidx, bidx, xidx,
    a_off, a_len, b_off, b_len, x_off, x_len, within, lo, hi, totals, counts,
):
    """Triple scores per cell from the deduplicated pair-distance table.

    A triple (a, b, x) scores 1 when d(a,x) > d(b,x), 0.5 when equal, 0
    otherwise; in within mode (where the X instances are the A instances)
    the a == x pairs are dropped. Cells are independent, so threads filling
    disjoint [lo, hi) spans give worker-count-invariant results.
    """
    for c in range(lo, hi):
        al, bl, xl = a_len[c], b_len[c], x_len[c]
        da = np.empty(al)
        db = np.empty(bl)
        total = 0.0
        count = 0
        for xi in range(xl):
            x = xidx[x_off[c] + xi]
            for ai in range(al):
                da[ai] = pair_dist[np.searchsorted(pair_keys, aidx[a_off[c] + ai] * n_items + x)]
            for bi in range(bl):
                db[bi] = pair_dist[np.searchsorted(pair_keys, bidx[b_off[c] + bi] * n_items + x)]
            for ai in range(al):
                if within[c] and ai == xi:
                    continue
                for bi in range(bl):
                    if da[ai] > db[bi]:
                        total += 1.0
                    elif da[ai] == db[bi]:
                        total += 0.5
                    count += 1
        totals[c] = total
        counts[c] = count


@dataclass(frozen=True)
class _CellGroup:
    """Work unit sharing one A-vs-X distance matrix across several B sets."""

    triphone_a: tuple[str, str, str]
    speakers: tuple[str, ...]
    a_idx: tuple[int, ...]
    x_idx: tuple[int, ...]  # identical to a_idx in within mode
    within: bool
    subcells: tuple[tuple[tuple[str, str, str], tuple[int, ...]], ...]  # (triphone_b, b_idx)


def _plan_within(by_key, contexts) -> tuple[list[_CellGroup], int]:
    groups = []
    skipped = 0
    for (speaker, left, right), centers in sorted(contexts.items()):
        for ca in sorted(centers):
            a_idx = by_key[(speaker, left, ca, right)]
            subcells = []
            for cb in sorted(centers):
                if cb == ca:
                    continue
                if len(a_idx) < 2:
                    skipped += 1
                    continue
                subcells.append(((left, cb, right), by_key[(speaker, left, cb, right)]))
            if subcells:
                groups.append(
                    _CellGroup(
                        (left, ca, right), (speaker,), a_idx, a_idx, True, tuple(subcells)
                    )
                )
    return groups, skipped


def _plan_across(by_key, contexts, x_cap, rng) -> tuple[list[_CellGroup], int]:
    # centers available per (speaker, left, right) come from the same index;
    # X candidates for triphone ta come from every other speaker with ta.
    speakers_of_type: dict[tuple[str, str, str], list[str]] = {}
    for (speaker, left, center, right) in by_key:
        speakers_of_type.setdefault((left, center, right), []).append(speaker)
    groups = []
    skipped = 0
    for (speaker_ab, left, right), centers in sorted(contexts.items()):
        for ca in sorted(centers):
            ta = (left, ca, right)
            a_idx = by_key[(speaker_ab, left, ca, right)]
            partner_bs = [
                (cb, by_key[(speaker_ab, left, cb, right)]) for cb in sorted(centers) if cb != ca
            ]
            if not partner_bs:
                continue
            for speaker_x in sorted(speakers_of_type.get(ta, ())):
                if speaker_x == speaker_ab:
                    continue
                x_idx = by_key[(speaker_x, left, ca, right)]
                if x_cap is not None and len(x_idx) > x_cap:
                    take = rng.choice(len(x_idx), size=x_cap, replace=False)
                    x_idx = tuple(x_idx[i] for i in sorted(take.tolist()))
                subcells = tuple(((left, cb, right), b_idx) for cb, b_idx in partner_bs)
                groups.append(
                    _CellGroup(ta, (speaker_ab, speaker_x), a_idx, x_idx, False, subcells)
                )
    return groups, skipped


def aggregate_error(cells: Sequence[AbxCell]) -> float:
    """Mean over speaker contexts per ordered pair, symmetrize orders, mean over pairs."""
    by_ordered: dict[tuple, list[float]] = {}
    for c in cells:
        by_ordered.setdefault((c.triphone_a, c.triphone_b), []).append(c.error)
    ordered_means = {k: sum(v) / len(v) for k, v in by_ordered.items()}
    by_unordered: dict[tuple, list[float]] = {}
    for (ta, tb), err in ordered_means.items():
        key = (ta, tb) if ta <= tb else (tb, ta)
        by_unordered.setdefault(key, []).append(err)
    pair_errors = [sum(v) / len(v) for v in by_unordered.values()]
    return sum(pair_errors) / len(pair_errors)


def abx_score(
    items: Sequence[AbxItem],
    features,
    mode: str,
    x_cap: int | None = DEFAULT_X_CAP,
    seed: int = 0,
    n_workers: int = 1,
) -> AbxReport:
    """Score all valid ABX cells; raises AbxError when none exist.

    `features` is a FeatureArchive or a mapping from utt_id to frame matrix.
    In across mode, X instances are capped at x_cap per cell by seeded
    sampling (cap and seed recorded in the report).
    """
    if mode not in ("within", "across"):
        raise ValueError(f"mode must be 'within' or 'across', got {mode!r}")
    frames_of = features.frames if isinstance(features, FeatureArchive) else features.__getitem__

    by_key: dict[tuple[str, str, str, str], tuple[int, ...]] = {}
    contexts: dict[tuple[str, str, str], set[str]] = {}
    for i, it in enumerate(items):
        key = (it.speaker_id, it.left, it.center, it.right)
        by_key[key] = by_key.get(key, ()) + (i,)
        contexts.setdefault((it.speaker_id, it.left, it.right), set()).add(it.center)

    if mode == "within":
        groups, skipped = _plan_within(by_key, contexts)
    else:
        rng = np.random.default_rng(seed)
        groups, skipped = _plan_across(by_key, contexts, x_cap, rng)

    bank = _ItemBank(items, frames_of)
    n = bank.n_items

    # Flatten groups into per-cell index spans: A and X blocks are shared by
    # a group's cells, B blocks are per cell.
    ax_blocks: list[tuple[int, ...]] = []
    b_blocks: list[tuple[int, ...]] = []
    ax_end = 0
    b_end = 0
    meta: list[tuple] = []  # (triphone_a, triphone_b, speakers)
    rows: list[tuple[int, int, int, int, int, int, int]] = []
    group_rows: list[tuple[int, int, int, int]] = []  # (a_off, a_len, x_off, x_len)
    for group in groups:
        a_off, ax_end = ax_end, ax_end + len(group.a_idx)
        ax_blocks.append(group.a_idx)
        x_off, ax_end = ax_end, ax_end + len(group.x_idx)
        ax_blocks.append(group.x_idx)
        group_rows.append((a_off, len(group.a_idx), x_off, len(group.x_idx)))
        for triphone_b, b_idx in group.subcells:
            b_off, b_end = b_end, b_end + len(b_idx)
            b_blocks.append(b_idx)
            meta.append((group.triphone_a, triphone_b, group.speakers))
            rows.append(
                (a_off, len(group.a_idx), b_off, len(b_idx), x_off, len(group.x_idx), group.within)
            )

    ax_flat = np.fromiter((i for block in ax_blocks for i in block), np.int64, ax_end)
    b_flat = np.fromiter((i for block in b_blocks for i in block), np.int64, b_end)
    cell_arr = np.asarray(rows, dtype=np.int64).reshape(len(rows), 7)
    a_offs, a_lens = cell_arr[:, 0], cell_arr[:, 1]
    b_offs, b_lens = cell_arr[:, 2], cell_arr[:, 3]
    x_offs, x_lens = cell_arr[:, 4], cell_arr[:, 5]
    within_flags = cell_arr[:, 6].astype(np.bool_)
    group_arr = np.asarray(group_rows, dtype=np.int64).reshape(len(group_rows), 4)

    # Every distance the cells need, computed once: encode (i, j) pairs as
    # i * n + j (A x X once per group, B x X once per cell), deduplicate, and
    # batch through the DTW kernel. The scoring kernel then fetches distances
    # by binary search into the sorted keys.
    ax_counts = group_arr[:, 1] * group_arr[:, 3]
    bx_counts = b_lens * x_lens
    ax_out = np.concatenate(([0], np.cumsum(ax_counts)))
    bx_out = np.concatenate(([0], np.cumsum(bx_counts))) + ax_out[-1]
    raw_keys = np.empty(int(bx_out[-1]), dtype=np.int64)
    _cross_keys(n, ax_flat, ax_flat, group_arr[:, 0], group_arr[:, 1],
                group_arr[:, 2], group_arr[:, 3], ax_out[:-1], raw_keys)
    _cross_keys(n, b_flat, ax_flat, b_offs, b_lens, x_offs, x_lens, bx_out[:-1], raw_keys)
    pair_keys = np.unique(raw_keys)
    pair_dist = bank.distances(pair_keys // n, pair_keys % n, n_workers=n_workers)

    totals = np.empty(len(rows))
    counts = np.empty(len(rows), dtype=np.int64)

    def score_span(span):
        lo, hi = span
        _score_cells(
            pair_keys, pair_dist, n, ax_flat, b_flat, ax_flat,
            a_offs, a_lens, b_offs, b_lens, x_offs, x_lens, within_flags,
            lo, hi, totals, counts,
        )

    spans = [(s, min(s + _CELL_CHUNK, len(rows))) for s in range(0, len(rows), _CELL_CHUNK)]
    if n_workers <= 1 or len(spans) <= 1:
        for span in spans:
            score_span(span)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(score_span, spans))

    cells = tuple(
        AbxCell(ta, tb, spk, totals[c] / counts[c], int(counts[c]))
        for c, (ta, tb, spk) in enumerate(meta)
    )
    if not cells:
        raise AbxError(f"no valid {mode}-speaker ABX cells ({skipped} candidate cells skipped)")
    return AbxReport(
        mode=mode,
        error_rate=aggregate_error(cells),
        n_cells=len(cells),
        n_triples=sum(c.n_triples for c in cells),
        n_cells_skipped=skipped,
        x_cap=x_cap if mode == "across" else None,
        seed=seed,
        cells=cells,
    )
