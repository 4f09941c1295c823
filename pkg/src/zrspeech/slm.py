"""Unit language modeling and the lexical, syntactic, and semantic evaluators.

An interpolated Kneser-Ney n-gram model over discovered unit sequences
provides conditional log-probabilities; sequences are scored by the chain
rule. The lexical and syntactic tasks compare log-probabilities within
positive/negative stimulus pairs; the semantic task correlates cosine
similarities of pooled utterance vectors with human judgments via Spearman
rank correlation.

Any object exposing `order` and `cond_logprob(context, token)` can stand in
for the bundled n-gram model (e.g. an external neural scorer).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TextIO

import numpy as np
from scipy.stats import spearmanr

from .corpus import CorpusError, _open_text
from .aud import UnitSequences

BOS = -1  # appears only in contexts, never predicted
PAIRS_HEADER = ("pair_id", "pos_utt_id", "neg_utt_id")
SIMI_HEADER = ("pair_id", "utt_a", "utt_b", "human_score")
POOLING_OPS = ("min", "mean", "max")


class KneserNeyLm:
    """Interpolated Kneser-Ney n-gram model over a closed unit vocabulary.

    Tokens are unit ids 0..k-1; the end symbol (id k) is predicted like any
    unit, so every conditional distribution covers k+1 outcomes and sums to
    one. The top order uses raw counts; lower orders use continuation counts
    (number of distinct left extensions); the base case is uniform over the
    k+1 outcomes. An unseen context delegates entirely to the next lower
    order.
    """

    def __init__(self, order: int, k: int, discount: float = 0.75):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if k < 1:
            raise ValueError(f"vocabulary size k must be >= 1, got {k}")
        if not 0.0 < discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {discount}")
        self.order = order
        self.k = k
        self.discount = discount
        self.eos = k
        # counts[m] maps a length-m context tuple to {token: count}; the top
        # order holds raw counts, lower orders continuation counts.
        self.counts: list[dict[tuple[int, ...], dict[int, int]]] = [
            {} for _ in range(order)
        ]

    def fit(self, sequences: Iterable[Sequence[int]]) -> "KneserNeyLm":
        top = self.counts[self.order - 1]
        n_sequences = 0
        for seq in sequences:
            n_sequences += 1
            toks = [int(t) for t in seq]
            for t in toks:
                if not 0 <= t < self.k:
                    raise ValueError(f"unit {t} outside vocabulary [0, {self.k})")
            padded = [BOS] * (self.order - 1) + toks + [self.eos]
            for i in range(self.order - 1, len(padded)):
                ctx = tuple(padded[i - self.order + 1 : i])
                top.setdefault(ctx, {}).setdefault(padded[i], 0)
                top[ctx][padded[i]] += 1
        if n_sequences == 0:
            raise ValueError("empty corpus")
        # continuation counts: at order m, count distinct left extensions seen
        # at order m+1
        for m in range(self.order - 1, 0, -1):
            lower = self.counts[m - 1]
            for ctx, followers in self.counts[m].items():
                sub = ctx[1:]
                for tok in followers:
                    lower.setdefault(sub, {}).setdefault(tok, 0)
                    lower[sub][tok] += 1
        return self

    def _prob(self, level: int, ctx: tuple[int, ...], token: int) -> float:
        if level == 0:
            return 1.0 / (self.k + 1)
        followers = self.counts[level - 1].get(ctx)
        if not followers:
            return self._prob(level - 1, ctx[1:], token)
        total = sum(followers.values())
        reserved = sum(min(c, self.discount) for c in followers.values())
        head = max(followers.get(token, 0) - self.discount, 0.0)
        return (head + reserved * self._prob(level - 1, ctx[1:], token)) / total

    def cond_prob(self, context: Sequence[int], token: int) -> float:
        """P(token | context); context is truncated to the last order-1 tokens."""
        if not (0 <= token <= self.eos):
            raise ValueError(f"token {token} outside prediction space [0, {self.eos}]")
        ctx = tuple(int(t) for t in context)[-(self.order - 1) :] if self.order > 1 else ()
        if self.order > 1 and len(ctx) < self.order - 1:
            ctx = (BOS,) * (self.order - 1 - len(ctx)) + ctx
        return self._prob(self.order, ctx, token)

    def cond_logprob(self, context: Sequence[int], token: int) -> float:
        return math.log(self.cond_prob(context, token))

    def conditional_distribution(self, context: Sequence[int]) -> np.ndarray:
        """P(. | context) over the k units and the end symbol (length k+1)."""
        return np.array([self.cond_prob(context, v) for v in range(self.k + 1)])

    def seen_contexts(self, level: int | None = None) -> list[tuple[int, ...]]:
        """Contexts with observed counts, at one level or all levels."""
        levels = range(1, self.order + 1) if level is None else [level]
        out = []
        for m in levels:
            out.extend(self.counts[m - 1].keys())
        return out

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "k": self.k,
            "discount": self.discount,
            "counts": [
                {" ".join(map(str, ctx)): {str(t): c for t, c in followers.items()}
                 for ctx, followers in level.items()}
                for level in self.counts
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KneserNeyLm":
        lm = cls(data["order"], data["k"], data["discount"])
        for m, level in enumerate(data["counts"]):
            for ctx_str, followers in level.items():
                ctx = tuple(int(t) for t in ctx_str.split()) if ctx_str else ()
                lm.counts[m][ctx] = {int(t): int(c) for t, c in followers.items()}
        return lm


def train_ngram(
    sequences: UnitSequences | Iterable[Sequence[int]],
    order: int = 3,
    discount: float = 0.75,
    k: int | None = None,
) -> KneserNeyLm:
    """Fit a Kneser-Ney model; k defaults to 1 + the largest unit seen."""
    if isinstance(sequences, UnitSequences):
        seqs = [seq for _, seq in sequences.items()]
    else:
        seqs = [np.asarray(s) for s in sequences]
    if not seqs:
        raise ValueError("empty corpus")
    if k is None:
        k = max((int(s.max()) for s in seqs if len(s)), default=-1) + 1
        if k < 1:
            raise ValueError("cannot infer vocabulary size from empty sequences")
    return KneserNeyLm(order, k, discount).fit(seqs)


def save_lm(lm: KneserNeyLm, dest: str | Path | TextIO) -> None:
    f, close = _open_text(dest, "w")
    try:
        json.dump(lm.to_dict(), f, sort_keys=True)
        f.write("\n")
    finally:
        if close:
            f.close()


def load_lm(source: str | Path | TextIO) -> KneserNeyLm:
    f, close = _open_text(source, "r")
    try:
        return KneserNeyLm.from_dict(json.load(f))
    finally:
        if close:
            f.close()


def sequence_logprob(lm, units: Sequence[int], include_eos: bool = True) -> float:
    """Chain-rule log-probability: sum of conditional log-probs of each token.

    Contexts start from order-1 start symbols; with include_eos (default)
    the end symbol's conditional is added, scoring the complete sequence.
    Without it the score is the log-probability of the prefix, which is
    weakly decreasing in sequence length.
    """
    toks = [int(t) for t in units]
    context = [BOS] * (lm.order - 1)
    total = 0.0
    for t in toks:
        total += lm.cond_logprob(context, t)
        context = (context + [t])[-(lm.order - 1) :] if lm.order > 1 else []
    if include_eos:
        eos = getattr(lm, "eos", None)
        if eos is None:
            raise ValueError("model does not define an end symbol; use include_eos=False")
        total += lm.cond_logprob(context, eos)
    return total


# ---------------------------------------------------------------------------
# Lexical / syntactic pair tasks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskPair:
    pair_id: str
    pos_utt_id: str
    neg_utt_id: str


@dataclass(frozen=True)
class SimiItem:
    pair_id: str
    utt_a: str
    utt_b: str
    human_score: float


def _read_csv_rows(source, header: tuple[str, ...], what: str):
    f, close = _open_text(source, "r")
    try:
        reader = csv.reader(f)
        try:
            got = next(reader)
        except StopIteration:
            raise CorpusError(f"{what} file is empty") from None
        if tuple(h.strip() for h in got) != header:
            raise CorpusError(f"{what} header must be {','.join(header)!r}, got {got!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CorpusError(
                    f"{what} line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, [field.strip() for field in row]
    finally:
        if close:
            f.close()


def read_pairs(source: str | Path | TextIO) -> list[TaskPair]:
    return [TaskPair(*row) for _, row in _read_csv_rows(source, PAIRS_HEADER, "pairs")]


def read_simi_items(source: str | Path | TextIO) -> list[SimiItem]:
    items = []
    for lineno, row in _read_csv_rows(source, SIMI_HEADER, "similarity"):
        try:
            score = float(row[3])
        except ValueError:
            raise CorpusError(f"similarity line {lineno}: bad score {row[3]!r}") from None
        items.append(SimiItem(row[0], row[1], row[2], score))
    return items


def pairwise_accuracy(
    lm,
    pairs: Sequence[TaskPair],
    units: UnitSequences,
    length_normalized: bool = False,
    include_eos: bool = True,
) -> float:
    """Fraction of pairs where the positive sequence outscores the negative.

    Ties count one half. With length_normalized, per-token mean log-probability
    is compared instead of the sum (for unequal-length stimuli).
    """
    if not pairs:
        raise ValueError("no pairs to score")
    total = 0.0
    for pair in pairs:
        for utt_id in (pair.pos_utt_id, pair.neg_utt_id):
            if utt_id not in units:
                raise CorpusError(f"pair {pair.pair_id!r}: unknown utterance {utt_id!r}")
        lp_pos = sequence_logprob(lm, units.units(pair.pos_utt_id), include_eos)
        lp_neg = sequence_logprob(lm, units.units(pair.neg_utt_id), include_eos)
        if length_normalized:
            lp_pos /= units.units(pair.pos_utt_id).shape[0] + int(include_eos)
            lp_neg /= units.units(pair.neg_utt_id).shape[0] + int(include_eos)
        total += 1.0 if lp_pos > lp_neg else (0.5 if lp_pos == lp_neg else 0.0)
    return total / len(pairs)


# ---------------------------------------------------------------------------
# Semantic similarity
# ---------------------------------------------------------------------------

def pool_vectors(vectors: np.ndarray, op: str = "min") -> np.ndarray:
    """Pool per-token vectors (T x d) into one d-vector with min, mean, or max."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError(f"need a non-empty T x d matrix, got shape {v.shape}")
    if op not in POOLING_OPS:
        raise ValueError(f"pooling op must be one of {POOLING_OPS}, got {op!r}")
    return getattr(v, op)(axis=0)


def unit_count_vectors(units: UnitSequences, k: int) -> dict[str, np.ndarray]:
    """Per-utterance unit histogram; the bundled desk-scale similarity representation."""
    return {
        utt_id: np.bincount(seq, minlength=k).astype(np.float64)
        for utt_id, seq in units.items()
    }


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    rho = spearmanr(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)).statistic
    return float(rho)


@dataclass(frozen=True)
class SimiReport:
    rho: float
    n_used: int
    skipped: tuple[str, ...]  # pair_ids dropped for zero-norm vectors

    def as_dict(self) -> dict:
        return {"rho": self.rho, "n_used": self.n_used, "skipped": list(self.skipped)}


def semantic_similarity(
    vectors: Mapping[str, np.ndarray] | Callable[[str], np.ndarray],
    items: Sequence[SimiItem],
) -> SimiReport:
    """Spearman rho between cosine similarities of utterance vectors and human scores.

    Items whose pooled vector has zero norm are skipped and reported; at
    least 3 usable items are required.
    """
    lookup = vectors if callable(vectors) else vectors.__getitem__
    model_scores, human_scores, skipped = [], [], []
    for item in items:
        va = np.asarray(lookup(item.utt_a), dtype=np.float64)
        vb = np.asarray(lookup(item.utt_b), dtype=np.float64)
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na == 0.0 or nb == 0.0:
            skipped.append(item.pair_id)
            continue
        model_scores.append(float(va @ vb / (na * nb)))
        human_scores.append(item.human_score)
    if len(model_scores) < 3:
        raise ValueError(
            f"need at least 3 usable items, got {len(model_scores)} "
            f"({len(skipped)} skipped for zero-norm vectors)"
        )
    return SimiReport(spearman(model_scores, human_scores), len(model_scores), tuple(skipped))
