"""
Language modelling on discovered units
======================================

Once utterances are unit strings, they can be treated as text: an
interpolated Kneser-Ney n-gram model learns which unit sequences are
plausible. This demo trains such a model and exercises the three ways it is
used downstream:

* as a probability model (every conditional distribution sums to one, and a
  sequence score is the chain rule over its tokens),
* as a lexical judge (real utterances must outscore order-destroyed
  versions of themselves), and
* as a vector space (unit-count vectors support similarity judgements).
"""

import io

import numpy as np

from zrspeech.aud import UnitSequences, kmeans_fit, quantize, training_frames
from zrspeech.corpus import SynthConfig, generate_synthetic
from zrspeech.normalize import standardize_archive
from zrspeech.slm import (
    SimiItem,
    TaskPair,
    load_lm,
    pairwise_accuracy,
    save_lm,
    semantic_similarity,
    sequence_logprob,
    train_ngram,
    unit_count_vectors,
)

config = SynthConfig(n_speakers=8, utterances_per_speaker=12, seed=4)
archive, manifest, alignment = generate_synthetic(config)
archive = standardize_archive(archive)
codebook = kmeans_fit(training_frames(archive), k=config.n_phones, seed=0,
                      standardized_input=True)
units = quantize(archive, codebook)
lm = train_ngram(units, order=3)
print(f"trigram model over {lm.k} units (+1 end-of-utterance symbol), "
      f"trained on {len(archive)} unit strings\n")

# %%
# A proper probability model
# --------------------------
# Whatever the context -- empty, frequently seen, or never seen (where the
# model backs off to lower orders) -- the next-token distribution covers the
# k units plus the end symbol and sums to one.
for context in ((), tuple(int(u) for u in units.units(archive.utt_ids[0])[:2]), (3, 7)):
    dist = lm.conditional_distribution(context)
    print(f"context {context!s:>8}: {dist.size} outcomes, sum = {dist.sum():.12f}")

# Sequence scores are exactly the chain rule: each token conditioned on its
# full prefix, plus the end symbol after the last token.
u = units.units(archive.utt_ids[0])
manual = sum(lm.cond_logprob(u[:i], int(t)) for i, t in enumerate(u))
manual += lm.cond_logprob(u, lm.k)
print(f"\nchain rule by hand {manual:.6f} vs sequence_logprob "
      f"{sequence_logprob(lm, u):.6f}")

# %%
# Real sequences versus scrambled ones
# ------------------------------------
# Shuffling a unit string keeps its unigram histogram but destroys local
# order, which is all an n-gram model can use. Scoring each real utterance
# against its shuffled twin should therefore be nearly perfect.
rng = np.random.default_rng(0)
scrambled = [(f"{utt_id}-shuf", rng.permutation(seq)) for utt_id, seq in units.items()]
scored = UnitSequences(list(units.items()) + scrambled)
pairs = [TaskPair(utt_id, utt_id, f"{utt_id}-shuf") for utt_id in archive.utt_ids]
acc = pairwise_accuracy(lm, pairs, scored)
print(f"\nreal vs shuffled units: {acc:.3f} pairwise accuracy "
      f"over {len(pairs)} pairs (chance 0.5)")

# %%
# Unit-count vectors as utterance embeddings
# ------------------------------------------
# For similarity judgements each utterance becomes its histogram of unit
# counts. As a stand-in for human ratings we use the cosine between the true
# phone-occupancy histograms; if the units track phones, the model's cosines
# should rank pairs the same way.
phones = sorted({seg.phone for uid in alignment.utt_ids for seg in alignment.segments(uid)})
index = {p: i for i, p in enumerate(phones)}


def phone_histogram(utt_id):
    counts = np.zeros(len(phones))
    for label in alignment.frame_labels(utt_id):
        counts[index[label]] += 1
    return counts


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


ids = list(archive.utt_ids)
items = []
for i in range(60):
    a, b = rng.choice(len(ids), size=2, replace=False)
    human = cosine(phone_histogram(ids[a]), phone_histogram(ids[b]))
    items.append(SimiItem(f"pair{i}", ids[a], ids[b], human))

report = semantic_similarity(unit_count_vectors(units, codebook.k), items)
print(f"unit-count vectors vs phone-occupancy ratings: "
      f"Spearman rho {report.rho:.3f} on {report.n_used} pairs")

# %%
# Models serialize to JSON and reload without losing a bit of probability.
buffer = io.StringIO()
save_lm(lm, buffer)
buffer.seek(0)
reloaded = load_lm(buffer)
print(f"\nsaved+reloaded score {sequence_logprob(reloaded, u):.6f} "
      f"(identical: {sequence_logprob(reloaded, u) == sequence_logprob(lm, u)})")
