"""
Probing classifiers: reading information content off a feature space
====================================================================

A probe is a small supervised classifier trained to predict a frame-level
label (speaker, phone, or gender) from the features. High probe accuracy
means the label is linearly (or shallowly) decodable; comparing accuracies
before and after a transform shows what the transform removed.

Here the transform is per-utterance standardization: each utterance's
frames lose their mean and per-dimension scale. Speaker identity in the
synthetic corpus lives in that mean, phone identity in the residual -- so
the speaker probe collapses while the phone probe is barely touched.
"""

import numpy as np

from zrspeech.cli import _frame_labels, _split_utterances
from zrspeech.corpus import SynthConfig, generate_synthetic
from zrspeech.normalize import fit_stats, standardize_archive
from zrspeech.probe import ProbeConfig, run_probe

config = SynthConfig(n_speakers=8, utterances_per_speaker=12, seed=2)
archive, manifest, alignment = generate_synthetic(config)
standardized = standardize_archive(archive)

# ---------------------------------------------------------------------------
# What standardization does to the frames themselves
# ---------------------------------------------------------------------------

utt_id = archive.utt_ids[0]
before = fit_stats(archive.frames(utt_id))
after = fit_stats(standardized.frames(utt_id))
print(f"utterance {utt_id!r}, first two dimensions:")
print(f"  mean before {before.mean[:2]}, after {after.mean[:2]}")
print(f"  std  before {before.std[:2]}, after {after.std[:2]}")

# ---------------------------------------------------------------------------
# Train the probes: same split, same seeds, raw vs standardized
# ---------------------------------------------------------------------------
# Three training runs per condition with derived seeds; the reported number
# is the mean held-out accuracy.

train_utts, test_utts = _split_utterances(manifest, archive, 3, 0)
probe_config = ProbeConfig(kind="linear", n_runs=3, seed=0)

print(f"\n{len(train_utts)} training / {len(test_utts)} held-out utterances")
print(f"{'task':<8} {'raw':>8} {'standardized':>14}")
for task in ("speaker", "gender", "phone"):
    trn_y = _frame_labels(task, train_utts, manifest, alignment)
    tst_y = _frame_labels(task, test_utts, manifest, alignment)
    row = []
    for variant in (archive, standardized):
        trn_x = np.concatenate([variant.frames(u) for u in train_utts])
        tst_x = np.concatenate([variant.frames(u) for u in test_utts])
        row.append(run_probe(trn_x, trn_y, tst_x, tst_y, probe_config).mean_accuracy)
    print(f"{task:<8} {row[0]:>8.3f} {row[1]:>14.3f}")

print("\nchance levels: speaker 0.125, gender 0.5, phone 0.1")
print("speaker (and gender, which is a shared offset too) collapse to chance;")
print("phone accuracy moves by a point or two at most.")
