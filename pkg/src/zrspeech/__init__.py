"""Speaker normalization and acoustic unit discovery toolkit.

Per-utterance standardization of self-supervised speech features, K-means
unit discovery, and a zero-resource evaluation battery: speaker
verification, probing classifiers, ABX phone discrimination, clustering
metrics, dimension pruning, and unit language-model tasks.
"""

__version__ = "0.1.0"

from .corpus import (
    Alignment,
    FeatureArchive,
    Manifest,
    ManifestRecord,
    Segment,
    SynthConfig,
    generate_synthetic,
    read_alignment,
    read_archive,
    read_manifest,
    write_alignment,
    write_archive,
    write_manifest,
)
from .normalize import NormStats, fit_stats, standardize, standardize_archive, utterance_mean
from .mfcc import MfccConfig, compute_mfcc, read_wav
from .aud import (
    Codebook,
    ClusterMetricsReport,
    UnitSequences,
    clustering_metrics,
    frame_pairs,
    kmeans_fit,
    one_hot,
    quantize,
    read_codebook,
    read_units,
    units_to_archive,
    write_codebook,
    write_units,
)
from .abx import AbxItem, AbxReport, abx_score, dtw_distance, extract_items
from .verify import VerifyReport, compute_eer, enroll, verify_archive
from .probe import (
    ForestConfig,
    ImportanceRanking,
    ProbeConfig,
    evaluate_probe,
    forest_importance,
    prune,
    run_probe,
    train_probe,
)
from .slm import (
    KneserNeyLm,
    SimiItem,
    TaskPair,
    pairwise_accuracy,
    semantic_similarity,
    sequence_logprob,
    train_ngram,
)

__all__ = [name for name in dir() if not name.startswith("_")]
