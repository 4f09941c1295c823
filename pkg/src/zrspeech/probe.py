"""Frame-level probing classifiers and speaker-importance dimension pruning.

Probes measure what a feature space encodes: a multinomial logistic
regression (linear) or a one-hidden-ReLU-layer MLP is trained by seeded
mini-batch gradient descent to predict phone, speaker, or gender labels per
frame, and scored by held-out top-1 accuracy. A random forest trained to
predict speakers yields per-dimension Gini importances, used to prune the
most speaker-predictive dimensions from an archive.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .corpus import FeatureArchive

INPUT_STD_EPS = 1e-8


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = "linear"  # "linear" or "mlp"
    hidden_units: int = 1024
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 0.01
    seed: int = 0
    n_runs: int = 10

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"kind must be 'linear' or 'mlp', got {self.kind!r}")
        for name in ("hidden_units", "epochs", "batch_size", "n_runs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


class ProbeModel:
    """Trained probe: parameter dict, class labels, input standardization."""

    def __init__(self, kind: str, params: dict[str, np.ndarray], classes: np.ndarray,
                 input_mean: np.ndarray, input_std: np.ndarray):
        self.kind = kind
        self.params = params
        self.classes = classes
        self.input_mean = input_mean
        self.input_std = input_std

    def logits(self, frames: np.ndarray) -> np.ndarray:
        x = (np.asarray(frames, dtype=np.float64) - self.input_mean) / self.input_std
        if self.kind == "linear":
            return x @ self.params["W"] + self.params["b"]
        h = np.maximum(x @ self.params["W1"] + self.params["b1"], 0.0)
        return h @ self.params["W2"] + self.params["b2"]

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.logits(frames), axis=1)]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(
    kind: str, params: dict[str, np.ndarray], x: np.ndarray, y_idx: np.ndarray, n_classes: int
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its analytic gradients for one batch.

    x is already standardized; y_idx holds class indices. Exposed so the
    gradients can be checked against finite differences.
    """
    n = x.shape[0]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_idx] = 1.0
    if kind == "linear":
        z = x @ params["W"] + params["b"]
        logp = _log_softmax(z)
        loss = float(-(onehot * logp).sum() / n)
        dz = (np.exp(logp) - onehot) / n
        return loss, {"W": x.T @ dz, "b": dz.sum(axis=0)}
    if kind == "mlp":
        a1 = x @ params["W1"] + params["b1"]
        h = np.maximum(a1, 0.0)
        z = h @ params["W2"] + params["b2"]
        logp = _log_softmax(z)
        loss = float(-(onehot * logp).sum() / n)
        dz = (np.exp(logp) - onehot) / n
        dh = dz @ params["W2"].T
        da1 = dh * (a1 > 0.0)
        return loss, {
            "W1": x.T @ da1,
            "b1": da1.sum(axis=0),
            "W2": h.T @ dz,
            "b2": dz.sum(axis=0),
        }
    raise ValueError(f"unknown probe kind {kind!r}")


def init_params(kind: str, dim: int, n_classes: int, hidden_units: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    if kind == "linear":
        return {"W": np.zeros((dim, n_classes)), "b": np.zeros(n_classes)}
    return {
        "W1": rng.standard_normal((dim, hidden_units)) * np.sqrt(2.0 / dim),
        "b1": np.zeros(hidden_units),
        "W2": rng.standard_normal((hidden_units, n_classes)) / np.sqrt(hidden_units),
        "b2": np.zeros(n_classes),
    }


def train_probe(frames: np.ndarray, labels: Sequence, config: ProbeConfig) -> ProbeModel:
    """Train one probe by mini-batch gradient descent; deterministic given the seed.

    Inputs are standardized with global training-set statistics before
    training (stored in the model and reapplied at prediction time).
    """
    x = np.asarray(frames, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("frames must be T x d with one label per frame")
    classes, y_idx = np.unique(y, return_inverse=True)
    if classes.shape[0] < 2:
        raise ValueError(f"need at least 2 classes, got {classes.shape[0]}")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), INPUT_STD_EPS)
    x = (x - mean) / std

    rng = np.random.default_rng(config.seed)
    params = init_params(config.kind, x.shape[1], classes.shape[0], config.hidden_units, rng)
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = loss_and_grad(config.kind, params, x[batch], y_idx[batch], classes.shape[0])
            for key, g in grads.items():
                params[key] -= config.learning_rate * g
    return ProbeModel(config.kind, params, classes, mean, std)


def evaluate_probe(model: ProbeModel, frames: np.ndarray, labels: Sequence) -> float:
    """Top-1 accuracy of the probe on the given frames."""
    y = np.asarray(labels)
    pred = model.predict(frames)
    return float((pred == y).mean())


@dataclass(frozen=True)
class ProbeResult:
    mean_accuracy: float
    accuracies: tuple[float, ...]

    def as_dict(self) -> dict:
        return {"mean_accuracy": self.mean_accuracy, "accuracies": list(self.accuracies)}


def _run_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence((seed, run)).generate_state(1)[0])


def run_probe(
    train_frames: np.ndarray,
    train_labels: Sequence,
    test_frames: np.ndarray,
    test_labels: Sequence,
    config: ProbeConfig,
) -> ProbeResult:
    """Train/evaluate config.n_runs probes with derived seeds; report each and the mean."""
    accuracies = []
    for run in range(config.n_runs):
        run_config = replace(config, seed=_run_seed(config.seed, run), n_runs=1)
        model = train_probe(train_frames, train_labels, run_config)
        accuracies.append(evaluate_probe(model, test_frames, test_labels))
    return ProbeResult(float(np.mean(accuracies)), tuple(accuracies))


def probe_on_units(
    train_units: np.ndarray,
    train_labels: Sequence,
    test_units: np.ndarray,
    test_labels: Sequence,
    k: int,
    config: ProbeConfig,
) -> ProbeResult:
    """Probe one-hot encoded unit ids (width k) instead of continuous features."""
    from .aud import one_hot

    return run_probe(
        one_hot(np.asarray(train_units), k),
        train_labels,
        one_hot(np.asarray(test_units), k),
        test_labels,
        config,
    )


# ---------------------------------------------------------------------------
# Random-forest speaker importance and pruning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    features_per_split: int | None = None  # None: round(sqrt(d))
    min_samples_leaf: int = 5
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "min_samples_leaf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


@dataclass(frozen=True)
class ImportanceRanking:
    importance: np.ndarray  # non-negative, sums to 1
    order: np.ndarray  # dims sorted by descending importance, ties by index

    def as_dict(self) -> dict:
        return {"importance": self.importance.tolist(), "order": self.order.tolist()}


def bootstrap_indices(config: ForestConfig, n: int, tree_index: int) -> np.ndarray:
    """The sampled-with-replacement training rows of one tree; reproducible."""
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, tree_index)))
    return rng.integers(0, n, size=n)


class ForestModel:
    """Bagged CART trees with reproducible bootstraps and Gini importances."""

    def __init__(self, trees: list[DecisionTreeClassifier], config: ForestConfig, dim: int):
        self.trees = trees
        self.config = config
        self.dim = dim

    def predict(self, frames: np.ndarray) -> np.ndarray:
        """Majority vote over trees; ties go to the smallest label."""
        votes = np.stack([tree.predict(frames) for tree in self.trees])
        out = []
        for col in votes.T:
            labels, counts = np.unique(col, return_counts=True)
            out.append(labels[np.argmax(counts)])  # unique sorts, argmax takes first max
        return np.asarray(out)

    def importance(self) -> ImportanceRanking:
        """Total sample-weighted Gini decrease per dimension over all trees.

        Summed across trees, then normalized once to sum 1; a forest that
        never split (all-constant features) falls back to uniform importance.
        """
        totals = np.zeros(self.dim)
        for tree in self.trees:
            t = tree.tree_
            n_root = t.weighted_n_node_samples[0]
            for node in range(t.node_count):
                left, right = t.children_left[node], t.children_right[node]
                if left == -1:
                    continue
                decrease = (
                    t.weighted_n_node_samples[node] * t.impurity[node]
                    - t.weighted_n_node_samples[left] * t.impurity[left]
                    - t.weighted_n_node_samples[right] * t.impurity[right]
                ) / n_root
                totals[t.feature[node]] += decrease
        total = totals.sum()
        importance = np.full(self.dim, 1.0 / self.dim) if total <= 0 else totals / total
        order = np.argsort(-importance, kind="stable")
        return ImportanceRanking(importance, order)


def train_forest(frames: np.ndarray, labels: Sequence, config: ForestConfig) -> ForestModel:
    x = np.asarray(frames, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("frames must be T x d with one label per frame")
    if np.unique(y).shape[0] < 2:
        raise ValueError("need at least 2 distinct labels")
    d = x.shape[1]
    max_features = config.features_per_split or max(1, round(np.sqrt(d)))
    if max_features > d:
        raise ValueError(f"features_per_split ({max_features}) exceeds dim ({d})")
    trees = []
    n = x.shape[0]
    for t in range(config.n_trees):
        idx = bootstrap_indices(config, n, t) if config.bootstrap else np.arange(n)
        split_seed = int(np.random.SeedSequence((config.seed, t, 1)).generate_state(1)[0] % (2**31))
        tree = DecisionTreeClassifier(
            criterion="gini",
            max_depth=config.max_depth,
            max_features=max_features,
            min_samples_leaf=config.min_samples_leaf,
            random_state=split_seed,
        )
        tree.fit(x[idx], y[idx])
        trees.append(tree)
    return ForestModel(trees, config, d)


def forest_importance(frames: np.ndarray, labels: Sequence, config: ForestConfig) -> ImportanceRanking:
    return train_forest(frames, labels, config).importance()


def prune(archive: FeatureArchive, ranking: ImportanceRanking, n_keep: int) -> FeatureArchive:
    """Keep the n_keep least important dimensions, in their original order."""
    d = archive.dim
    if ranking.order.shape[0] != d:
        raise ValueError(f"ranking covers {ranking.order.shape[0]} dims, archive has {d}")
    if not 1 <= n_keep <= d:
        raise ValueError(f"n_keep must be in [1, {d}], got {n_keep}")
    keep = np.sort(ranking.order[d - n_keep :])
    return FeatureArchive(
        n_keep,
        archive.frame_period_us,
        ((utt_id, frames[:, keep]) for utt_id, frames in archive.items()),
        standardized=archive.standardized,
    )
