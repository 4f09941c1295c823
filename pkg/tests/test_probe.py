"""Probing classifiers: gradients, training, forest importance, pruning."""

import numpy as np
import pytest

from zrspeech.corpus import FeatureArchive
from zrspeech.probe import (
    ForestConfig,
    ImportanceRanking,
    ProbeConfig,
    bootstrap_indices,
    evaluate_probe,
    forest_importance,
    init_params,
    loss_and_grad,
    probe_on_units,
    prune,
    run_probe,
    train_forest,
    train_probe,
)


def _finite_diff_grads(kind, params, x, y_idx, n_classes, h=1e-6):
    """Central finite differences of the batch loss w.r.t. every parameter."""
    grads = {}
    for key, value in params.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grad(kind, params, x, y_idx, n_classes)
            flat[i] = orig - h
            down, _ = loss_and_grad(kind, params, x, y_idx, n_classes)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[key] = g
    return grads


class TestGradients:
    def _check(self, kind, hidden_units=7):
        rng = np.random.default_rng(0)
        n, dim, n_classes = 12, 4, 3
        x = rng.standard_normal((n, dim))
        y_idx = rng.integers(0, n_classes, n)
        params = init_params(kind, dim, n_classes, hidden_units, rng)
        if kind == "linear":  # zero-init makes the check degenerate; perturb
            params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
        _, analytic = loss_and_grad(kind, params, x, y_idx, n_classes)
        numeric = _finite_diff_grads(kind, params, x, y_idx, n_classes)
        for key in params:
            a, b = analytic[key], numeric[key]
            rel = np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), np.ones_like(a)])
            assert rel.max() <= 1e-4, f"{kind} grad {key}: max rel err {rel.max():.2e}"

    def test_linear_matches_finite_differences(self):
        self._check("linear")

    def test_mlp_matches_finite_differences(self):
        self._check("mlp")

    def test_loss_is_mean_cross_entropy(self):
        # all-zero linear params: uniform predictive distribution
        x = np.ones((5, 2))
        params = {"W": np.zeros((2, 3)), "b": np.zeros(3)}
        loss, _ = loss_and_grad("linear", params, x, np.zeros(5, dtype=int), 3)
        assert abs(loss - np.log(3)) < 1e-12

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            loss_and_grad("rbf", {}, np.zeros((1, 2)), np.zeros(1, dtype=int), 2)


def _separable(n_per_class=120, n_classes=4, dim=6, seed=0, spread=0.2):
    rng = np.random.default_rng(seed)
    centers = 3.0 * rng.standard_normal((n_classes, dim))
    frames = np.concatenate(
        [centers[c] + spread * rng.standard_normal((n_per_class, dim)) for c in range(n_classes)]
    )
    labels = np.repeat([f"c{c}" for c in range(n_classes)], n_per_class)
    return frames, labels


class TestTrainProbe:
    def test_linear_learns_separable_data(self):
        frames, labels = _separable()
        config = ProbeConfig(kind="linear", epochs=20, seed=0, n_runs=1)
        model = train_probe(frames, labels, config)
        assert evaluate_probe(model, frames, labels) >= 0.99

    def test_mlp_learns_separable_data(self):
        frames, labels = _separable()
        config = ProbeConfig(
            kind="mlp", hidden_units=32, epochs=20, learning_rate=0.1, seed=0, n_runs=1
        )
        model = train_probe(frames, labels, config)
        assert evaluate_probe(model, frames, labels) >= 0.99

    def test_deterministic_given_seed(self):
        frames, labels = _separable()
        config = ProbeConfig(kind="mlp", hidden_units=16, epochs=3, seed=7)
        a = train_probe(frames, labels, config)
        b = train_probe(frames, labels, config)
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])

    def test_seed_changes_mlp_params(self):
        frames, labels = _separable()
        a = train_probe(frames, labels, ProbeConfig(kind="mlp", hidden_units=16, epochs=1, seed=0))
        b = train_probe(frames, labels, ProbeConfig(kind="mlp", hidden_units=16, epochs=1, seed=1))
        assert not np.array_equal(a.params["W1"], b.params["W1"])

    def test_input_standardization_stored_and_applied(self):
        frames, labels = _separable()
        model = train_probe(frames, labels, ProbeConfig(epochs=2))
        assert np.allclose(model.input_mean, frames.mean(axis=0))
        assert np.allclose(model.input_std, frames.std(axis=0))
        # an affine shift of inputs with matching stats leaves logits unchanged
        shifted = frames * 2.0 + 5.0
        shifted_model = train_probe(shifted, labels, ProbeConfig(epochs=2))
        np.testing.assert_allclose(
            model.logits(frames), shifted_model.logits(shifted), atol=1e-9
        )

    def test_constant_dim_does_not_blow_up(self):
        frames, labels = _separable(dim=3)
        frames[:, 1] = 4.2
        model = train_probe(frames, labels, ProbeConfig(epochs=2))
        assert np.isfinite(model.logits(frames)).all()

    def test_needs_two_classes(self):
        with pytest.raises(ValueError, match="2 classes"):
            train_probe(np.zeros((4, 2)), ["a"] * 4, ProbeConfig())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            train_probe(np.zeros((4, 2)), ["a", "b"], ProbeConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ProbeConfig(kind="svm")
        with pytest.raises(ValueError):
            ProbeConfig(epochs=0)
        with pytest.raises(ValueError):
            ProbeConfig(learning_rate=0.0)


class TestRunProbe:
    def test_reports_each_run_and_mean(self):
        frames, labels = _separable(n_per_class=60)
        test_frames, test_labels = _separable(n_per_class=30, seed=0)
        config = ProbeConfig(epochs=5, n_runs=4, seed=0)
        result = run_probe(frames, labels, test_frames, test_labels, config)
        assert len(result.accuracies) == 4
        assert result.mean_accuracy == pytest.approx(np.mean(result.accuracies))
        again = run_probe(frames, labels, test_frames, test_labels, config)
        assert result.accuracies == again.accuracies

    def test_probe_on_units_perfectly_predictive(self):
        rng = np.random.default_rng(0)
        units = rng.integers(0, 5, 400)
        labels = np.array([f"u{u}" for u in units])
        result = probe_on_units(
            units[:300], labels[:300], units[300:], labels[300:], 5,
            ProbeConfig(epochs=10, n_runs=2),
        )
        assert result.mean_accuracy == 1.0


class TestForest:
    def _labeled_frames(self, n=600, dim=5, seed=0):
        rng = np.random.default_rng(seed)
        frames = rng.standard_normal((n, dim))
        labels = np.where(frames[:, 2] > 0, "s1", "s0")  # dim 2 alone decides
        return frames, labels

    def test_importance_sums_to_one(self):
        frames, labels = self._labeled_frames()
        ranking = forest_importance(frames, labels, ForestConfig(n_trees=10, seed=0))
        assert ranking.importance.shape == (5,)
        assert (ranking.importance >= 0).all()
        assert abs(ranking.importance.sum() - 1.0) < 1e-9

    def test_informative_dim_ranked_first(self):
        frames, labels = self._labeled_frames()
        ranking = forest_importance(frames, labels, ForestConfig(n_trees=10, seed=0))
        assert ranking.order[0] == 2
        assert ranking.importance[2] > 0.5

    def test_deterministic(self):
        frames, labels = self._labeled_frames()
        config = ForestConfig(n_trees=5, seed=3)
        a = forest_importance(frames, labels, config)
        b = forest_importance(frames, labels, config)
        assert np.array_equal(a.importance, b.importance)
        assert np.array_equal(a.order, b.order)

    def test_bootstrap_indices_reproducible(self):
        config = ForestConfig(seed=1)
        a = bootstrap_indices(config, 50, 3)
        assert a.shape == (50,)
        assert a.min() >= 0 and a.max() < 50
        assert np.array_equal(a, bootstrap_indices(config, 50, 3))
        assert not np.array_equal(a, bootstrap_indices(config, 50, 4))

    def test_predict_majority_vote(self):
        frames, labels = self._labeled_frames()
        model = train_forest(frames, labels, ForestConfig(n_trees=9, seed=0))
        pred = model.predict(frames)
        assert (pred == labels).mean() >= 0.95

    def test_constant_features_uniform_importance(self):
        frames = np.ones((40, 3))
        labels = ["a", "b"] * 20
        ranking = forest_importance(frames, labels, ForestConfig(n_trees=3, min_samples_leaf=1))
        np.testing.assert_allclose(ranking.importance, np.full(3, 1 / 3))

    def test_needs_two_labels(self):
        with pytest.raises(ValueError):
            train_forest(np.zeros((4, 2)), ["a"] * 4, ForestConfig(n_trees=1))

    def test_features_per_split_bound(self):
        with pytest.raises(ValueError, match="exceeds dim"):
            train_forest(
                np.zeros((4, 2)), ["a", "b", "a", "b"],
                ForestConfig(n_trees=1, features_per_split=3),
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ForestConfig(n_trees=0)
        with pytest.raises(ValueError):
            ForestConfig(features_per_split=0)


class TestPrune:
    def _archive(self, dim=4):
        rng = np.random.default_rng(0)
        utts = [("u1", rng.standard_normal((6, dim))), ("u2", rng.standard_normal((3, dim)))]
        return FeatureArchive(dim, 10_000, utts, standardized=False), utts

    def test_keeps_least_important_dims_in_order(self):
        archive, utts = self._archive()
        ranking = ImportanceRanking(
            importance=np.array([0.3, 0.1, 0.4, 0.2]),
            order=np.array([2, 0, 3, 1]),
        )
        pruned = prune(archive, ranking, n_keep=2)
        assert pruned.dim == 2
        for utt_id, frames in utts:
            np.testing.assert_allclose(
                pruned.frames(utt_id), frames[:, [1, 3]].astype(np.float32)
            )

    def test_keep_all_is_identity(self):
        archive, utts = self._archive()
        ranking = ImportanceRanking(
            importance=np.full(4, 0.25), order=np.array([0, 1, 2, 3])
        )
        pruned = prune(archive, ranking, n_keep=4)
        for utt_id, frames in utts:
            np.testing.assert_allclose(pruned.frames(utt_id), frames.astype(np.float32))

    def test_preserves_metadata(self):
        archive, _ = self._archive()
        ranking = ImportanceRanking(np.full(4, 0.25), np.array([0, 1, 2, 3]))
        pruned = prune(archive, ranking, n_keep=1)
        assert pruned.frame_period_us == archive.frame_period_us
        assert pruned.standardized is False
        assert pruned.utt_ids == archive.utt_ids

    def test_n_keep_bounds(self):
        archive, _ = self._archive()
        ranking = ImportanceRanking(np.full(4, 0.25), np.array([0, 1, 2, 3]))
        with pytest.raises(ValueError):
            prune(archive, ranking, 0)
        with pytest.raises(ValueError):
            prune(archive, ranking, 5)

    def test_ranking_dim_mismatch(self):
        archive, _ = self._archive()
        ranking = ImportanceRanking(np.full(3, 1 / 3), np.array([0, 1, 2]))
        with pytest.raises(ValueError, match="ranking covers 3"):
            prune(archive, ranking, 2)
