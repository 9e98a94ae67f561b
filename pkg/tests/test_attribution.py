import numpy as np
import pytest

from modelprints.attribution import (binary_auc, evaluate_attribution,
                                     kfold_attribution, macro_auc,
                                     stratified_folds,
                                     train_attribution_classifier)
from oracles import auc_bruteforce


def blobs(rng, n_per_class, centers, scale=0.3):
    xs, ys = [], []
    for c, mu in enumerate(centers):
        xs.append(mu + scale * rng.standard_normal((n_per_class, len(mu))))
        ys.append(np.full(n_per_class, c))
    return np.concatenate(xs), np.concatenate(ys)


def test_binary_auc_hand_cases():
    assert binary_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert binary_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert binary_auc([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0]) == 0.5
    # one inversion among 2x2 pairs: 3 concordant of 4
    assert binary_auc([0.9, 0.3, 0.4, 0.1], [1, 1, 0, 0]) == 0.75


def test_binary_auc_matches_bruteforce_with_ties():
    rng = np.random.default_rng(0)
    for trial in range(25):
        n = rng.integers(4, 30)
        scores = rng.integers(0, 5, size=n).astype(float)  # heavy ties
        labels = rng.integers(0, 2, size=n).astype(bool)
        if labels.all() or not labels.any():
            continue
        assert binary_auc(scores, labels) == pytest.approx(
            auc_bruteforce(scores, labels), abs=1e-12)


def test_binary_auc_needs_both_signs():
    with pytest.raises(ValueError):
        binary_auc([0.1, 0.9], [1, 1])


def test_macro_auc_excludes_absent_class():
    scores = np.array([[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    labels = [0, 1, 0]  # class 2 never appears
    with pytest.warns(UserWarning, match="class 2"):
        value = macro_auc(scores, labels, 3)
    a0 = auc_bruteforce(scores[:, 0], np.array(labels) == 0)
    a1 = auc_bruteforce(scores[:, 1], np.array(labels) == 1)
    assert value == pytest.approx((a0 + a1) / 2)


def test_untrained_classifier_is_chance_level():
    rng = np.random.default_rng(3)
    emb, labels = blobs(rng, 60, [(0, 0), (0, 0), (0, 0), (0, 0)], scale=1.0)
    clf = train_attribution_classifier(emb, labels, 4, steps=0, seed=0)
    result = evaluate_attribution(clf, emb, labels)
    assert abs(result.accuracy - 0.25) < 0.15
    assert abs(result.macro_auc - 0.5) < 0.1


def test_training_separates_separable_blobs():
    rng = np.random.default_rng(4)
    centers = [(3, 0, 0), (0, 3, 0), (0, 0, 3)]
    emb, labels = blobs(rng, 40, centers)
    test_emb, test_labels = blobs(rng, 15, centers)
    clf = train_attribution_classifier(emb, labels, 3, steps=200, seed=0)
    result = evaluate_attribution(clf, test_emb, test_labels)
    assert result.accuracy == 1.0
    assert result.macro_auc == 1.0
    assert result.confusion.sum() == test_labels.size
    assert np.array_equal(result.confusion, np.diag([15, 15, 15]))


def test_classifier_rejects_bad_inputs():
    emb = np.zeros((6, 2))
    with pytest.raises(ValueError, match="at least 2 classes"):
        train_attribution_classifier(emb, np.zeros(6, int), 1)
    with pytest.raises(ValueError, match="zero samples"):
        train_attribution_classifier(emb, np.zeros(6, int), 3)
    with pytest.raises(ValueError, match="embeddings vs"):
        train_attribution_classifier(emb, np.zeros(5, int), 2)


def test_scores_are_proper_softmax():
    rng = np.random.default_rng(5)
    emb, labels = blobs(rng, 20, [(1, 0), (0, 1)])
    clf = train_attribution_classifier(emb, labels, 2, steps=30, seed=1)
    s = clf.scores(emb)
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_stratified_folds_balanced():
    labels = np.repeat(np.arange(3), 20)
    assignment = stratified_folds(labels, 5, seed=2)
    for c in range(3):
        counts = np.bincount(assignment[labels == c], minlength=5)
        assert counts.min() == counts.max() == 4  # 20 per class over 5 folds
    with pytest.raises(ValueError):
        stratified_folds(labels, 1)


def test_kfold_attribution_on_separable_data():
    rng = np.random.default_rng(6)
    emb, labels = blobs(rng, 30, [(3, 0), (0, 3)])
    report = kfold_attribution(emb, labels, 2, folds=5, steps=150, seed=0)
    assert report["folds"] == 5
    assert report["accuracy_mean"] == 1.0
    assert report["auc_mean"] == 1.0
    assert len(report["fold_accuracies"]) == 5
    assert report["confusion"].sum() == labels.size


def test_kfold_deterministic():
    rng = np.random.default_rng(7)
    emb, labels = blobs(rng, 12, [(2, 0), (0, 2)], scale=1.0)
    a = kfold_attribution(emb, labels, 2, folds=3, steps=40, seed=9)
    b = kfold_attribution(emb, labels, 2, folds=3, steps=40, seed=9)
    assert a["fold_accuracies"] == b["fold_accuracies"]
    assert a["auc_mean"] == b["auc_mean"]
