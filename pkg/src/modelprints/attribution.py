"""Source attribution: which process produced this bag?

A small fully-connected softmax classifier is trained on bag codes with
labels {real, model_1, ..., model_M}. Evaluation reports accuracy, a
confusion matrix, and macro one-vs-rest AUC computed with the rank-statistic
formula (midranks handle ties), all under stratified k-fold cross validation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .optim import Adam

_HIDDEN = 64


@dataclass
class AttributionResult:
    predictions: np.ndarray  # (N,) predicted class index per bag
    scores: np.ndarray  # (N, C) softmax scores, rows sum to 1
    accuracy: float
    macro_auc: float
    confusion: np.ndarray  # (C, C) counts, rows true, cols predicted
    class_names: list = field(default_factory=list)


class AttributionClassifier:
    """3 fully-connected layers D -> 64 -> 64 -> C with rectifiers between."""

    def __init__(self, in_dim, num_classes, seed=0):
        if num_classes < 2:
            raise ValueError("attribution needs at least 2 classes")
        self.in_dim = int(in_dim)
        self.num_classes = int(num_classes)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
        shapes = [(in_dim, _HIDDEN), (_HIDDEN, _HIDDEN), (_HIDDEN, num_classes)]
        params = {}
        for i, (a, b) in enumerate(shapes, start=1):
            params[f"w{i}"] = rng.standard_normal((a, b)) * np.sqrt(2.0 / a)
            params[f"b{i}"] = np.zeros(b)
        self.params = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
        # input standardization fitted on the training embeddings
        self.mu = np.zeros(in_dim, dtype=np.float64)
        self.sd = np.ones(in_dim, dtype=np.float64)

    def fit_scaler(self, embeddings):
        self.mu = embeddings.mean(axis=0).astype(np.float64)
        self.sd = np.maximum(embeddings.std(axis=0).astype(np.float64), 1e-8)

    def logits(self, embeddings):
        x = ad.Tensor((np.asarray(embeddings, dtype=np.float64) - self.mu) / self.sd)
        h = ad.relu(ad.add(ad.matmul(x, self.params["w1"]), self.params["b1"]))
        h = ad.relu(ad.add(ad.matmul(h, self.params["w2"]), self.params["b2"]))
        return ad.add(ad.matmul(h, self.params["w3"]), self.params["b3"])

    def scores(self, embeddings):
        """Softmax class scores, (N, C) float64 rows summing to 1."""
        return ad.softmax_rows(self.logits(embeddings)).data.astype(np.float64)


def cross_entropy(probs, labels, num_classes):
    """Mean negative log-probability of the true class; a scalar Tensor."""
    n = probs.shape[0]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), np.asarray(labels, dtype=int)] = 1.0
    true_p = ad.matmul(ad.mul(probs, ad.Tensor(onehot)), ad.Tensor(np.ones((num_classes, 1))))
    return ad.scalar_mul(ad.sum_all(ad.log(true_p)), -1.0 / n)


def train_attribution_classifier(embeddings, labels, num_classes, steps=300,
                                 learning_rate=1e-2, seed=0) -> AttributionClassifier:
    """Full-batch cross-entropy training; steps=0 returns the initialized net."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if embeddings.ndim != 2 or embeddings.shape[0] != labels.size:
        raise ValueError(f"{embeddings.shape} embeddings vs {labels.size} labels")
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts == 0):
        empty = [i for i, c in enumerate(counts) if c == 0]
        raise ValueError(f"classes with zero samples: {empty}")
    clf = AttributionClassifier(embeddings.shape[1], num_classes, seed=seed)
    clf.fit_scaler(embeddings)
    if steps == 0:
        return clf
    opt = Adam(clf.params, learning_rate=learning_rate)
    for _ in range(steps):
        probs = ad.softmax_rows(clf.logits(embeddings))
        loss = cross_entropy(probs, labels, num_classes)
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    return clf


def binary_auc(scores, is_positive) -> float:
    """One-vs-rest ROC AUC by the Mann-Whitney statistic with midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(is_positive.sum())
    n_neg = int((~is_positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positives and negatives")
    ranks = rankdata(scores, method="average")
    u = ranks[is_positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(scores, labels, num_classes) -> float:
    """Mean one-vs-rest AUC over classes present with both signs.

    A class missing positives or negatives is excluded with a warning.
    """
    labels = np.asarray(labels, dtype=int)
    per_class = []
    for c in range(num_classes):
        pos = labels == c
        if pos.all() or not pos.any():
            warnings.warn(f"class {c} lacks positives or negatives; "
                          "excluded from macro AUC")
            continue
        per_class.append(binary_auc(np.asarray(scores)[:, c], pos))
    if not per_class:
        raise ValueError("no class had both positives and negatives")
    return float(np.mean(per_class))


def evaluate_attribution(clf: AttributionClassifier, embeddings, labels,
                         class_names=None) -> AttributionResult:
    """Score held-out bags; inputs must be disjoint from the training set."""
    labels = np.asarray(labels, dtype=int)
    scores = clf.scores(embeddings)
    preds = scores.argmax(axis=1)
    confusion = np.zeros((clf.num_classes, clf.num_classes), dtype=int)
    np.add.at(confusion, (labels, preds), 1)
    return AttributionResult(
        predictions=preds,
        scores=scores,
        accuracy=float((preds == labels).mean()),
        macro_auc=macro_auc(scores, labels, clf.num_classes),
        confusion=confusion,
        class_names=list(class_names) if class_names else [],
    )


def stratified_folds(labels, folds, seed=0):
    """Fold index per sample; each class spread round-robin after a shuffle."""
    labels = np.asarray(labels, dtype=int)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    assignment = np.empty(labels.size, dtype=int)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        assignment[idx] = np.arange(idx.size) % folds
    return assignment


def kfold_attribution(embeddings, labels, num_classes, folds=10, steps=300,
                      learning_rate=1e-2, seed=0, class_names=None) -> dict:
    """Stratified k-fold driver; reports mean and std across folds."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    assignment = stratified_folds(labels, folds, seed=seed)
    accs, aucs = [], []
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    for k in range(folds):
        test = assignment == k
        if not test.any():
            warnings.warn(f"fold {k} is empty; skipped")
            continue
        clf = train_attribution_classifier(embeddings[~test], labels[~test],
                                           num_classes, steps=steps,
                                           learning_rate=learning_rate, seed=seed)
        result = evaluate_attribution(clf, embeddings[test], labels[test],
                                      class_names=class_names)
        accs.append(result.accuracy)
        aucs.append(result.macro_auc)
        confusion += result.confusion
    return {
        "folds": len(accs),
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "auc_mean": float(np.mean(aucs)),
        "auc_std": float(np.std(aucs)),
        "fold_accuracies": [float(a) for a in accs],
        "fold_aucs": [float(a) for a in aucs],
        "confusion": confusion,
        "class_names": list(class_names) if class_names else [],
    }
