"""Stability sweeps: how bag size and bag count affect fingerprint quality.

For every (bag_size n, bags_per_model B) cell the sweep resamples held-out
bags `trials` times and summarizes the separation diagnostic, decorrelation
score, and attribution accuracy as mean and std. Larger n stabilizes the
per-bag codes; larger B stabilizes the fingerprint average, which typically
rises and then plateaus.
"""

from __future__ import annotations

import warnings

import numpy as np

from .attribution import evaluate_attribution, train_attribution_classifier
from .correlation import correlation_matrix, decorrelation_score, separation
from .encoder import embed_feature_bags, mean_code, phi_features


def _sample_bags(rng, pool_size, num_bags, bag_size):
    return [rng.choice(pool_size, size=bag_size, replace=False)
            for _ in range(num_bags)]


def ablation_cell(encoder, feats_by_model, bag_size, bags_per_model, trials,
                  eval_bags=32, seed=0, classifier_steps=150):
    """One grid cell: per-trial metrics over fresh resamplings of held-out bags."""
    model_ids = sorted(feats_by_model)
    rows = {"separation": [], "decorrelation": [], "accuracy": []}
    train_cut = int(round(0.75 * eval_bags))
    if not 0 < train_cut < eval_bags:
        raise ValueError(f"eval_bags {eval_bags} leaves no attribution split")
    for trial in range(trials):
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, 5, bag_size, bags_per_model, trial]))
        fingerprints = {}
        codes = {}
        emb_train, lab_train, emb_test, lab_test = [], [], [], []
        for label, m in enumerate(model_ids):
            feats = feats_by_model[m]
            pool = feats.shape[0]
            fp_bags = _sample_bags(rng, pool, bags_per_model, bag_size)
            ev_bags = _sample_bags(rng, pool, eval_bags, bag_size)
            fp_emb = embed_feature_bags(encoder, feats, fp_bags)
            ev_emb = embed_feature_bags(encoder, feats, ev_bags)
            fingerprints[m] = mean_code(fp_emb)
            codes[m] = ev_emb
            emb_train.append(ev_emb[:train_cut])
            lab_train.extend([label] * train_cut)
            emb_test.append(ev_emb[train_cut:])
            lab_test.extend([label] * (eval_bags - train_cut))
        rho = correlation_matrix(fingerprints, codes)
        rows["separation"].append(separation(rho))
        rows["decorrelation"].append(decorrelation_score(rho))
        clf = train_attribution_classifier(
            np.concatenate(emb_train), lab_train, len(model_ids),
            steps=classifier_steps, seed=seed)
        result = evaluate_attribution(clf, np.concatenate(emb_test), lab_test)
        rows["accuracy"].append(result.accuracy)
    return rows


def stability_ablation(encoder, heldout_images_by_model, bag_sizes, bags_grid,
                       trials, eval_bags=32, seed=0, classifier_steps=150,
                       verbose=False):
    """Sweep the (bag_size, bags_per_model) grid; returns one row dict per cell.

    Per-image features are computed once per model and shared by every cell,
    so resampling bags is cheap. Infeasible cells (bag size exceeding a
    model's held-out pool) are skipped with a warning.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    feats_by_model = {m: phi_features(encoder, imgs)
                      for m, imgs in sorted(heldout_images_by_model.items())}
    min_pool = min(f.shape[0] for f in feats_by_model.values())
    results = []
    for n in bag_sizes:
        for b in bags_grid:
            if n > min_pool:
                warnings.warn(f"infeasible cell skipped: bag size {n} exceeds "
                              f"held-out pool {min_pool}")
                continue
            cell = ablation_cell(encoder, feats_by_model, int(n), int(b), trials,
                                 eval_bags=eval_bags, seed=seed,
                                 classifier_steps=classifier_steps)
            row = {"bag_size": int(n), "bags_per_model": int(b), "trials": int(trials)}
            for key, vals in cell.items():
                row[f"{key}_mean"] = float(np.mean(vals))
                row[f"{key}_std"] = float(np.std(vals))
            results.append(row)
            if verbose:
                print(f"n={n} B={b}: separation "
                      f"{row['separation_mean']:.3f}±{row['separation_std']:.3f}",
                      flush=True)
    return results


ABLATION_COLUMNS = ["bag_size", "bags_per_model", "trials",
                    "separation_mean", "separation_std",
                    "decorrelation_mean", "decorrelation_std",
                    "accuracy_mean", "accuracy_std"]


def ablation_rows_to_csv(rows):
    """(header, rows) ready for CSV emission in a fixed column order."""
    return ABLATION_COLUMNS, [[row[c] for c in ABLATION_COLUMNS] for row in rows]
