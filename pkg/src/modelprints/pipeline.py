"""End-to-end runs: dataset on disk -> trained encoder -> reports.

Every function here is deterministic given a RunConfig; report dictionaries
contain only plain types so they serialize stably. Seed namespaces keep the
random streams of different stages independent: templates and images live in
the zoo, encoder init/training in the encoder module, and this module uses
its own streams for held-out bag sampling.
"""

from __future__ import annotations

import os

import numpy as np

from . import dataio
from .ablation import ablation_rows_to_csv, stability_ablation
from .attribution import kfold_attribution
from .clustering import (adjusted_rand_index, cut_at_k, dendrogram_coordinates,
                         hierarchical_cluster)
from .correlation import (correlation_matrix, decorrelation_score,
                          fingerprint_distance_matrix, separation)
from .encoder import (SetEncoder, embed_feature_bags, mean_code, phi_features,
                      train_encoder, train_split)
from .residuals import prnu_fingerprint, residual
from .zoo import build_zoo, generate_dataset

_NS_FPRINT = 8
_NS_ATTR = 9


def zoo_from_config(config):
    return build_zoo(
        num_families=config.num_families,
        models_per_family=config.models_per_family,
        height=config.height, width=config.width,
        family_strength=config.family_strength,
        model_strength=config.model_strength,
        noise_sigma=config.noise_sigma,
        images_per_model=config.images_per_model,
        seed=config.seed,
        include_real=config.include_real,
    )


def load_dataset(data_dir):
    """(manifest, images_by_model) from a generated dataset directory."""
    manifest = dataio.read_manifest(os.path.join(data_dir, "manifest.json"))
    images = {}
    for spec in manifest.all_specs():
        path = os.path.join(data_dir, f"{spec.model_id}.ffds")
        if not os.path.exists(path):
            raise FileNotFoundError(f"dataset is missing archive {path}")
        arr = dataio.read_archive(path)
        if arr.shape[0] != manifest.images_per_model:
            raise ValueError(f"{path}: {arr.shape[0]} images, manifest says "
                             f"{manifest.images_per_model}")
        images[spec.model_id] = arr
    return manifest, images


def heldout_by_model(images_by_model, holdout_fraction):
    """The per-model image tail that training never touches."""
    out = {}
    for m, imgs in images_by_model.items():
        _, held = train_split(imgs.shape[0], holdout_fraction)
        out[m] = imgs[held]
    return out


def train_from_dataset(config, images_by_model, resume_state=None):
    """Train (or fine-tune, when resuming) the encoder on the dataset."""
    encoder = None
    if resume_state is not None:
        arrays, meta = resume_state
        encoder = SetEncoder.from_state(arrays, meta)
    return train_encoder(images_by_model, config, encoder=encoder)


def _index_bags(rng, pool_size, count, bag_size):
    if bag_size > pool_size:
        raise ValueError(f"bag size {bag_size} exceeds held-out pool {pool_size}")
    return [rng.choice(pool_size, size=bag_size, replace=False) for _ in range(count)]


def encoder_bag_embeddings(encoder, heldout, model_ids, count, bag_size, seed, ns):
    """Per model: (count, D) embeddings of freshly sampled held-out bags."""
    out = {}
    for i, m in enumerate(model_ids):
        feats = phi_features(encoder, heldout[m])
        rng = np.random.default_rng(np.random.SeedSequence([seed, ns, i]))
        bags = _index_bags(rng, feats.shape[0], count, bag_size)
        out[m] = embed_feature_bags(encoder, feats, bags)
    return out


def prnu_bag_rasters(heldout, model_ids, count, bag_size, seed, ns):
    """Per model: (count, H*W) flattened mean-residual rasters of sampled bags."""
    out = {}
    for i, m in enumerate(model_ids):
        imgs = heldout[m][:, 0]  # single channel
        res = residual(imgs)
        rng = np.random.default_rng(np.random.SeedSequence([seed, ns, i]))
        bags = _index_bags(rng, imgs.shape[0], count, bag_size)
        out[m] = np.stack([res[idx].mean(axis=0).ravel() for idx in bags])
    return out


def fingerprint_report(config, manifest, heldout, encoder=None, baseline="encoder"):
    """Fingerprints plus the correlation analysis, as a JSON-ready dict.

    Only the synthetic models enter the matrix; the real class carries no
    planted fingerprint and belongs to attribution instead.
    """
    model_ids = manifest.model_ids
    if baseline == "encoder":
        if encoder is None:
            raise ValueError("encoder fingerprints need a checkpoint")
        emb = encoder_bag_embeddings(encoder, heldout, model_ids,
                                     config.fingerprint_bags + config.bags_per_model,
                                     config.bag_size, config.seed, _NS_FPRINT)
        fingerprints = {m: mean_code(emb[m][:config.fingerprint_bags]) for m in model_ids}
        codes = {m: emb[m][config.fingerprint_bags:] for m in model_ids}
        extra = {"embedding_dim": encoder.dim}
    elif baseline == "prnu":
        fingerprints = {m: prnu_fingerprint(heldout[m][:, 0]).ravel() for m in model_ids}
        codes = {m: residual(heldout[m][:, 0]).reshape(heldout[m].shape[0], -1)
                 for m in model_ids}
        extra = {"raster_shape": [manifest.height, manifest.width]}
    else:
        raise ValueError(f"unknown baseline {baseline!r} (use encoder or prnu)")
    rho = correlation_matrix(fingerprints, codes)
    return {
        "kind": baseline,
        "model_ids": model_ids,
        "bag_size": config.bag_size if baseline == "encoder" else 1,
        "bags_per_model": config.fingerprint_bags,
        "codes_per_model": rho.codes_per_model,
        "fingerprints": {m: [float(v) for v in np.asarray(f).ravel()]
                         for m, f in fingerprints.items()},
        "correlation_matrix": rho.matrix.tolist(),
        "decorrelation_score": decorrelation_score(rho),
        "separation": separation(rho),
        **extra,
    }


def attribution_report(config, manifest, heldout, encoder=None, baseline="encoder",
                       bag_size=None, bags_per_class=None):
    """Stratified k-fold attribution over all sources (real class included)."""
    bag_size = config.bag_size if bag_size is None else int(bag_size)
    bags_per_class = (config.bags_per_model if bags_per_class is None
                      else int(bags_per_class))
    class_names = [s.model_id for s in manifest.all_specs()]
    if baseline == "encoder":
        if encoder is None:
            raise ValueError("encoder attribution needs a checkpoint")
        per_model = encoder_bag_embeddings(encoder, heldout, class_names,
                                           bags_per_class, bag_size,
                                           config.seed, _NS_ATTR)
    elif baseline == "prnu":
        per_model = prnu_bag_rasters(heldout, class_names, bags_per_class,
                                     bag_size, config.seed, _NS_ATTR)
    else:
        raise ValueError(f"unknown baseline {baseline!r} (use encoder or prnu)")
    embeddings = np.concatenate([per_model[m] for m in class_names])
    labels = np.concatenate([[i] * bags_per_class for i in range(len(class_names))])
    stats = kfold_attribution(embeddings, labels, len(class_names),
                              folds=config.folds, seed=config.seed,
                              class_names=class_names)
    stats["confusion"] = stats["confusion"].tolist()
    return {"kind": baseline, "bag_size": bag_size,
            "bags_per_class": bags_per_class, **stats}


def cluster_report(config, manifest, heldout, encoder):
    """Dendrogram over encoder fingerprints plus the family-cut comparison."""
    model_ids = manifest.model_ids
    emb = encoder_bag_embeddings(encoder, heldout, model_ids,
                                 config.fingerprint_bags, config.bag_size,
                                 config.seed, _NS_FPRINT)
    fingerprints = {m: mean_code(emb[m]) for m in model_ids}
    dist = fingerprint_distance_matrix(fingerprints)
    tree = hierarchical_cluster(dist, leaf_ids=model_ids)
    k = manifest.build_args.get("num_families", config.num_families)
    labels = cut_at_k(tree, k)
    family_of = {s.model_id: s.family_id for s in manifest.specs}
    planted = [family_of[m] for m in model_ids]
    ari = adjusted_rand_index(labels, np.unique(planted, return_inverse=True)[1])
    return {
        "model_ids": model_ids,
        "distance_matrix": dist.tolist(),
        "merges": [{"a": a, "b": b, "height": h, "size": s}
                   for a, b, h, s in tree.merges],
        "coordinates": dendrogram_coordinates(tree),
        "cut_clusters": int(k),
        "cut_labels": labels.tolist(),
        "planted_families": planted,
        "adjusted_rand_index": float(ari),
    }


def ablation_report(config, heldout, encoder, bag_sizes, bags_grid, trials):
    rows = stability_ablation(encoder, heldout, bag_sizes, bags_grid, trials,
                              seed=config.seed)
    header, data = ablation_rows_to_csv(rows)
    return rows, header, data


def generate_cmd(config, out_dir, force=False):
    manifest = zoo_from_config(config)
    path = generate_dataset(manifest, out_dir, force=force)
    return manifest, path


def write_checkpoint_with_config(path, encoder, config, history):
    meta = {**encoder.meta(), "config": dataio.config_to_dict(config)}
    dataio.write_checkpoint(path, encoder.state_arrays(), meta)
    loss_csv = os.path.splitext(path)[0] + "_loss.csv"
    dataio.write_csv(loss_csv, ["epoch", "step", "loss"], history.losses)
    return loss_csv


def load_encoder(path):
    params, meta = dataio.read_checkpoint(path)
    return SetEncoder.from_state(params, meta)
