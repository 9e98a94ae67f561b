"""Command line surface chaining the pipeline stages.

Subcommands: generate, train, fingerprint, attribute, cluster, ablate,
report. Every RunConfig key is exposed as a flag of the same name (dashes
for underscores) and can also come from a flat key=value --config file;
flags win. All outputs are deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import dataio, pipeline
from .dataio import RunConfig, load_config


def _add_config_flags(parser, skip=()):
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in skip:
            continue
        names = [flag]
        if f.name == "bags_per_model" and "bags_alias" not in skip:
            names.insert(0, "--bags")
        group.add_argument(*names, dest=f.name, default=None, metavar=str(f.type).upper(),
                           help=f"override config key {f.name} (default {f.default})")


def _config_from_args(args):
    overrides = {f.name: getattr(args, f.name, None)
                 for f in dataclasses.fields(RunConfig)}
    return load_config(getattr(args, "config", None), overrides)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _load_run_inputs(args, config, need_encoder=True):
    manifest, images = pipeline.load_dataset(args.data)
    heldout = pipeline.heldout_by_model(images, config.holdout_fraction)
    encoder = None
    if need_encoder:
        if not args.checkpoint:
            raise ValueError("this command needs --checkpoint with an encoder")
        encoder = pipeline.load_encoder(args.checkpoint)
    return manifest, images, heldout, encoder


def cmd_generate(args):
    config = _config_from_args(args)
    manifest, path = pipeline.generate_cmd(config, args.out, force=args.force)
    n_fam = len(manifest.families())
    print(f"generated {len(manifest.specs)} models in {n_fam} families"
          + (" plus a real class" if manifest.real_spec else "")
          + f", {manifest.images_per_model} images each")
    print(f"manifest: {path}")
    return 0


def cmd_train(args):
    config = _config_from_args(args)
    _, images = pipeline.load_dataset(args.data)
    resume = dataio.read_checkpoint(args.resume) if args.resume else None
    encoder, history = pipeline.train_from_dataset(config, images, resume_state=resume)
    loss_csv = pipeline.write_checkpoint_with_config(args.out, encoder, config, history)
    means = history.epoch_means()
    if means:
        print(f"trained {config.epochs} epochs; epoch-mean loss "
              f"{means[0]:.4f} -> {means[-1]:.4f}")
    else:
        print("no training steps run (epochs=0)")
    print(f"checkpoint: {args.out}\nloss curve: {loss_csv}")
    return 0


def cmd_fingerprint(args):
    config = _config_from_args(args)
    manifest, _, heldout, encoder = _load_run_inputs(
        args, config, need_encoder=args.baseline == "encoder")
    report = pipeline.fingerprint_report(config, manifest, heldout,
                                         encoder=encoder, baseline=args.baseline)
    dataio.write_json_report(args.out, report)
    print(f"{args.baseline} fingerprints for {len(report['model_ids'])} models: "
          f"separation {report['separation']:.4f}, "
          f"decorrelation score {report['decorrelation_score']:.4f}")
    print(f"report: {args.out}")
    return 0


def cmd_attribute(args):
    config = _config_from_args(args)
    manifest, _, heldout, encoder = _load_run_inputs(
        args, config, need_encoder=args.baseline == "encoder")
    report = pipeline.attribution_report(config, manifest, heldout,
                                         encoder=encoder, baseline=args.baseline)
    dataio.write_json_report(args.out, report)
    print(f"{args.baseline} attribution over {report['folds']} folds: "
          f"accuracy {report['accuracy_mean']:.4f} +- {report['accuracy_std']:.4f}, "
          f"macro AUC {report['auc_mean']:.4f}")
    print(f"report: {args.out}")
    return 0


def cmd_cluster(args):
    config = _config_from_args(args)
    manifest, _, heldout, encoder = _load_run_inputs(args, config)
    report = pipeline.cluster_report(config, manifest, heldout, encoder)
    dataio.write_json_report(args.out, report)
    print(f"cut at {report['cut_clusters']} clusters: adjusted Rand index "
          f"{report['adjusted_rand_index']:.4f} against planted families")
    print(f"report: {args.out}")
    return 0


def cmd_ablate(args):
    config = _config_from_args(args)
    manifest, _, heldout, encoder = _load_run_inputs(args, config)
    synth = {m: heldout[m] for m in manifest.model_ids}
    rows, header, data = pipeline.ablation_report(
        config, synth, encoder, args.bag_sizes, args.bags, args.trials)
    if not rows:
        raise ValueError("every grid cell was infeasible; nothing to write")
    dataio.write_csv(args.out, header, data)
    print(f"swept {len(rows)} cells x {args.trials} trials")
    print(f"table: {args.out}")
    return 0


def cmd_report(args):
    artifacts = {
        "fingerprints": "fingerprints.json",
        "attribution": "attribution.json",
        "clusters": "clusters.json",
    }
    summary = {}
    sources = []
    for key, name in artifacts.items():
        path = os.path.join(args.run_dir, name)
        if not os.path.exists(path):
            continue
        with open(path) as f:
            content = json.load(f)
        sources.append(name)
        if key == "fingerprints":
            summary["separation"] = content["separation"]
            summary["decorrelation_score"] = content["decorrelation_score"]
            summary["fingerprint_kind"] = content["kind"]
        elif key == "attribution":
            summary["attribution_accuracy"] = content["accuracy_mean"]
            summary["attribution_auc"] = content["auc_mean"]
        elif key == "clusters":
            summary["adjusted_rand_index"] = content["adjusted_rand_index"]
    csv_path = os.path.join(args.run_dir, "ablation.csv")
    if os.path.exists(csv_path):
        with open(csv_path) as f:
            summary["ablation_rows"] = max(len(f.readlines()) - 1, 0)
        sources.append("ablation.csv")
    if not sources:
        raise ValueError(f"no pipeline artifacts found under {args.run_dir}")
    report = {"summary": summary, "sources": sources}
    dataio.write_json_report(args.out, report)
    for key, value in sorted(summary.items()):
        print(f"{key}: {value}")
    print(f"report: {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modelprints",
        description="Fingerprint synthetic image generators from sets of samples.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, skip=()):
        p.add_argument("--config", help="flat key=value config file")
        _add_config_flags(p, skip=skip)

    p = sub.add_parser("generate", help="materialize the synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train the set encoder")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path (.ffgr)")
    p.add_argument("--resume", help="checkpoint to continue from")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("fingerprint", help="extract fingerprints + correlation matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="encoder checkpoint (.ffgr)")
    p.add_argument("--out", required=True, help="output JSON report")
    p.add_argument("--baseline", choices=("encoder", "prnu"), default="encoder")
    common(p)
    p.set_defaults(fn=cmd_fingerprint)

    p = sub.add_parser("attribute", help="k-fold source attribution")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", choices=("encoder", "prnu"), default="encoder")
    common(p)
    p.set_defaults(fn=cmd_attribute)

    p = sub.add_parser("cluster", help="hierarchical clustering of fingerprints")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("ablate", help="stability sweep over bag size and count")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--bag-sizes", type=_int_list, default=[1, 4, 16, 64],
                   help="comma-separated bag sizes")
    p.add_argument("--bags", type=_int_list, default=[32],
                   help="comma-separated bags-per-model values")
    p.add_argument("--trials", type=int, default=8)
    common(p, skip=("bags_alias",))
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="summarize a run directory's artifacts")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError, FloatingPointError, NotImplementedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
