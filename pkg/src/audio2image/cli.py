"""Command-line entry point.

Commands: preprocess, train-classifier, train, generate, evaluate. Exit
codes: 0 success, 1 user or input error, 2 internal error. Every failure
prints a line starting with ``error:`` so scripts can parse it.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np
import torch

from .audio import lms_to_net_input, read_wav, waveform_to_lms
from .cascade import cascade_forward
from .config import load_config, override_seed
from .data import (
    PairedDataset,
    build_manifest,
    load_manifest,
    make_toy_dataset,
    one_hot,
    precompute_lms,
    save_image_grid,
    save_manifest,
    write_image,
)
from .errors import ToolkitError, TrainingDiverged
from .metrics import evaluate_run, format_report_table
from .training import (
    ABLATION_VARIANTS,
    Trainer,
    load_classifier_checkpoint,
    load_gan_checkpoint,
    pretrain_classifier,
    save_classifier_checkpoint,
)

CLASSIFIER_CKPT = "classifier.ckpt"


class Parser(argparse.ArgumentParser):
    # bad usage is a user error: exit 1, machine-parseable message
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> Parser:
    parser = Parser(prog="audio2image", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override every configured seed")
        p.add_argument("--run-name", help="override the configured run name")

    p = sub.add_parser("preprocess", help="build the manifest and spectrogram cache")
    common(p)

    p = sub.add_parser("train-classifier", help="pretrain the label classifier")
    common(p)

    p = sub.add_parser("train", help="run GAN training")
    common(p)
    p.add_argument("--ablation", choices=ABLATION_VARIANTS, help="model variant to train")
    p.add_argument("--resume", action="store_true", help="continue the latest matching run")

    p = sub.add_parser("generate", help="translate audio clips into images")
    common(p)
    p.add_argument("inputs", nargs="*", help="WAV files; defaults to the dataset manifest")
    p.add_argument("--checkpoint", help="checkpoint path; defaults to the latest run")
    p.add_argument("--class-id", type=int, help="conditioning class for raw WAV inputs")
    p.add_argument("--out", help="output directory (default: <run dir>/generated)")
    p.add_argument(
        "--show-stages", action="store_true",
        help="also write a grid with coarse and refined columns",
    )

    p = sub.add_parser("evaluate", help="score a trained model on the dataset")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path; defaults to the latest run")
    p.add_argument(
        "--ablate-all", action="store_true",
        help="evaluate the latest checkpoint of every variant found",
    )
    return parser


# -- shared plumbing ---------------------------------------------------------


def _load_run_config(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = override_seed(config, args.seed)
    if getattr(args, "run_name", None):
        config = dataclasses.replace(config, run_name=args.run_name)
    return config


def _ensure_manifest(config):
    root = config.dataset.root
    if os.path.exists(os.path.join(root, "manifest.json")):
        return load_manifest(root)
    if config.dataset.kind == "toy":
        toy = config.dataset.toy
        return make_toy_dataset(
            root,
            n_classes=toy.n_classes,
            per_class=toy.per_class,
            resolution=config.model.resolution,
            seed=config.train.seed,
            sample_rate=toy.sample_rate,
            clip_seconds=toy.clip_seconds,
        )
    manifest, unpaired = build_manifest(root, config.model.resolution)
    for note in unpaired:
        print(f"warning: {note}", file=sys.stderr)
    save_manifest(manifest)
    return manifest


def _dataset(config):
    manifest = load_manifest(config.dataset.root)
    cache_dir = os.path.join(config.dataset.root, "cache")
    return PairedDataset(
        manifest, config.dataset.preprocess,
        cache_dir=cache_dir if os.path.isdir(cache_dir) else None,
    )


def _classifier_path(config):
    return os.path.join(config.dataset.root, CLASSIFIER_CKPT)


def _run_dirs(config):
    runs = config.runs_dir
    if not os.path.isdir(runs):
        return []
    out = []
    for name in sorted(os.listdir(runs)):
        path = os.path.join(runs, name)
        if os.path.isdir(path) and os.path.exists(os.path.join(path, "checkpoint.ckpt")):
            out.append(path)
    return out


def _latest_run_dir(config, run_name=None):
    dirs = _run_dirs(config)
    if run_name:
        dirs = [d for d in dirs if os.path.basename(d).startswith(run_name + "-")]
    return dirs[-1] if dirs else None


def _new_run_dir(config, variant):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(config.runs_dir, f"{config.run_name}-{variant}-{stamp}")
    path, n = base, 1
    while os.path.exists(path):
        n += 1
        path = f"{base}-{n}"
    return path


# -- commands ----------------------------------------------------------------


def cmd_preprocess(args, config) -> int:
    manifest = _ensure_manifest(config)
    cache_dir = os.path.join(config.dataset.root, "cache")
    count, failures = precompute_lms(manifest, config.dataset.preprocess, cache_dir)
    for path, reason in failures:
        print(f"error: {path}: {reason}", file=sys.stderr)
    if failures:
        print(f"error: {len(failures)} of {len(manifest.samples)} clips failed",
              file=sys.stderr)
        return 1
    print(f"cached {count} spectrograms under {cache_dir}")
    return 0


def cmd_train_classifier(args, config) -> int:
    dataset = _dataset(config)
    classifier, report = pretrain_classifier(dataset, config.model, config.train, log=print)
    path = _classifier_path(config)
    save_classifier_checkpoint(path, classifier, config.model, config.train, report)
    with open(os.path.join(config.dataset.root, "classifier_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"classifier saved to {path} "
        f"(train acc {report['train_accuracy']:.4f}, "
        f"val acc {report['val_accuracy']:.4f})"
    )
    return 0


def cmd_train(args, config) -> int:
    if args.ablation:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, ablation=args.ablation)
        )
    variant = config.train.ablation
    ckpt_path = _classifier_path(config)
    if not os.path.exists(ckpt_path):
        print(f"error: {ckpt_path}: classifier checkpoint not found; "
              f"run train-classifier first", file=sys.stderr)
        return 1
    classifier, clf_spec, _ = load_classifier_checkpoint(ckpt_path)
    if clf_spec.n_classes != config.model.n_classes:
        print(f"error: classifier was trained for {clf_spec.n_classes} classes, "
              f"config declares {config.model.n_classes}", file=sys.stderr)
        return 1

    dataset = _dataset(config)
    if args.resume:
        run_dir = _latest_run_dir(config, config.run_name)
        if run_dir is None:
            print(f"error: no resumable run named {config.run_name!r} under "
                  f"{config.runs_dir}", file=sys.stderr)
            return 1
    else:
        run_dir = _new_run_dir(config, variant)

    trainer = Trainer(run_dir, dataset, config.model, config.train, classifier, log=print)
    if args.resume:
        trainer.load_checkpoint(os.path.join(run_dir, "checkpoint.ckpt"))
        print(f"resuming {run_dir} at epoch {trainer.epoch}, step {trainer.step}")
    try:
        final = trainer.train()
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        for term, value in sorted(exc.terms.items()):
            print(f"error:   {term} = {value}", file=sys.stderr)
        return 1
    print(f"run complete: {final}")
    return 0


def _find_checkpoint(args, config):
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise ToolkitError(f"{args.checkpoint}: checkpoint not found")
        return args.checkpoint
    run_dir = _latest_run_dir(config)
    if run_dir is None:
        raise ToolkitError(f"no finished runs under {config.runs_dir}")
    return os.path.join(run_dir, "checkpoint.ckpt")


def cmd_generate(args, config) -> int:
    ckpt = _find_checkpoint(args, config)
    models, spec, wiring, _, _ = load_gan_checkpoint(ckpt)
    out_dir = args.out or os.path.join(os.path.dirname(ckpt) or ".", "generated")
    os.makedirs(out_dir, exist_ok=True)

    names, lms_list, labels = [], [], []
    if args.inputs:
        if args.class_id is None:
            print("error: raw WAV inputs need --class-id for conditioning",
                  file=sys.stderr)
            return 1
        if not 0 <= args.class_id < spec.n_classes:
            print(f"error: --class-id {args.class_id} outside [0, {spec.n_classes})",
                  file=sys.stderr)
            return 1
        for path in args.inputs:
            samples, rate = read_wav(path)
            lms = waveform_to_lms(samples, rate, config.dataset.preprocess)
            lms_list.append(lms_to_net_input(lms.values, spec.resolution))
            labels.append(args.class_id)
            names.append(os.path.splitext(os.path.basename(path))[0])
    else:
        manifest = load_manifest(config.dataset.root)
        if manifest.n_classes != spec.n_classes:
            print(f"error: checkpoint expects {spec.n_classes} classes, manifest "
                  f"has {manifest.n_classes}", file=sys.stderr)
            return 1
        dataset = _dataset(config)
        for i, entry in enumerate(manifest.samples):
            lms_plane, _, class_id = dataset.example(i)
            lms_list.append(lms_plane)
            labels.append(class_id)
            names.append(f"{manifest.classes[class_id]}-{entry.stem}")

    coarse_all, refined_all = [], []
    with torch.no_grad():
        for start in range(0, len(lms_list), 16):
            lms = torch.as_tensor(np.stack(lms_list[start : start + 16]))
            onehot = torch.stack(
                [torch.as_tensor(one_hot(c, spec.n_classes)) for c in labels[start : start + 16]]
            )
            out = cascade_forward(
                models["G1"], models.get("G2"), models["C"], lms, onehot, wiring
            )
            coarse_all.append(out.coarse.numpy())
            refined_all.append(out.refined.numpy())
    coarse = np.concatenate(coarse_all, axis=0)
    refined = np.concatenate(refined_all, axis=0)

    for i, name in enumerate(names):
        write_image(os.path.join(out_dir, f"{name}.png"), refined[i])
    if args.show_stages:
        paired = np.stack([im for pair in zip(coarse, refined) for im in pair])
        save_image_grid(os.path.join(out_dir, "stages.png"), paired, ncols=2)
    print(f"wrote {len(names)} images to {out_dir}")
    return 0


def cmd_evaluate(args, config) -> int:
    dataset = _dataset(config)
    targets = []
    if args.ablate_all:
        by_variant = {}
        for run_dir in _run_dirs(config):
            path = os.path.join(run_dir, "checkpoint.ckpt")
            try:
                _, _, _, _, metadata = load_gan_checkpoint(path)
            except ToolkitError:
                continue
            by_variant[metadata["ablation"]] = path  # later dirs win
        if not by_variant:
            print(f"error: no variant checkpoints under {config.runs_dir}",
                  file=sys.stderr)
            return 1
        targets = [by_variant[v] for v in sorted(by_variant)]
    else:
        targets = [_find_checkpoint(args, config)]

    reports = []
    for path in targets:
        models, spec, wiring, _, metadata = load_gan_checkpoint(path)
        if spec.n_classes != dataset.n_classes:
            print(f"error: {path}: checkpoint expects {spec.n_classes} classes, "
                  f"dataset has {dataset.n_classes}", file=sys.stderr)
            return 1
        report = evaluate_run(
            models, wiring, dataset, metadata["ablation"],
            batch_size=config.eval.batch_size, is_splits=config.eval.is_splits,
        )
        report.save(os.path.join(os.path.dirname(path) or ".", "metrics.json"))
        reports.append(report)
    print(format_report_table(reports))
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train-classifier": cmd_train_classifier,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_run_config(args)
        return COMMANDS[args.command](args, config)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: internal: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
