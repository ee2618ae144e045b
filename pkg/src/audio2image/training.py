"""Training: classifier pretraining, alternating GAN phases, ablations.

Each step runs two phases. Phase one updates both generators from the sum
of the classifier's and the critic's gradients while the critic's weights
are held fixed; phase two updates the critic on detached images, so neither
the generators nor the classifier move. The classifier itself is frozen for
the whole GAN run.
"""

import os
from collections import namedtuple
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .cascade import CascadeWiring, cascade_forward, label_cycle_gap
from .checkpoint import (
    load_arrays,
    load_module_arrays,
    load_optimizer_arrays,
    module_arrays,
    optimizer_arrays,
    save_arrays,
    weights_hash,
)
from .data import PairedDataset, save_image_grid
from .errors import CheckpointError, ConfigError, DataError, TrainingDiverged
from .losses import (
    LossReport,
    LossWeights,
    combine_losses,
    cross_entropy_from_probs,
    discriminator_adversarial,
    generator_adversarial,
    total_adversarial,
)
from .networks import (
    ModelSpec,
    build_classifier,
    build_discriminator,
    build_stage1_generator,
    build_stage2_generator,
    init_weights,
)

ABLATION_VARIANTS = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters. Defaults are the full-scale settings."""

    learning_rate: float = 0.0008
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    classifier_epochs: int = 40
    classifier_lr: float = 0.001
    init_std: float = 0.2
    init_mean: float = 0.0
    seed: int = 0
    checkpoint_every: int = 50
    threads: int = 1
    ablation: str = "E"
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0 < beta < 1:
                raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.ablation not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {self.ablation!r}")


def set_requires_grad(module, flag) -> None:
    for param in module.parameters():
        param.requires_grad_(flag)


def make_adam(params, config: TrainConfig, lr=None):
    return torch.optim.Adam(
        params,
        lr=config.learning_rate if lr is None else lr,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )


def apply_ablation(variant, spec: ModelSpec, weights: LossWeights):
    """Adjust spec, weights and wiring for one ablation variant.

    A removes attention, B zeroes the classification weight, C feeds stage
    two the audio label instead of the residue, D drops stage two, E is the
    full model unchanged.
    """
    wiring = CascadeWiring()
    if variant == "A":
        spec = replace(spec, use_attention=False)
    elif variant == "B":
        weights = replace(weights, cls=0.0)
    elif variant == "C":
        wiring = CascadeWiring(use_residue=False)
    elif variant == "D":
        wiring = CascadeWiring(two_stage=False)
    elif variant != "E":
        raise ConfigError(f"unknown ablation variant {variant!r}")
    return spec, weights, wiring


Batch = namedtuple("Batch", "lms image labels onehot")


def make_batch(lms, image, labels, n_classes) -> Batch:
    lms = torch.as_tensor(lms, dtype=torch.float32)
    image = torch.as_tensor(image, dtype=torch.float32)
    labels = torch.as_tensor(labels, dtype=torch.long)
    onehot = F.one_hot(labels, n_classes).float()
    return Batch(lms, image, labels, onehot)


def generator_objective(terms, weights: LossWeights, two_stage):
    """Generator total from raw terms; works on tensors and plain floats."""
    if two_stage:
        adv = total_adversarial(terms["adv_g_coarse"], terms["adv_g_refined"], weights)
        cls = (
            weights.cls_coarse * terms["cls_coarse"]
            + weights.cls_refined * terms["cls_refined"]
        )
        l1 = terms["l1_coarse"] + terms["l1_refined"]
    else:
        adv = weights.adv_coarse * terms["adv_g_coarse"]
        cls = weights.cls_coarse * terms["cls_coarse"]
        l1 = terms["l1_coarse"]
    return combine_losses(cls, adv, 0.0, l1, weights)[0]


def critic_objective(terms, weights: LossWeights, two_stage):
    """Critic total from raw terms; works on tensors and plain floats."""
    if two_stage:
        adv = total_adversarial(terms["adv_d_coarse"], terms["adv_d_refined"], weights)
    else:
        adv = weights.adv_coarse * terms["adv_d_coarse"]
    return combine_losses(0.0, 0.0, adv, 0.0, weights)[1]


def _term_floats(terms):
    return {k: float(v.detach()) for k, v in terms.items()}


def generator_phase(models, opt_g, batch: Batch, wiring: CascadeWiring, weights: LossWeights):
    """Update G1 (and G2) from the combined objective; D and C stay fixed.

    Returns the cascade output (for reuse in the critic phase) and the raw
    loss terms as tensors.
    """
    g1, g2, critic, classifier = models["G1"], models.get("G2"), models["D"], models["C"]
    set_requires_grad(critic, False)
    terms = {}
    try:
        out = cascade_forward(g1, g2, classifier, batch.lms, batch.onehot, wiring)

        fake_coarse = critic(torch.cat([batch.lms, out.coarse], dim=1))
        terms["adv_g_coarse"] = generator_adversarial(fake_coarse)
        terms["cls_coarse"] = cross_entropy_from_probs(out.coarse_probs, batch.labels)
        terms["l1_coarse"] = (batch.image - out.coarse).abs().mean()
        terms["cycle_gap"] = label_cycle_gap(batch.onehot, out.coarse_probs)

        if wiring.two_stage:
            refined_probs = classifier(out.refined)
            fake_refined = critic(torch.cat([batch.lms, out.refined], dim=1))
            terms["adv_g_refined"] = generator_adversarial(fake_refined)
            terms["cls_refined"] = cross_entropy_from_probs(refined_probs, batch.labels)
            terms["l1_refined"] = (batch.image - out.refined).abs().mean()

        generator_total = generator_objective(terms, weights, wiring.two_stage)
        if not torch.isfinite(generator_total):
            raise TrainingDiverged("generator loss is not finite", _term_floats(terms))

        opt_g.zero_grad(set_to_none=True)
        generator_total.backward()
        opt_g.step()
    except ValueError as exc:
        # non-finite activations surface here from the loss guards
        raise TrainingDiverged(f"generator phase: {exc}", _term_floats(terms)) from exc
    finally:
        set_requires_grad(critic, True)
    return out, terms


def discriminator_phase(models, opt_d, batch: Batch, out, wiring: CascadeWiring, weights: LossWeights):
    """Update the critic on real pairs vs detached fakes; generators stay fixed."""
    critic = models["D"]
    terms = {}
    try:
        real_logits = critic(torch.cat([batch.lms, batch.image], dim=1))
        fake_coarse = critic(torch.cat([batch.lms, out.coarse.detach()], dim=1))
        terms["adv_d_coarse"] = discriminator_adversarial(real_logits, fake_coarse)
        if wiring.two_stage:
            fake_refined = critic(torch.cat([batch.lms, out.refined.detach()], dim=1))
            terms["adv_d_refined"] = discriminator_adversarial(real_logits, fake_refined)

        critic_total = critic_objective(terms, weights, wiring.two_stage)
        if not torch.isfinite(critic_total):
            raise TrainingDiverged("critic loss is not finite", _term_floats(terms))
    except ValueError as exc:
        raise TrainingDiverged(f"critic phase: {exc}", _term_floats(terms)) from exc

    opt_d.zero_grad(set_to_none=True)
    critic_total.backward()
    opt_d.step()
    return terms


def gan_step(models, optimizers, batch: Batch, wiring: CascadeWiring, weights: LossWeights) -> LossReport:
    """One alternating optimization step; returns the scalar loss report.

    Report totals are recomputed from the scalar terms in double precision,
    so they reconstruct exactly as weighted sums of the reported fields.
    """
    out, g_terms = generator_phase(models, optimizers["G"], batch, wiring, weights)
    d_terms = discriminator_phase(models, optimizers["D"], batch, out, wiring, weights)

    g = _term_floats(g_terms)
    d = _term_floats(d_terms)
    return LossReport(
        adv_g_coarse=g["adv_g_coarse"],
        adv_d_coarse=d["adv_d_coarse"],
        cls_coarse=g["cls_coarse"],
        l1_coarse=g["l1_coarse"],
        adv_g_refined=g.get("adv_g_refined"),
        adv_d_refined=d.get("adv_d_refined"),
        cls_refined=g.get("cls_refined"),
        l1_refined=g.get("l1_refined"),
        cycle_gap=g["cycle_gap"],
        total_g=generator_objective(g, weights, wiring.two_stage),
        total_d=critic_objective(d, weights, wiring.two_stage),
    )


# -- classifier pretraining -----------------------------------------------------


def split_indices(n):
    """Deterministic train/validation split: every fifth sample validates."""
    val = [i for i in range(n) if i % 5 == 4]
    train = [i for i in range(n) if i % 5 != 4]
    if not val or not train:
        return list(range(n)), list(range(n))
    return train, val


def _accuracy(classifier, dataset, indices, batch_size):
    correct = 0
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            _, images, labels = dataset.batch(chunk)
            probs = classifier(torch.as_tensor(images))
            pred = probs.argmax(dim=1).numpy()
            correct += int((pred == labels).sum())
    return correct / max(len(indices), 1)


def pretrain_classifier(dataset: PairedDataset, spec: ModelSpec, config: TrainConfig, log=None):
    """Fit the label classifier on real images; returns (classifier, report).

    The result is meant to be frozen before GAN training starts.
    """
    if dataset.n_classes < 2:
        raise DataError("classifier pretraining needs at least two classes")
    present = {entry.class_id for entry in dataset.manifest.samples}
    if len(present) < 2:
        raise DataError("classifier pretraining needs samples from at least two classes")

    torch.manual_seed(config.seed)
    torch.set_num_threads(config.threads)
    classifier = build_classifier(spec)
    opt = make_adam(classifier.parameters(), config, lr=config.classifier_lr)
    train_idx, val_idx = split_indices(len(dataset))

    classifier.train()
    for epoch in range(config.classifier_epochs):
        shuffle = torch.Generator().manual_seed(config.seed * 100003 + epoch)
        order = torch.randperm(len(train_idx), generator=shuffle).tolist()
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_idx[j] for j in order[start : start + config.batch_size]]
            _, images, labels = dataset.batch(chunk)
            logits = classifier.logits(torch.as_tensor(images))
            loss = F.cross_entropy(logits, torch.as_tensor(labels))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(chunk)
        if log:
            log(f"classifier epoch {epoch + 1}/{config.classifier_epochs} "
                f"loss {epoch_loss / len(train_idx):.4f}")

    classifier.eval()
    report = {
        "train_accuracy": _accuracy(classifier, dataset, train_idx, config.batch_size),
        "val_accuracy": _accuracy(classifier, dataset, val_idx, config.batch_size),
        "n_train": len(train_idx),
        "n_val": len(val_idx),
        "epochs": config.classifier_epochs,
    }
    return classifier, report


def freeze_classifier(classifier) -> None:
    """Mark the classifier immutable: no gradients, inference-mode statistics."""
    set_requires_grad(classifier, False)
    classifier.eval()


# -- checkpoint composition ------------------------------------------------------


def _spec_dict(spec: ModelSpec) -> dict:
    return asdict(spec)


def _config_dict(config: TrainConfig) -> dict:
    return asdict(config)


def spec_from_dict(raw) -> ModelSpec:
    return ModelSpec(**raw)


def train_config_from_dict(raw) -> TrainConfig:
    raw = dict(raw)
    raw["weights"] = LossWeights(**raw.get("weights", {}))
    return TrainConfig(**raw)


def save_classifier_checkpoint(path, classifier, spec, config, report) -> None:
    metadata = {
        "kind": "classifier",
        "model": _spec_dict(spec),
        "train": _config_dict(config),
        "accuracy": report,
        "weights_hash": weights_hash(classifier),
    }
    save_arrays(path, metadata, module_arrays("model/C", classifier))


def load_classifier_checkpoint(path):
    metadata, arrays = load_arrays(path)
    if metadata.get("kind") != "classifier":
        raise CheckpointError(f"{path}: not a classifier checkpoint")
    spec = spec_from_dict(metadata["model"])
    classifier = build_classifier(spec)
    load_module_arrays(classifier, arrays, "model/C")
    freeze_classifier(classifier)
    return classifier, spec, metadata


def load_gan_checkpoint(path):
    """Rebuild inference-ready models from a training checkpoint.

    Returns (models dict, spec, wiring, weights, metadata). The stored model
    section already reflects the run's ablation, so reapplying the variant
    is idempotent.
    """
    metadata, arrays = load_arrays(path)
    if metadata.get("kind") != "gan":
        raise CheckpointError(f"{path}: not a training checkpoint")
    spec = spec_from_dict(metadata["model"])
    config = train_config_from_dict(metadata["train"])
    spec, weights, wiring = apply_ablation(metadata["ablation"], spec, config.weights)

    models = {"G1": build_stage1_generator(spec)}
    load_module_arrays(models["G1"], arrays, "model/G1")
    if wiring.two_stage:
        models["G2"] = build_stage2_generator(spec)
        load_module_arrays(models["G2"], arrays, "model/G2")
    models["D"] = build_discriminator(spec)
    load_module_arrays(models["D"], arrays, "model/D")
    models["C"] = build_classifier(spec)
    load_module_arrays(models["C"], arrays, "model/C")

    for model in models.values():
        model.eval()
    freeze_classifier(models["C"])
    return models, spec, wiring, weights, metadata


class Trainer:
    """Drives one GAN run: data order, phases, logging, checkpoints, resume."""

    def __init__(self, run_dir, dataset: PairedDataset, spec: ModelSpec,
                 config: TrainConfig, classifier, log=None):
        self.run_dir = run_dir
        self.dataset = dataset
        self.config = config
        self.log = log or (lambda message: None)
        self.variant = config.ablation
        self.spec, self.weights, self.wiring = apply_ablation(
            self.variant, spec, config.weights
        )
        if dataset.n_classes != self.spec.n_classes:
            raise ConfigError(
                f"dataset has {dataset.n_classes} classes, model expects {self.spec.n_classes}"
            )

        torch.manual_seed(config.seed)
        torch.set_num_threads(config.threads)

        self.models = {"C": classifier, "D": None, "G1": None}
        freeze_classifier(classifier)
        self.classifier_hash = weights_hash(classifier)

        g1 = init_weights(build_stage1_generator(self.spec), config.init_mean, config.init_std)
        self.models["G1"] = g1
        g_params = [(f"G1.{n}", p) for n, p in g1.named_parameters()]
        if self.wiring.two_stage:
            g2 = init_weights(
                build_stage2_generator(self.spec), config.init_mean, config.init_std
            )
            self.models["G2"] = g2
            g_params += [(f"G2.{n}", p) for n, p in g2.named_parameters()]
        critic = init_weights(build_discriminator(self.spec), config.init_mean, config.init_std)
        self.models["D"] = critic

        self.g_param_names = [name for name, _ in g_params]
        self.d_param_names = [f"D.{n}" for n, _ in critic.named_parameters()]
        self.optimizers = {
            "G": make_adam([p for _, p in g_params], config),
            "D": make_adam(critic.parameters(), config),
        }

        self.step = 0
        self.epoch = 0  # epochs completed
        os.makedirs(run_dir, exist_ok=True)
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(run_dir, "grids"), exist_ok=True)
        self.loss_path = os.path.join(run_dir, "losses.csv")
        if not os.path.exists(self.loss_path):
            with open(self.loss_path, "w") as fh:
                fh.write("step,term,value\n")

    # -- persistence --

    def _metadata(self):
        return {
            "kind": "gan",
            "format": "toolkit-run",
            "step": self.step,
            "epoch": self.epoch,
            "ablation": self.variant,
            "model": _spec_dict(self.spec),
            "train": _config_dict(self.config),
            "classifier_hash": self.classifier_hash,
        }

    def save_checkpoint(self, path) -> None:
        arrays = {}
        arrays.update(module_arrays("model/G1", self.models["G1"]))
        if self.wiring.two_stage:
            arrays.update(module_arrays("model/G2", self.models["G2"]))
        arrays.update(module_arrays("model/D", self.models["D"]))
        arrays.update(module_arrays("model/C", self.models["C"]))
        arrays.update(optimizer_arrays("opt/G", self.optimizers["G"], self.g_param_names))
        arrays.update(optimizer_arrays("opt/D", self.optimizers["D"], self.d_param_names))
        save_arrays(path, self._metadata(), arrays)

    def load_checkpoint(self, path) -> None:
        metadata, arrays = load_arrays(path)
        if metadata.get("kind") != "gan":
            raise CheckpointError(f"{path}: not a training checkpoint")
        saved_spec = spec_from_dict(metadata["model"])
        if saved_spec != self.spec:
            raise CheckpointError(
                f"{path}: checkpoint was written for {saved_spec}, run expects {self.spec}"
            )
        if metadata.get("ablation") != self.variant:
            raise CheckpointError(
                f"{path}: checkpoint variant {metadata.get('ablation')!r} does not "
                f"match requested variant {self.variant!r}"
            )
        load_module_arrays(self.models["G1"], arrays, "model/G1")
        if self.wiring.two_stage:
            load_module_arrays(self.models["G2"], arrays, "model/G2")
        load_module_arrays(self.models["D"], arrays, "model/D")
        load_module_arrays(self.models["C"], arrays, "model/C")
        load_optimizer_arrays(self.optimizers["G"], self.g_param_names, arrays, "opt/G")
        load_optimizer_arrays(self.optimizers["D"], self.d_param_names, arrays, "opt/D")
        self.step = int(metadata["step"])
        self.epoch = int(metadata["epoch"])
        self.classifier_hash = metadata["classifier_hash"]

    def _append_losses(self, report: LossReport) -> None:
        with open(self.loss_path, "a") as fh:
            for term, value in report.rows():
                fh.write(f"{self.step},{term},{value!r}\n")

    def _save_grid(self, epoch) -> None:
        n = min(8, len(self.dataset))
        lms, images, labels = self.dataset.batch(range(n))
        batch = make_batch(lms, images, labels, self.spec.n_classes)
        for key in ("G1", "G2"):
            if key in self.models and self.models[key] is not None:
                self.models[key].eval()
        with torch.no_grad():
            out = cascade_forward(
                self.models["G1"], self.models.get("G2"), self.models["C"],
                batch.lms, batch.onehot, self.wiring,
            )
        for key in ("G1", "G2"):
            if key in self.models and self.models[key] is not None:
                self.models[key].train()
        rows = [batch.image.numpy(), out.coarse.numpy()]
        if self.wiring.two_stage:
            rows.append(out.refined.numpy())
        grid = np.concatenate(rows, axis=0)
        save_image_grid(
            os.path.join(self.run_dir, "grids", f"epoch_{epoch:04d}.png"), grid, ncols=n
        )

    # -- the loop --

    def train(self):
        """Run remaining epochs; returns the final checkpoint path."""
        config = self.config
        for model in (self.models["G1"], self.models.get("G2"), self.models["D"]):
            if model is not None:
                model.train()
        n = len(self.dataset)
        if n == 0:
            raise DataError("dataset is empty")

        for epoch in range(self.epoch, config.epochs):
            shuffle = torch.Generator().manual_seed(config.seed * 100003 + epoch)
            order = torch.randperm(n, generator=shuffle).tolist()
            epoch_g, epoch_d, batches = 0.0, 0.0, 0
            for start in range(0, n, config.batch_size):
                chunk = order[start : start + config.batch_size]
                lms, images, labels = self.dataset.batch(chunk)
                batch = make_batch(lms, images, labels, self.spec.n_classes)
                try:
                    report = gan_step(self.models, self.optimizers, batch, self.wiring, self.weights)
                except TrainingDiverged as exc:
                    exc.terms["step"] = self.step
                    raise
                self.step += 1
                self._append_losses(report)
                epoch_g += report.total_g
                epoch_d += report.total_d
                batches += 1
            self.epoch = epoch + 1
            self.log(
                f"epoch {self.epoch}/{config.epochs} "
                f"g {epoch_g / batches:.4f} d {epoch_d / batches:.4f}"
            )
            if self.epoch % config.checkpoint_every == 0 and self.epoch < config.epochs:
                path = os.path.join(
                    self.run_dir, "checkpoints", f"epoch_{self.epoch:04d}.ckpt"
                )
                self.save_checkpoint(path)
                self.save_checkpoint(os.path.join(self.run_dir, "checkpoint.ckpt"))
                self._save_grid(self.epoch)

        final = os.path.join(self.run_dir, "checkpoint.ckpt")
        self.save_checkpoint(final)
        self._save_grid(self.epoch)
        return final
