"""Shared fixtures: a small synthetic dataset, a fitted classifier, and one
fully trained run that the slower end-to-end tests reuse."""

import os

import pytest
import torch

from audio2image.audio import PreprocessConfig
from audio2image.data import PairedDataset, make_toy_dataset, precompute_lms
from audio2image.networks import ModelSpec
from audio2image.training import TrainConfig, Trainer, pretrain_classifier

N_CLASSES = 4
PER_CLASS = 8
RESOLUTION = 32


def toy_model_spec():
    return ModelSpec(
        n_classes=N_CLASSES,
        resolution=RESOLUTION,
        base_channels=16,
        unet_depth=3,
        classifier_base=8,
    )


def toy_train_config(**overrides):
    base = dict(
        batch_size=8,
        epochs=40,
        classifier_epochs=40,
        checkpoint_every=20,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("toyset"))
    manifest = make_toy_dataset(
        root, n_classes=N_CLASSES, per_class=PER_CLASS, resolution=RESOLUTION, seed=0
    )
    count, failures = precompute_lms(manifest, PreprocessConfig(), os.path.join(root, "cache"))
    assert count == N_CLASSES * PER_CLASS and not failures
    return root


@pytest.fixture(scope="session")
def toy_dataset(toy_root):
    from audio2image.data import load_manifest

    manifest = load_manifest(toy_root)
    return PairedDataset(manifest, PreprocessConfig(), cache_dir=os.path.join(toy_root, "cache"))


@pytest.fixture(scope="session")
def toy_spec():
    return toy_model_spec()


@pytest.fixture(scope="session")
def toy_classifier(toy_dataset, toy_spec):
    classifier, report = pretrain_classifier(toy_dataset, toy_spec, toy_train_config())
    assert report["train_accuracy"] >= 0.95  # toy data is separable by construction
    return classifier


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, toy_dataset, toy_spec, toy_classifier):
    """Full-model (variant E) training run used by the end-to-end checks."""
    run_dir = str(tmp_path_factory.mktemp("run_e"))
    config = toy_train_config()
    trainer = Trainer(run_dir, toy_dataset, toy_spec, config, toy_classifier)
    final = trainer.train()
    return {"run_dir": run_dir, "checkpoint": final, "trainer": trainer, "config": config}


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
