"""Residue conditioning and the two-stage generation wiring."""

import numpy as np
import pytest
import torch

from audio2image.cascade import (
    CascadeWiring,
    cascade_forward,
    label_cycle_gap,
    residue_label,
    tile_planes,
)
from audio2image.networks import ModelSpec, build_stage1_generator, build_stage2_generator


def test_residue_examples():
    assert np.allclose(
        residue_label(np.array([1.0, 0, 0]), np.array([0.6, 0.3, 0.1])),
        [0.4, -0.3, -0.1],
        atol=1e-12,
    )
    onehot = np.array([0.0, 1.0, 0.0])
    assert np.all(residue_label(onehot, onehot) == 0.0)


def test_residue_properties_on_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        k = int(rng.integers(2, 14))
        label = np.zeros(k)
        label[rng.integers(0, k)] = 1.0
        pred = rng.dirichlet(np.ones(k))
        res = residue_label(label, pred)
        assert abs(res.sum()) < 1e-6
        assert res.min() >= -1.0 and res.max() <= 1.0


def test_cycle_gap_values():
    f64 = torch.float64
    assert float(label_cycle_gap(torch.tensor([1.0, 0, 0], dtype=f64),
                                 torch.tensor([1.0, 0, 0], dtype=f64))) == 0.0
    assert abs(float(label_cycle_gap(torch.tensor([1.0, 0, 0], dtype=f64),
                                     torch.tensor([0.0, 1, 0], dtype=f64))) - 2.0) < 1e-9
    gap = float(label_cycle_gap(torch.tensor([1.0, 0, 0], dtype=f64),
                                torch.tensor([0.6, 0.3, 0.1], dtype=f64)))
    assert abs(gap - 0.8) < 1e-9


def test_cycle_gap_batched_mean():
    labels = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    preds = torch.tensor([[1.0, 0.0], [0.5, 0.5]])
    assert abs(float(label_cycle_gap(labels, preds)) - 0.5) < 1e-9


def test_tile_planes():
    planes = tile_planes(torch.tensor([[0.5, -0.25]]), 4)
    assert planes.shape == (1, 2, 4, 4)
    assert torch.all(planes[0, 0] == 0.5)
    assert torch.all(planes[0, 1] == -0.25)


class _PerfectClassifier(torch.nn.Module):
    """Always returns the labels it was primed with."""

    def __init__(self, probs):
        super().__init__()
        self.probs = probs

    def forward(self, images):
        return self.probs


class _RecordingGenerator(torch.nn.Module):
    """Stores its input and emits a constant image."""

    def __init__(self, out_channels=3):
        super().__init__()
        self.seen = None
        self.out_channels = out_channels

    def forward(self, x):
        self.seen = x.detach().clone()
        b, _, h, w = x.shape
        return torch.zeros(b, self.out_channels, h, w)


def _toy_nets():
    torch.manual_seed(0)
    spec = ModelSpec(n_classes=3, resolution=32, base_channels=4, unet_depth=3)
    return build_stage1_generator(spec), build_stage2_generator(spec)


def test_perfect_classifier_gives_stage_two_zero_planes():
    g1 = _RecordingGenerator()
    g2 = _RecordingGenerator()
    labels = torch.tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    clf = _PerfectClassifier(labels)
    lms = torch.zeros(2, 1, 8, 8)
    out = cascade_forward(g1, g2, clf, lms, labels, CascadeWiring())
    assert torch.all(out.residue == 0.0)
    assert torch.all(g2.seen[:, 3:] == 0.0)  # conditioning planes all zero


def test_single_stage_wiring_aliases_coarse():
    g1 = _RecordingGenerator()
    labels = torch.tensor([[0.0, 1.0, 0.0]])
    clf = _PerfectClassifier(labels)
    out = cascade_forward(g1, None, clf, torch.zeros(1, 1, 8, 8), labels,
                          CascadeWiring(two_stage=False))
    assert out.refined is out.coarse
    assert out.residue is None


def test_label_wiring_feeds_audio_label_to_stage_two():
    g1 = _RecordingGenerator()
    g2 = _RecordingGenerator()
    labels = torch.tensor([[0.0, 1.0, 0.0]])
    skewed = torch.tensor([[0.2, 0.5, 0.3]])
    clf = _PerfectClassifier(skewed)
    out = cascade_forward(g1, g2, clf, torch.zeros(1, 1, 8, 8), labels,
                          CascadeWiring(use_residue=False))
    assert torch.all(out.residue == labels)
    planes = g2.seen[:, 3:]
    for k in range(3):
        assert torch.all(planes[0, k] == labels[0, k])


def test_residue_wiring_feeds_difference_to_stage_two():
    g1 = _RecordingGenerator()
    g2 = _RecordingGenerator()
    labels = torch.tensor([[0.0, 1.0, 0.0]])
    skewed = torch.tensor([[0.2, 0.5, 0.3]])
    clf = _PerfectClassifier(skewed)
    out = cascade_forward(g1, g2, clf, torch.zeros(1, 1, 8, 8), labels,
                          CascadeWiring())
    assert torch.allclose(out.residue, labels - skewed, atol=1e-7)


def test_cascade_shapes_with_real_generators():
    g1, g2 = _toy_nets()
    clf = _PerfectClassifier(torch.tensor([[1.0, 0, 0], [0, 1.0, 0]]))
    lms = torch.randn(2, 1, 32, 32)
    labels = torch.tensor([[1.0, 0, 0], [0, 1.0, 0]])
    out = cascade_forward(g1, g2, clf, lms, labels, CascadeWiring())
    assert out.coarse.shape == (2, 3, 32, 32)
    assert out.refined.shape == (2, 3, 32, 32)
    assert out.coarse_probs.shape == (2, 3)


def test_cascade_inference_is_deterministic():
    g1, g2 = _toy_nets()
    g1.eval()
    g2.eval()
    clf = _PerfectClassifier(torch.tensor([[1.0, 0, 0]]))
    lms = torch.randn(1, 1, 32, 32)
    labels = torch.tensor([[1.0, 0, 0]])
    with torch.no_grad():
        a = cascade_forward(g1, g2, clf, lms, labels, CascadeWiring())
        b = cascade_forward(g1, g2, clf, lms, labels, CascadeWiring())
    assert torch.equal(a.coarse, b.coarse)
    assert torch.equal(a.refined, b.refined)


def test_refinement_narrows_label_gap_on_trained_model(trained_run, toy_dataset):
    """On held-out inputs the second stage should not widen the label gap."""
    import audio2image.data as data_mod
    from audio2image.audio import PreprocessConfig
    from audio2image.training import load_gan_checkpoint, make_batch

    models, spec, wiring, _, _ = load_gan_checkpoint(trained_run["checkpoint"])
    holdout_root = trained_run["run_dir"] + "-holdout"
    manifest = data_mod.make_toy_dataset(
        holdout_root, n_classes=4, per_class=4, resolution=32, seed=1
    )
    holdout = data_mod.PairedDataset(manifest, PreprocessConfig())
    lms, images, labels = holdout.batch(range(len(holdout)))
    batch = make_batch(lms, images, labels, 4)
    with torch.no_grad():
        out = cascade_forward(
            models["G1"], models.get("G2"), models["C"], batch.lms, batch.onehot, wiring
        )
        refined_probs = models["C"](out.refined)
    gap_coarse = float((out.coarse_probs - batch.onehot).abs().mean())
    gap_refined = float((refined_probs - batch.onehot).abs().mean())
    assert gap_refined <= gap_coarse + 1e-6
