"""Evaluation: classification accuracy, Frechet distance, inception score.

The feature extractor and the conditional label distribution both come from
the frozen pretrained classifier, so scores are comparable only between
runs that share a classifier; the extractor id in every report guards that.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .cascade import cascade_forward
from .checkpoint import weights_hash
from .errors import DataError

SIMPLEX_TOL = 1e-5


@dataclass
class FeatureSet:
    """Rows of extractor features for one image population."""

    features: np.ndarray  # (n_samples, d) float64
    extractor_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class MetricReport:
    """Scores for one generated population against the real one."""

    variant: str
    accuracy: float
    fid: float
    inception_score: float
    n_real: int
    n_generated: int
    extractor_id: str
    is_splits: int = 1
    covariance_shrinkage: float = 0.0

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def accuracy_from_probs(probs, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) hits the label."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise DataError("accuracy needs a non-empty (n, K) probability matrix")
    if labels.shape != (probs.shape[0],):
        raise DataError("one label per probability row required")
    return float((probs.argmax(axis=1) == labels).mean())


def _psd_sqrt_trace(matrix) -> float:
    """Trace of the PSD square root, negative eigenvalues clamped to zero."""
    eigvals = np.linalg.eigvalsh((matrix + matrix.T) / 2.0)
    return float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())


def _psd_sqrt(matrix) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * root) @ eigvecs.T


def fid(real: FeatureSet, fake: FeatureSet, shrinkage_scale=1e-6):
    """Frechet distance between Gaussian fits of two feature sets.

    Covariances use the unbiased estimator. When either set has at most as
    many samples as dimensions, both covariances get a diagonal boost of
    ``shrinkage_scale * trace / d`` so the estimate stays usable at desk
    scale. Returns (distance, shrinkage_epsilon_applied_to_real).
    """
    if real.extractor_id != fake.extractor_id:
        raise DataError(
            f"feature sets come from different extractors: "
            f"{real.extractor_id!r} vs {fake.extractor_id!r}"
        )
    if real.dim != fake.dim:
        raise DataError(f"feature dimensions differ: {real.dim} vs {fake.dim}")
    if real.n < 2 or fake.n < 2:
        raise DataError("need at least two samples per set to fit a covariance")

    mu_r = real.features.mean(axis=0)
    mu_f = fake.features.mean(axis=0)
    cov_r = np.cov(real.features, rowvar=False, ddof=1).reshape(real.dim, real.dim)
    cov_f = np.cov(fake.features, rowvar=False, ddof=1).reshape(real.dim, real.dim)

    eps_r = 0.0
    if min(real.n, fake.n) <= real.dim:
        eps_r = shrinkage_scale * float(np.trace(cov_r)) / real.dim
        eps_f = shrinkage_scale * float(np.trace(cov_f)) / real.dim
        cov_r = cov_r + eps_r * np.eye(real.dim)
        cov_f = cov_f + eps_f * np.eye(real.dim)

    diff = mu_r - mu_f
    root_r = _psd_sqrt(cov_r)
    cross_trace = _psd_sqrt_trace(root_r @ cov_f @ root_r)
    value = float(diff @ diff + np.trace(cov_r) + np.trace(cov_f) - 2.0 * cross_trace)
    return max(value, 0.0), eps_r


def _check_simplex(probs):
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise DataError("need a non-empty (n, K) probability matrix")
    if probs.min() < -SIMPLEX_TOL:
        raise DataError(f"probabilities contain negative entries (min {probs.min():.2e})")
    sums = probs.sum(axis=1)
    worst = float(np.abs(sums - 1.0).max())
    if worst > SIMPLEX_TOL:
        raise DataError(f"probability rows are off the simplex by {worst:.2e}")


def inception_score(conditional_probs, splits=1) -> float:
    """exp of the mean KL between per-sample label distributions and their mean.

    With more than one split the rows are partitioned into consecutive
    chunks and the per-chunk scores averaged.
    """
    probs = np.asarray(conditional_probs, dtype=np.float64)
    _check_simplex(probs)
    if splits < 1 or splits > probs.shape[0]:
        raise DataError(f"cannot cut {probs.shape[0]} rows into {splits} splits")

    scores = []
    bounds = np.linspace(0, probs.shape[0], splits + 1).astype(int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        chunk = probs[lo:hi]
        marginal = chunk.mean(axis=0)
        positive = chunk > 0
        # marginal[j] > 0 wherever any chunk row has mass on j, so the
        # masked logs below never see zero
        log_ratio = np.log(np.where(positive, chunk, 1.0)) - np.log(
            np.where(marginal > 0, marginal, 1.0)
        )
        kl = np.where(positive, chunk * log_ratio, 0.0).sum(axis=1)
        scores.append(float(np.exp(np.clip(kl, 0.0, None).mean())))
    return float(np.mean(scores))


# -- extraction and orchestration ------------------------------------------------


def extractor_id_for(classifier) -> str:
    return "classifier-" + weights_hash(classifier)[:16]


def classifier_features(classifier, images, batch_size=32) -> np.ndarray:
    """Penultimate-layer features, batch-size independent (inference mode)."""
    classifier.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = torch.as_tensor(images[start : start + batch_size], dtype=torch.float32)
            out.append(classifier.features(chunk).numpy().astype(np.float64))
    return np.concatenate(out, axis=0)


def classifier_probs(classifier, images, batch_size=32) -> np.ndarray:
    classifier.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = torch.as_tensor(images[start : start + batch_size], dtype=torch.float32)
            out.append(classifier(chunk).numpy().astype(np.float64))
    return np.concatenate(out, axis=0)


def generate_images(models, wiring, dataset, batch_size=32):
    """Run the cascade over a whole dataset in inference mode.

    Returns (coarse, refined, labels) numpy arrays ordered like the manifest.
    """
    g1, g2, classifier = models["G1"], models.get("G2"), models["C"]
    g1.eval()
    if g2 is not None:
        g2.eval()
    coarse_out, refined_out, labels_out = [], [], []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            indices = range(start, min(start + batch_size, len(dataset)))
            lms, _, labels = dataset.batch(indices)
            onehot = torch.eye(dataset.n_classes)[torch.as_tensor(labels)]
            out = cascade_forward(
                g1, g2, classifier, torch.as_tensor(lms), onehot, wiring
            )
            coarse_out.append(out.coarse.numpy())
            refined_out.append(out.refined.numpy())
            labels_out.append(labels)
    return (
        np.concatenate(coarse_out, axis=0),
        np.concatenate(refined_out, axis=0),
        np.concatenate(labels_out, axis=0),
    )


def evaluate_run(models, wiring, dataset, variant, batch_size=32, is_splits=1) -> MetricReport:
    """Generate one image per manifest entry and score the population."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    classifier = models["C"]
    _, refined, labels = generate_images(models, wiring, dataset, batch_size)

    real_images = []
    for start in range(0, len(dataset), batch_size):
        indices = range(start, min(start + batch_size, len(dataset)))
        _, images, _ = dataset.batch(indices)
        real_images.append(images)
    real_images = np.concatenate(real_images, axis=0)

    ext_id = extractor_id_for(classifier)
    real_set = FeatureSet(classifier_features(classifier, real_images, batch_size), ext_id)
    fake_set = FeatureSet(classifier_features(classifier, refined, batch_size), ext_id)
    probs = classifier_probs(classifier, refined, batch_size)

    distance, eps = fid(real_set, fake_set)
    return MetricReport(
        variant=variant,
        accuracy=accuracy_from_probs(probs, labels),
        fid=distance,
        inception_score=inception_score(probs, splits=is_splits),
        n_real=int(real_set.n),
        n_generated=int(fake_set.n),
        extractor_id=ext_id,
        is_splits=is_splits,
        covariance_shrinkage=eps,
    )


def format_report_table(reports) -> str:
    """Fixed-width table over one or more reports, one row per variant."""
    header = f"{'variant':8} {'accuracy':>9} {'fid':>12} {'is':>9} {'n':>6}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.variant:8} {r.accuracy:9.4f} {r.fid:12.4f} "
            f"{r.inception_score:9.4f} {r.n_generated:6d}"
        )
    return "\n".join(lines)
