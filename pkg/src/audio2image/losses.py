"""Training objective: adversarial, classification and L1 terms per stage.

All expectations are plain means over the batch and, for patch logits, over
spatial positions. Every function here is pure and differentiable; the
trainer decides what gets optimized.
"""

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Scaling factors of the combined objective. All must be non-negative.

    ``cls_coarse``/``cls_refined`` weight the two classification terms inside
    the classification loss; ``adv_coarse``/``adv_refined`` weight the
    per-stage adversarial terms inside the adversarial sum; ``cls``, ``adv``
    and ``l1`` weight the three blocks against each other.
    """

    cls_coarse: float = 0.5
    cls_refined: float = 0.5
    adv_coarse: float = 1.0
    adv_refined: float = 1.0
    cls: float = 1.0
    adv: float = 1.0
    l1: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")


@dataclass
class LossReport:
    """Per-step scalar terms, suitable for CSV logging.

    Adversarial terms are split into the generator-side and critic-side
    values so each total is an exact weighted sum of reported terms. The
    refined-stage fields are None when the run has no second stage.
    """

    adv_g_coarse: float
    adv_d_coarse: float
    cls_coarse: float
    l1_coarse: float
    adv_g_refined: float = None
    adv_d_refined: float = None
    cls_refined: float = None
    l1_refined: float = None
    cycle_gap: float = None
    total_g: float = 0.0
    total_d: float = 0.0

    def rows(self):
        """(term, value) pairs for every populated field."""
        return [
            (f.name, getattr(self, f.name))
            for f in fields(self)
            if getattr(self, f.name) is not None
        ]


def _check_finite(name, tensor):
    if not torch.isfinite(tensor).all():
        raise ValueError(f"{name} logits contain non-finite values")


def generator_adversarial(fake_logits):
    """Non-saturating generator term: mean of -log sigmoid(fake)."""
    _check_finite("fake", fake_logits)
    return F.softplus(-fake_logits).mean()


def discriminator_adversarial(real_logits, fake_logits):
    """Critic term: -mean log sigmoid(real) - mean log(1 - sigmoid(fake))."""
    _check_finite("real", real_logits)
    _check_finite("fake", fake_logits)
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def adversarial_losses(real_logits, fake_logits):
    """Both sides of one stage's adversarial game: (critic loss, generator loss)."""
    return (
        discriminator_adversarial(real_logits, fake_logits),
        generator_adversarial(fake_logits),
    )


def total_adversarial(stage1, stage2, weights: LossWeights):
    """Weighted sum of the per-stage adversarial terms."""
    return weights.adv_coarse * stage1 + weights.adv_refined * stage2


def cross_entropy_from_probs(probs, targets):
    """Mean -log p[target] over the batch, probabilities floored at 1e-12."""
    probs = torch.as_tensor(probs)
    if probs.dim() == 1:
        probs = probs[None, :]
    targets = torch.as_tensor(targets, dtype=torch.long).reshape(-1)
    picked = probs[torch.arange(probs.shape[0]), targets]
    return -torch.log(picked.clamp(min=PROB_FLOOR)).mean()


def classification_loss(pred_coarse, pred_refined, targets, weights: LossWeights):
    """Weighted cross-entropy of both stages' predictions against the audio label."""
    loss = weights.cls_coarse * cross_entropy_from_probs(pred_coarse, targets)
    if pred_refined is not None:
        loss = loss + weights.cls_refined * cross_entropy_from_probs(pred_refined, targets)
    return loss


def l1_pair_loss(target, coarse, refined):
    """Mean absolute error of the coarse and refined images against the target."""
    if target.shape != coarse.shape or target.shape != refined.shape:
        raise ValueError(
            f"image shapes differ: target {tuple(target.shape)}, "
            f"coarse {tuple(coarse.shape)}, refined {tuple(refined.shape)}"
        )
    return (target - coarse).abs().mean() + (target - refined).abs().mean()


def combine_losses(cls_term, adv_g_term, adv_d_term, l1_term, weights: LossWeights):
    """Blend the three generator-side blocks and scale the critic side.

    Returns (generator_total, critic_total). The classification block feeds
    only the generator total; the critic sees nothing of the classifier.
    """
    generator_total = (
        weights.cls * cls_term + weights.adv * adv_g_term + weights.l1 * l1_term
    )
    critic_total = weights.adv * adv_d_term
    return generator_total, critic_total
