"""Two-stage generation: coarse image, label residue, refined image.

Stage one maps the spectrogram plane plus a tiled audio label to a coarse
image. The frozen classifier scores that image; the residue between the
audio label and the predicted distribution conditions stage two, which
refines the coarse image. Gradients flow through the classifier into the
images, never into the classifier's own weights.
"""

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class CascadeWiring:
    """How the two stages are connected for one training variant.

    ``two_stage`` off means the refined image is the coarse image and no
    second generator runs. ``use_residue`` off feeds stage two the plain
    audio label instead of the classifier residue.
    """

    two_stage: bool = True
    use_residue: bool = True


@dataclass
class CascadeOutput:
    coarse: torch.Tensor  # (B, 3, R, R)
    refined: torch.Tensor  # (B, 3, R, R); aliases coarse when single-stage
    coarse_probs: torch.Tensor  # (B, K) classifier output on the coarse image
    residue: torch.Tensor = None  # (B, K) stage-two conditioning, if any


def residue_label(audio_label, predicted_probs):
    """Per-class gap between the target one-hot label and a prediction.

    Entries lie in [-1, 1] and sum to zero whenever both inputs are
    distributions; no clamping is applied.
    """
    return audio_label - predicted_probs


def label_cycle_gap(audio_label, predicted_probs):
    """L1 norm of the residue, averaged over the batch if one is present.

    Zero exactly when the classifier reproduces the audio label; used as a
    consistency diagnostic, not as a training term.
    """
    audio_label = torch.as_tensor(audio_label)
    predicted_probs = torch.as_tensor(predicted_probs)
    gap = (audio_label - predicted_probs).abs().sum(dim=-1)
    return gap.mean()


def tile_planes(vectors, resolution):
    """Expand (B, K) vectors into (B, K, R, R) constant planes."""
    return vectors[:, :, None, None].expand(-1, -1, resolution, resolution)


def cascade_forward(g1, g2, classifier, lms, audio_label, wiring: CascadeWiring) -> CascadeOutput:
    """Run the generation cascade for one batch.

    ``lms`` is (B, 1, R, R), ``audio_label`` is (B, K) one-hot rows. The
    classifier is applied in whatever train/eval mode the caller set; its
    parameters are expected to be frozen.
    """
    resolution = lms.shape[-1]
    coarse = g1(torch.cat([lms, tile_planes(audio_label, resolution)], dim=1))
    coarse_probs = classifier(coarse)

    if not wiring.two_stage:
        return CascadeOutput(coarse=coarse, refined=coarse, coarse_probs=coarse_probs)

    if wiring.use_residue:
        condition = residue_label(audio_label, coarse_probs)
    else:
        condition = audio_label
    refined = g2(torch.cat([coarse, tile_planes(condition, resolution)], dim=1))
    return CascadeOutput(
        coarse=coarse, refined=refined, coarse_probs=coarse_probs, residue=condition
    )
