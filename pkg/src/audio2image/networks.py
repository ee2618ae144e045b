"""Network architectures: U-Net generators, patch discriminator, classifier.

Both generators share one U-Net shape; conditioning enters as extra input
channels (tiled label planes next to the spectrogram or the coarse image).
Self-attention layers sit in front of the last two convolutions of the
generators' decoders and of the discriminators, and start as exact identity
maps because their mixing weight is zero at init.
"""

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class ModelSpec:
    """Shape parameters shared by every network in one run."""

    n_classes: int
    resolution: int = 256
    base_channels: int = 64
    unet_depth: int = 6
    use_attention: bool = True
    classifier_base: int = 16

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.resolution < 32:
            raise ValueError("resolution below 32 leaves no room for the patch critic")
        if self.unet_depth < 3:
            raise ValueError("unet_depth must be at least 3")
        if self.resolution % (1 << self.unet_depth) != 0:
            raise ValueError(
                f"resolution {self.resolution} is not divisible by "
                f"2**{self.unet_depth}; the encoder cannot halve it cleanly"
            )
        if self.base_channels < 1 or self.classifier_base < 1:
            raise ValueError("channel counts must be positive")

    @property
    def feature_dim(self):
        """Width of the classifier's penultimate features."""
        return 8 * self.classifier_base


class SelfAttention(nn.Module):
    """Spatial self-attention with a learned residual gate.

    The gate starts at zero, so a freshly built layer is an identity map and
    attention strength is learned from scratch.
    """

    def __init__(self, channels):
        super().__init__()
        inner = max(channels // 8, 1)
        self.query = nn.Conv2d(channels, inner, kernel_size=1)
        self.key = nn.Conv2d(channels, inner, kernel_size=1)
        self.value = nn.Conv2d(channels, channels, kernel_size=1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        b, c, h, w = x.shape
        n = h * w
        q = self.query(x).reshape(b, -1, n).permute(0, 2, 1)  # (B, N, C')
        k = self.key(x).reshape(b, -1, n)  # (B, C', N)
        attn = torch.softmax(torch.bmm(q, k), dim=-1)  # rows sum to 1
        v = self.value(x).reshape(b, c, n)  # (B, C, N)
        out = torch.bmm(v, attn.permute(0, 2, 1)).reshape(b, c, h, w)
        return x + self.gamma * out


def _encoder_channels(base, depth):
    # halve spatial, grow channels, capped at 8x base as in deep U-Nets
    return [base * min(2**i, 8) for i in range(depth)]


class UNetGenerator(nn.Module):
    """Encoder-decoder with skip connections and a Tanh output in [-1, 1].

    All convolutions are 4x4. Encoder blocks downsample by 2 with
    LeakyReLU(0.2); decoder blocks upsample by 2 with ReLU. Batch norm is
    applied everywhere except the first encoder block, the innermost block,
    and the output layer.
    """

    def __init__(self, in_channels, out_channels, base_channels, depth, use_attention=True):
        super().__init__()
        self.depth = depth
        chans = _encoder_channels(base_channels, depth)

        downs = []
        for i in range(depth):
            prev = in_channels if i == 0 else chans[i - 1]
            layers = []
            if i > 0:
                layers.append(nn.LeakyReLU(0.2, inplace=True))
            layers.append(nn.Conv2d(prev, chans[i], 4, stride=2, padding=1))
            if 0 < i < depth - 1:
                layers.append(nn.BatchNorm2d(chans[i]))
            downs.append(nn.Sequential(*layers))
        self.downs = nn.ModuleList(downs)

        ups = []
        for i in range(depth - 2, -1, -1):
            prev = chans[depth - 1] if i == depth - 2 else 2 * chans[i + 1]
            ups.append(
                nn.Sequential(
                    nn.ReLU(inplace=True),
                    nn.ConvTranspose2d(prev, chans[i], 4, stride=2, padding=1),
                    nn.BatchNorm2d(chans[i]),
                )
            )
        self.ups = nn.ModuleList(ups)  # ordered innermost first

        self.attn_deep = SelfAttention(2 * chans[1]) if use_attention else None
        self.attn_shallow = SelfAttention(2 * chans[0]) if use_attention else None
        self.final = nn.Sequential(
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * chans[0], out_channels, 4, stride=2, padding=1),
            nn.Tanh(),
        )

    def forward(self, x):
        feats = []
        for down in self.downs:
            x = down(x)
            feats.append(x)
        x = feats[-1]
        for step, up in enumerate(self.ups):
            level = self.depth - 2 - step  # encoder level this up restores
            if level == 0 and self.attn_deep is not None:
                x = self.attn_deep(x)
            x = up(x)
            x = torch.cat([x, feats[level]], dim=1)
        if self.attn_shallow is not None:
            x = self.attn_shallow(x)
        return self.final(x)


class PatchDiscriminator(nn.Module):
    """Convolutional critic emitting one realness logit per receptive patch.

    Three stride-2 blocks then two stride-1 blocks; a 256 input yields a
    30x30 logit map, a 32 input a 2x2 map.
    """

    def __init__(self, in_channels, base_channels, use_attention=True):
        super().__init__()
        b = base_channels
        self.front = nn.Sequential(
            nn.Conv2d(in_channels, b, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(b, 2 * b, 4, stride=2, padding=1),
            nn.BatchNorm2d(2 * b),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, stride=2, padding=1),
            nn.BatchNorm2d(4 * b),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.attn_deep = SelfAttention(4 * b) if use_attention else None
        self.penultimate = nn.Sequential(
            nn.Conv2d(4 * b, 8 * b, 4, stride=1, padding=1),
            nn.BatchNorm2d(8 * b),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.attn_shallow = SelfAttention(8 * b) if use_attention else None
        self.head = nn.Conv2d(8 * b, 1, 4, stride=1, padding=1)

    def forward(self, x):
        x = self.front(x)
        if self.attn_deep is not None:
            x = self.attn_deep(x)
        x = self.penultimate(x)
        if self.attn_shallow is not None:
            x = self.attn_shallow(x)
        return self.head(x)


class _ResBlock(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1),
            nn.BatchNorm2d(out_channels),
        )
        self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=2)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.body(x) + self.skip(x))


class ImageClassifier(nn.Module):
    """Small residual CNN over [-1, 1] RGB images.

    ``forward`` returns class probabilities (softmax applied); use ``logits``
    for training and ``features`` for the pooled penultimate representation.
    """

    def __init__(self, n_classes, base_channels=16):
        super().__init__()
        b = base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, b, 3, stride=1, padding=1),
            nn.BatchNorm2d(b),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(
            _ResBlock(b, 2 * b),
            _ResBlock(2 * b, 4 * b),
            _ResBlock(4 * b, 8 * b),
            _ResBlock(8 * b, 8 * b),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(8 * b, n_classes)

    def features(self, x):
        x = self.blocks(self.stem(x))
        return self.pool(x).flatten(1)

    def logits(self, x):
        return self.fc(self.features(x))

    def forward(self, x):
        return torch.softmax(self.logits(x), dim=1)


def init_weights(net, mean=0.0, std=0.2):
    """Gaussian init for conv and linear weights; batch norm scales around 1.

    Operates on module weights only, so attention gates keep their zero init.
    """

    def apply_fn(module):
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(module.weight, mean, std)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.normal_(module.weight, 1.0, std)
            nn.init.zeros_(module.bias)

    net.apply(apply_fn)
    return net


def build_stage1_generator(spec: ModelSpec) -> UNetGenerator:
    """Spectrogram plane plus tiled audio label -> coarse image."""
    return UNetGenerator(
        1 + spec.n_classes, 3, spec.base_channels, spec.unet_depth, spec.use_attention
    )


def build_stage2_generator(spec: ModelSpec) -> UNetGenerator:
    """Coarse image plus tiled residue label -> refined image."""
    return UNetGenerator(
        3 + spec.n_classes, 3, spec.base_channels, spec.unet_depth, spec.use_attention
    )


def build_discriminator(spec: ModelSpec) -> PatchDiscriminator:
    """Critic over a spectrogram plane concatenated with an image."""
    return PatchDiscriminator(1 + 3, spec.base_channels, spec.use_attention)


def build_classifier(spec: ModelSpec) -> ImageClassifier:
    return ImageClassifier(spec.n_classes, spec.classifier_base)
