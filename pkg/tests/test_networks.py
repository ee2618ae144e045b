"""Architecture contracts: shapes, attention math, init distribution."""

import numpy as np
import pytest
import torch

from audio2image.networks import (
    ImageClassifier,
    ModelSpec,
    PatchDiscriminator,
    SelfAttention,
    UNetGenerator,
    build_classifier,
    build_discriminator,
    build_stage1_generator,
    build_stage2_generator,
    init_weights,
)


def test_model_spec_validation():
    ModelSpec(n_classes=4, resolution=32, unet_depth=3)  # valid
    with pytest.raises(ValueError):
        ModelSpec(n_classes=1, resolution=32, unet_depth=3)
    with pytest.raises(ValueError):
        ModelSpec(n_classes=4, resolution=16, unet_depth=3)  # too small
    with pytest.raises(ValueError):
        ModelSpec(n_classes=4, resolution=40, unet_depth=4)  # 40 % 16 != 0
    with pytest.raises(ValueError):
        ModelSpec(n_classes=4, resolution=32, unet_depth=2)  # too shallow


def test_attention_gate_starts_as_exact_identity():
    torch.manual_seed(0)
    layer = SelfAttention(6)
    x = torch.randn(2, 6, 5, 5)
    with torch.no_grad():
        assert float((layer(x) - x).abs().max()) == 0.0


def test_attention_matches_explicit_softmax_oracle():
    torch.manual_seed(1)
    layer = SelfAttention(4)
    with torch.no_grad():
        layer.gamma.fill_(0.7)
    x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    layer = layer.double()

    with torch.no_grad():
        q = layer.query(x).reshape(1, -1, 9).numpy()[0]  # (C', N)
        k = layer.key(x).reshape(1, -1, 9).numpy()[0]
        v = layer.value(x).reshape(1, 4, 9).numpy()[0]
    energy = q.T @ k  # (N, N), row i scores position i against all j
    energy -= energy.max(axis=1, keepdims=True)
    attn = np.exp(energy)
    attn /= attn.sum(axis=1, keepdims=True)
    assert np.allclose(attn.sum(axis=1), 1.0, atol=1e-6)

    mixed = v @ attn.T  # (C, N)
    expected = x.numpy()[0] + 0.7 * mixed.reshape(4, 3, 3)
    got = layer(x).detach().numpy()[0]
    assert np.allclose(got, expected, atol=1e-10)


def test_generator_preserves_spatial_dims_and_range():
    torch.manual_seed(0)
    g = init_weights(UNetGenerator(5, 3, base_channels=8, depth=3))
    x = torch.randn(2, 5, 64, 64)
    with torch.no_grad():
        y = g(x)
    assert y.shape == (2, 3, 64, 64)
    assert float(y.min()) >= -1.0 and float(y.max()) <= 1.0


def test_generator_depth_and_attention_flags():
    g_plain = UNetGenerator(4, 3, base_channels=4, depth=4, use_attention=False)
    assert g_plain.attn_deep is None and g_plain.attn_shallow is None
    x = torch.randn(1, 4, 32, 32)
    assert g_plain(x).shape == (1, 3, 32, 32)
    g_attn = UNetGenerator(4, 3, base_channels=4, depth=4, use_attention=True)
    assert g_attn.attn_deep is not None
    assert g_attn(x).shape == (1, 3, 32, 32)


def test_builders_wire_conditioning_channels():
    spec = ModelSpec(n_classes=4, resolution=32, base_channels=8, unet_depth=3)
    g1 = build_stage1_generator(spec)
    g2 = build_stage2_generator(spec)
    d = build_discriminator(spec)
    assert g1(torch.randn(1, 1 + 4, 32, 32)).shape == (1, 3, 32, 32)
    assert g2(torch.randn(1, 3 + 4, 32, 32)).shape == (1, 3, 32, 32)
    assert d(torch.randn(1, 4, 32, 32)).shape[2:] == (2, 2)


def test_patch_discriminator_map_sizes():
    d = PatchDiscriminator(4, base_channels=2)
    assert d(torch.randn(1, 4, 256, 256)).shape == (1, 1, 30, 30)
    assert d(torch.randn(1, 4, 32, 32)).shape == (1, 1, 2, 2)


def test_classifier_outputs():
    torch.manual_seed(0)
    clf = ImageClassifier(n_classes=5, base_channels=8)
    x = torch.randn(3, 3, 32, 32)
    with torch.no_grad():
        probs = clf(x)
        assert probs.shape == (3, 5)
        assert torch.allclose(probs.sum(dim=1), torch.ones(3), atol=1e-6)
        assert float(probs.min()) >= 0.0
        assert clf.features(x).shape == (3, 64)
        assert clf.logits(x).shape == (3, 5)


def test_feature_dim_property():
    spec = ModelSpec(n_classes=4, resolution=32, unet_depth=3, classifier_base=8)
    clf = build_classifier(spec)
    assert clf.features(torch.randn(1, 3, 32, 32)).shape[1] == spec.feature_dim


def test_init_weights_distribution():
    torch.manual_seed(0)
    g = init_weights(UNetGenerator(4, 3, base_channels=16, depth=5), mean=0.0, std=0.2)
    with torch.no_grad():
        conv_weights = torch.cat(
            [m.weight.flatten() for m in g.modules() if isinstance(m, torch.nn.Conv2d)]
        )
        n = conv_weights.numel()
        assert abs(float(conv_weights.mean())) < 3 * 0.2 / n**0.5
        assert abs(float(conv_weights.std()) - 0.2) < 0.01
        bn = [m for m in g.modules() if isinstance(m, torch.nn.BatchNorm2d)]
        bn_weights = torch.cat([m.weight.flatten() for m in bn])
        assert abs(float(bn_weights.mean()) - 1.0) < 0.1
        for m in bn:
            assert float(m.bias.abs().max()) == 0.0


def test_init_weights_leaves_attention_gate_at_zero():
    torch.manual_seed(0)
    g = init_weights(UNetGenerator(4, 3, base_channels=8, depth=3, use_attention=True))
    with torch.no_grad():
        assert float(g.attn_deep.gamma) == 0.0
        assert float(g.attn_shallow.gamma) == 0.0
        d = init_weights(PatchDiscriminator(4, base_channels=8, use_attention=True))
        assert float(d.attn_deep.gamma) == 0.0
        assert float(d.attn_shallow.gamma) == 0.0
