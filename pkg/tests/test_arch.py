import numpy as np
import pytest
import torch

from gendistill.arch import (
    MATCHER_ARCHS,
    GeneratorSpec,
    MatcherSpec,
    build_discriminator,
    build_generator,
    build_matcher,
    describe_architecture,
    forward_with_features,
    matcher_tap_shape,
)
from gendistill.exceptions import ConstructionError, UnsupportedArchitectureError

from conftest import params_equal


def test_generator_shape_contract():
    gen = build_generator(GeneratorSpec(output_shape=(1, 32, 32)), seed=0)
    z = torch.randn(16, 100)
    y = torch.arange(16) % 10
    out = gen(z, y)
    assert out.shape == (16, 1, 32, 32)


def test_generator_bounded_even_for_huge_noise():
    gen = build_generator(GeneratorSpec(output_shape=(3, 32, 32)), seed=1)
    z = torch.randn(8, 100) * 1e4
    out = gen(z, torch.zeros(8, dtype=torch.long))
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_generator_build_determinism():
    a = build_generator(GeneratorSpec(), seed=42)
    b = build_generator(GeneratorSpec(), seed=42)
    assert params_equal(a, b)
    c = build_generator(GeneratorSpec(), seed=43)
    assert not params_equal(a, c)


def test_generator_invalid_spec():
    with pytest.raises(ConstructionError):
        build_generator(GeneratorSpec(noise_dim=0), seed=0)
    with pytest.raises(ConstructionError):
        build_generator(GeneratorSpec(output_shape=(1, 28, 28)), seed=0)


def test_generator_label_sensitivity():
    gen = build_generator(GeneratorSpec(), seed=3)
    gen.eval()
    z = torch.randn(4, 100)
    with torch.no_grad():
        a = gen(z, torch.zeros(4, dtype=torch.long))
        b = gen(z, torch.ones(4, dtype=torch.long))
    assert (a - b).abs().max() > 0


def test_discriminator_score_range_and_determinism(toy_train):
    disc = build_discriminator(10, 1, seed=0)
    disc.eval()
    x = toy_train.images[:12]
    y = toy_train.labels[:12]
    with torch.no_grad():
        s1 = disc(x, y)
        s2 = disc(x, y)
    assert s1.shape == (12,)
    assert (s1 > 0).all() and (s1 < 1).all()
    assert torch.equal(s1, s2)


def test_discriminator_channel_mismatch():
    disc = build_discriminator(10, 1, seed=0)
    with pytest.raises(ValueError):
        disc(torch.randn(4, 3, 32, 32), torch.zeros(4, dtype=torch.long))


@pytest.mark.parametrize("arch_id", sorted(MATCHER_ARCHS))
def test_matcher_logits_and_tap(arch_id):
    spec = MatcherSpec(arch_id=arch_id, num_classes=10, input_channels=1)
    net = build_matcher(spec, seed=0)
    out = forward_with_features(net, torch.randn(4, 1, 32, 32).clamp(-1, 1))
    assert out.logits.shape == (4, 10)
    assert out.features.shape[0] == 4
    single = forward_with_features(net, torch.zeros(1, 1, 32, 32))
    assert single.logits.shape == (1, 10)


def test_matcher_build_determinism():
    spec = MatcherSpec(arch_id="convnet3", input_channels=1)
    a = build_matcher(spec, seed=3)
    b = build_matcher(spec, seed=3)
    assert params_equal(a, b)


def test_unknown_arch_rejected():
    with pytest.raises(UnsupportedArchitectureError):
        build_matcher(MatcherSpec(arch_id="densenet"), seed=0)


def test_bad_tap_rejected():
    with pytest.raises(ConstructionError):
        build_matcher(MatcherSpec(arch_id="convnet3", tap_id="block9"), seed=0)


def test_empty_batch_rejected():
    net = build_matcher(MatcherSpec(arch_id="convnet3"), seed=0)
    with pytest.raises(ValueError):
        forward_with_features(net, torch.zeros(0, 1, 32, 32))


def test_convnet3_tap_is_second_block():
    # 32 -> 16 -> 8 after two 2x2 pools at width 128
    shape = matcher_tap_shape(MatcherSpec(arch_id="convnet3", input_channels=1))
    assert shape == (128, 8, 8)


def test_resnet_tap_is_second_stage():
    shape = matcher_tap_shape(MatcherSpec(arch_id="resnet18", input_channels=3))
    assert shape == (128, 16, 16)
    shape10 = matcher_tap_shape(MatcherSpec(arch_id="resnet10", input_channels=3))
    assert shape10 == (128, 16, 16)


def test_feature_shape_stable_across_seeds_and_batches():
    spec = MatcherSpec(arch_id="vgg11", input_channels=3)
    shapes = set()
    for seed in (0, 1, 2):
        net = build_matcher(spec, seed=seed)
        for b in (2, 5):
            out = forward_with_features(net, torch.randn(b, 3, 32, 32).clamp(-1, 1))
            shapes.add(out.features.shape[1:])
    assert len(shapes) == 1


def test_describe_architecture():
    info = describe_architecture("resnet18")
    assert info["default_tap"] == "stage2"
    assert "stage4" in info["taps"]
    with pytest.raises(UnsupportedArchitectureError):
        describe_architecture("lenet")


def test_pool_draw_uniform_smallish():
    from gendistill.distill import ModelPool

    pool = ModelPool(
        members=[MatcherSpec(arch_id=a) for a in ("convnet3", "resnet10", "resnet18")]
    )
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(600):
        spec, _ = pool.draw(rng)
        counts[spec.arch_id] = counts.get(spec.arch_id, 0) + 1
    for arch in ("convnet3", "resnet10", "resnet18"):
        assert 140 < counts[arch] < 260
