import copy
import math

import numpy as np
import pytest
import torch
from torch.optim import Adam

from gendistill.arch import GeneratorSpec, MatcherSpec, build_discriminator, build_generator
from gendistill.data import sample_class_batch
from gendistill.distill import (
    DistillConfig,
    DistillStreams,
    ModelPool,
    distill_step,
    draw_matcher,
    pool_from_arch_ids,
    run_distillation,
)
from gendistill.exceptions import ConfigError, InsufficientSamplesError
from gendistill.gantrain import GanTrainConfig, run_gan_training

from conftest import param_hash, params_equal
from tinynets import TinyDisc, TinyMatcher, fixture_total_loss


def make_models(noise_dim=16, seed=0, channels=1):
    gen = build_generator(
        GeneratorSpec(noise_dim=noise_dim, output_shape=(channels, 32, 32)), seed=seed
    )
    disc = build_discriminator(10, channels, seed=seed + 1)
    return gen, disc


def test_config_validation():
    with pytest.raises(ConfigError):
        DistillConfig(omega_g=-0.1).validate()
    with pytest.raises(ConfigError):
        DistillConfig(omega_l=-1).validate()
    with pytest.raises(ConfigError):
        DistillConfig(batch_per_class=0).validate()
    with pytest.raises(ConfigError):
        DistillConfig(epochs=0).validate()
    DistillConfig().validate()


def test_empty_pool_rejected():
    with pytest.raises(ConfigError):
        ModelPool(members=[]).validate()
    with pytest.raises(ConfigError):
        ModelPool(members=[]).draw(np.random.default_rng(0))


def test_pool_channel_mismatch_rejected(toy_train):
    pool = pool_from_arch_ids(["convnet3"], 10, input_channels=3)
    gen, disc = make_models()
    cfg = DistillConfig(epochs=1, iters_per_epoch=1, batch_per_class=2, gan_batch=4)
    with pytest.raises(ConfigError):
        run_distillation(gen, disc, toy_train, pool, cfg)


def test_draw_matcher_fresh_and_deterministic():
    pool = pool_from_arch_ids(["convnet3"], 10, 1)
    rng = np.random.default_rng(3)
    a = draw_matcher(pool, rng)
    b = draw_matcher(pool, rng)
    assert type(a).__name__ == "ConvNet3"
    assert not params_equal(a, b)  # fresh parameters each draw
    assert all(not p.requires_grad for p in a.parameters())
    c = draw_matcher(pool, np.random.default_rng(3))
    d = draw_matcher(pool, np.random.default_rng(3))
    assert params_equal(c, d)  # same rng state -> same arch and parameters


def test_distill_step_keeps_matcher_frozen(toy_train):
    gen, disc = make_models()
    pool = pool_from_arch_ids(["convnet3"], 10, 1)
    matcher = draw_matcher(pool, np.random.default_rng(0))
    cfg = DistillConfig(batch_per_class=2, gan_batch=4, epochs=1, iters_per_epoch=1, lr=1e-3)
    streams = DistillStreams.from_seed(0)
    opt_g = Adam(gen.parameters(), lr=cfg.lr)
    before = param_hash(matcher)
    gen_before = param_hash(gen)
    breakdown = distill_step(gen, disc, matcher, toy_train, cfg, streams, opt_g)
    assert param_hash(matcher) == before
    assert param_hash(gen) != gen_before
    assert breakdown.global_loss >= 0 and breakdown.local_loss >= 0
    assert breakdown.total == pytest.approx(
        cfg.omega_g * breakdown.global_loss
        + cfg.omega_l * breakdown.local_loss
        + breakdown.cgan_loss,
        rel=1e-9,
    )


def test_distill_step_insufficient_class_samples(toy_train):
    gen, disc = make_models()
    pool = pool_from_arch_ids(["convnet3"], 10, 1)
    matcher = draw_matcher(pool, np.random.default_rng(0))
    cfg = DistillConfig(batch_per_class=10_000, gan_batch=4, epochs=1, iters_per_epoch=1)
    streams = DistillStreams.from_seed(0)
    with pytest.raises(InsufficientSamplesError):
        distill_step(gen, disc, matcher, toy_train, cfg, streams, Adam(gen.parameters(), lr=1e-3))


def test_zero_weights_reduce_to_gan_updates(toy_train):
    # 10 stage-2 updates with zero matching weights == 10 stage-1 GAN updates
    seed = 17
    gen0, disc0 = make_models(seed=4)
    gen_a, disc_a = copy.deepcopy(gen0), copy.deepcopy(disc0)
    gen_b, disc_b = copy.deepcopy(gen0), copy.deepcopy(disc0)

    gan_cfg = GanTrainConfig(
        epochs=1, iters_per_epoch=10, batch_size=8, lr=2e-4, noise_dim=16, seed=seed
    )
    run_gan_training(gen_a, disc_a, toy_train, gan_cfg)

    distill_cfg = DistillConfig(
        omega_g=0.0,
        omega_l=0.0,
        epochs=1,
        iters_per_epoch=10,
        gan_batch=8,
        lr=2e-4,
        disc_lr=2e-4,
        seed=seed,
    )
    run_distillation(gen_b, disc_b, toy_train, None, distill_cfg)

    assert params_equal(gen_a, gen_b)
    assert params_equal(disc_a, disc_b)


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    matcher = TinyMatcher(seed=1)
    disc = TinyDisc(seed=2)
    omega_g, omega_l = 0.01, 0.001
    k, b = 2, 2
    synth = torch.randn(k * b, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    real = torch.randn(k * b, 1, 8, 8, dtype=torch.float64)

    loss = fixture_total_loss(synth, real, matcher, disc, omega_g, omega_l)
    (analytic,) = torch.autograd.grad(loss, synth)

    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(20):
        idx = tuple(int(rng.integers(0, s)) for s in synth.shape)
        probe = synth.detach().clone()
        probe[idx] += h
        up = fixture_total_loss(probe, real, matcher, disc, omega_g, omega_l).item()
        probe[idx] -= 2 * h
        down = fixture_total_loss(probe, real, matcher, disc, omega_g, omega_l).item()
        numeric = (up - down) / (2 * h)
        assert numeric == pytest.approx(analytic[idx].item(), rel=1e-5, abs=1e-10)


def test_run_distillation_smoke(toy_train):
    gen, disc = make_models(seed=8)
    before = param_hash(gen)
    pool = pool_from_arch_ids(["convnet3"], 10, 1)
    cfg = DistillConfig(
        batch_per_class=2, gan_batch=4, epochs=1, iters_per_epoch=5, lr=1e-3, seed=2
    )
    records = run_distillation(gen, disc, toy_train, pool, cfg)
    assert len(records) == 5
    assert param_hash(gen) != before
    for r in records:
        assert math.isfinite(r.total)
        assert r.arch_id == "convnet3"
        assert r.total == pytest.approx(
            cfg.omega_g * r.global_loss + cfg.omega_l * r.local_loss + r.cgan_loss,
            rel=1e-9,
        )


def test_matcher_reinit_schedule(toy_train):
    # reinit_every=2 -> matcher identity changes every other iteration
    drawn = []
    import gendistill.distill as dd

    original = dd.draw_matcher

    def tracking_draw(pool, rng):
        net = original(pool, rng)
        drawn.append(net)
        return net

    dd.draw_matcher = tracking_draw
    try:
        gen, disc = make_models(seed=6)
        pool = pool_from_arch_ids(["convnet3"], 10, 1, reinit_every=2)
        cfg = DistillConfig(batch_per_class=2, gan_batch=4, epochs=1, iters_per_epoch=6, lr=1e-3)
        run_distillation(gen, disc, toy_train, pool, cfg)
    finally:
        dd.draw_matcher = original
    assert len(drawn) == 3
