"""Stage 2: optimize the generator by matching global logits and local
intermediate features of real data through freshly drawn matcher networks,
while an interleaved discriminator update keeps the adversarial term alive.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch.optim import Adam

from .arch import MatcherSpec, build_matcher, forward_with_features
from .checkpoint import STAGE_DISTILLED, GeneratorCheckpoint, checkpoint_from_models
from .data import DatasetHandle, sample_class_batch, sample_mixed_batch
from .exceptions import ConfigError, NumericalDivergenceError
from .gantrain import (
    STREAM_ADV,
    STREAM_DATA,
    derive_seed,
    discriminator_step,
    generator_adv_loss,
)


@dataclass
class ModelPool:
    """Architectures from which a fresh random matcher is drawn."""

    members: list  # list[MatcherSpec]
    reinit_every: int = 1  # iterations between fresh draws

    def validate(self, channels: int = None) -> "ModelPool":
        if not self.members:
            raise ConfigError("model pool must be nonempty")
        if self.reinit_every < 1:
            raise ConfigError("reinit_every must be >= 1")
        if channels is not None:
            for spec in self.members:
                if spec.input_channels != channels:
                    raise ConfigError(
                        f"pool member {spec.arch_id} expects {spec.input_channels} "
                        f"channels but the dataset has {channels}"
                    )
        return self

    def draw(self, rng: np.random.Generator):
        """Uniformly pick a member spec and a fresh init seed."""
        if not self.members:
            raise ConfigError("model pool must be nonempty")
        idx = int(rng.integers(0, len(self.members)))
        seed = int(rng.integers(0, 2**31 - 1))
        return self.members[idx], seed


def pool_from_arch_ids(arch_ids, num_classes: int, input_channels: int, reinit_every: int = 1) -> ModelPool:
    members = [
        MatcherSpec(arch_id=a, num_classes=num_classes, input_channels=input_channels)
        for a in arch_ids
    ]
    return ModelPool(members=members, reinit_every=reinit_every)


@dataclass
class DistillConfig:
    omega_g: float = 0.01
    omega_l: float = 0.001
    batch_per_class: int = 64
    epochs: int = 1
    iters_per_epoch: int = 100
    lr: float = 2e-5  # generator rate; stage-1 default reduced 10x
    disc_lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gan_batch: int = 64  # batch for the adversarial term and disc updates
    saturating: bool = False
    seed: int = 0

    def validate(self) -> "DistillConfig":
        if self.omega_g < 0 or self.omega_l < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.batch_per_class < 1:
            raise ConfigError("batch_per_class must be >= 1")
        if self.epochs < 1 or self.iters_per_epoch < 1:
            raise ConfigError("epochs and iters_per_epoch must be >= 1")
        if self.lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.gan_batch < 2:
            # generator batch norm needs at least 2 samples in train mode
            raise ConfigError("gan_batch must be >= 2")
        return self

    @property
    def matching_active(self) -> bool:
        return self.omega_g > 0 or self.omega_l > 0


@dataclass
class MatchLossBreakdown:
    epoch: int
    iteration: int
    arch_id: str  # None when no matcher was involved
    global_loss: float
    local_loss: float
    cgan_loss: float
    total: float


@dataclass
class DistillStreams:
    """Named rng streams; adversarial/data tags are shared with stage 1."""

    adv: torch.Generator
    data: np.random.Generator
    match_noise: torch.Generator
    match_data: np.random.Generator
    pool: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "DistillStreams":
        return cls(
            adv=torch.Generator().manual_seed(derive_seed(seed, STREAM_ADV)),
            data=np.random.default_rng(derive_seed(seed, STREAM_DATA)),
            match_noise=torch.Generator().manual_seed(derive_seed(seed, "match-noise")),
            match_data=np.random.default_rng(derive_seed(seed, "match-data")),
            pool=np.random.default_rng(derive_seed(seed, "pool")),
        )


def global_loss(logits_s: torch.Tensor, logits_t: torch.Tensor) -> torch.Tensor:
    """Sum of squared differences between aligned synthetic and real logits."""
    if logits_s.shape != logits_t.shape:
        raise ValueError(
            f"logit shape mismatch: {tuple(logits_s.shape)} vs {tuple(logits_t.shape)}"
        )
    return ((logits_s - logits_t) ** 2).sum()


def local_loss(feat_s: torch.Tensor, feat_t: torch.Tensor) -> torch.Tensor:
    """Sum of squared differences between aligned tap-layer features."""
    if feat_s.shape != feat_t.shape:
        raise ValueError(
            f"feature shape mismatch: {tuple(feat_s.shape)} vs {tuple(feat_t.shape)}"
        )
    return ((feat_s - feat_t) ** 2).sum()


def total_loss(global_term, local_term, cgan_term, omega_g: float, omega_l: float):
    """Weighted combination of the matching terms with the adversarial term."""
    return omega_g * global_term + omega_l * local_term + cgan_term


def draw_matcher(pool: ModelPool, rng: np.random.Generator):
    """Draw a freshly initialized, frozen matcher from the pool."""
    spec, seed = pool.draw(rng)
    net = build_matcher(spec, seed)
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def _matching_terms(gen, matcher, data: DatasetHandle, cfg: DistillConfig, streams: DistillStreams):
    """Per-class logit and feature matching sums over all K classes.

    Synthetic images for all classes come from one generator forward (the
    class-major batch keeps generator batch norm valid even at B = 1); the
    matcher then sees aligned per-class batches from both sides.
    """
    b = cfg.batch_per_class
    k_total = data.num_classes
    real_batches = [
        sample_class_batch(data, k, b, streams.match_data) for k in range(k_total)
    ]
    z = torch.randn(k_total * b, gen.spec.noise_dim, generator=streams.match_noise)
    y = torch.arange(k_total, dtype=torch.long).repeat_interleave(b)
    synth = gen(z, y)
    g_sum = torch.zeros(())
    l_sum = torch.zeros(())
    matcher.train()  # per-batch normalization statistics
    for k, real in enumerate(real_batches):
        out_s = forward_with_features(matcher, synth[k * b : (k + 1) * b])
        with torch.no_grad():
            out_t = forward_with_features(matcher, real.pixels)
        g_sum = g_sum + global_loss(out_s.logits, out_t.logits)
        l_sum = l_sum + local_loss(out_s.features, out_t.features)
    return g_sum, l_sum


def distill_step(gen, disc, matcher, data: DatasetHandle, cfg: DistillConfig, streams: DistillStreams, opt_g, epoch: int = 0, iteration: int = 0) -> MatchLossBreakdown:
    """One generator update on the combined matching + adversarial objective.

    The matcher is read-only; with both weights zero the update reduces to a
    plain adversarial generator step on the shared rng stream.
    """
    cgan = generator_adv_loss(gen, disc, cfg.gan_batch, streams.adv, cfg.saturating)
    if cfg.matching_active:
        if matcher is None:
            raise ConfigError("matching weights are nonzero but no matcher was drawn")
        g_term, l_term = _matching_terms(gen, matcher, data, cfg, streams)
        total = total_loss(g_term, l_term, cgan, cfg.omega_g, cfg.omega_l)
    else:
        g_term = torch.zeros(())
        l_term = torch.zeros(())
        total = cgan
    if not torch.isfinite(total):
        raise NumericalDivergenceError("total distillation loss is not finite")
    opt_g.zero_grad()
    total.backward()
    opt_g.step()
    g_val = float(g_term.detach())
    l_val = float(l_term.detach())
    c_val = float(cgan.detach())
    return MatchLossBreakdown(
        epoch=epoch,
        iteration=iteration,
        arch_id=None if matcher is None else _arch_id_of(matcher),
        global_loss=g_val,
        local_loss=l_val,
        cgan_loss=c_val,
        # recorded in float64 from the recorded parts so the bookkeeping
        # identity holds exactly; the fp32 optimizer loss may differ in ulp
        total=cfg.omega_g * g_val + cfg.omega_l * l_val + c_val,
    )


def _arch_id_of(matcher) -> str:
    from .arch import MATCHER_ARCHS

    for arch_id, cls in MATCHER_ARCHS.items():
        if type(matcher) is cls:
            return arch_id
    return type(matcher).__name__.lower()


def run_distillation(gen, disc, data: DatasetHandle, pool: ModelPool, cfg: DistillConfig, record_sink=None, checkpoint_dir=None):
    """Inner distillation loop over pre-built networks; returns loss records."""
    cfg.validate()
    if cfg.matching_active:
        pool.validate(channels=data.channels)
    opt_g = Adam(gen.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = Adam(disc.parameters(), lr=cfg.disc_lr, betas=(cfg.beta1, cfg.beta2))
    streams = DistillStreams.from_seed(cfg.seed)
    gen.train()
    disc.train()
    records = []
    matcher = None
    step_index = 0
    last_good = checkpoint_from_models(gen, disc, STAGE_DISTILLED)
    for epoch in range(1, cfg.epochs + 1):
        for it in range(1, cfg.iters_per_epoch + 1):
            real = sample_mixed_batch(data, cfg.gan_batch, streams.data)
            try:
                discriminator_step(disc, gen, real, opt_d, streams.adv)
                if cfg.matching_active and step_index % pool.reinit_every == 0:
                    matcher = draw_matcher(pool, streams.pool)
                breakdown = distill_step(
                    gen, disc, matcher, data, cfg, streams, opt_g, epoch, it
                )
            except NumericalDivergenceError as exc:
                path = _persist_last_good(last_good, checkpoint_dir)
                raise NumericalDivergenceError(
                    f"{exc} (epoch {epoch}, iteration {it})",
                    epoch=epoch,
                    iteration=it,
                    checkpoint_path=path,
                ) from exc
            step_index += 1
            records.append(breakdown)
            if record_sink is not None:
                record_sink(breakdown)
        last_good = checkpoint_from_models(gen, disc, STAGE_DISTILLED)
    return records


def _persist_last_good(ckpt: GeneratorCheckpoint, checkpoint_dir):
    if checkpoint_dir is None:
        return None
    import os

    path = os.path.join(checkpoint_dir, "last_good.ckpt")
    ckpt.save(path)
    return path


def distill(ckpt: GeneratorCheckpoint, data: DatasetHandle, pool: ModelPool, cfg: DistillConfig, record_sink=None, checkpoint_dir=None, metadata=None) -> GeneratorCheckpoint:
    """Run stage 2 from a stage-1 checkpoint and return the optimized checkpoint."""
    gen = ckpt.build_generator()
    disc = ckpt.build_discriminator()
    run_distillation(gen, disc, data, pool, cfg, record_sink, checkpoint_dir)
    meta = {
        "dataset": data.name,
        "omega_g": cfg.omega_g,
        "omega_l": cfg.omega_l,
        **(metadata or {}),
    }
    return checkpoint_from_models(gen, disc, STAGE_DISTILLED, metadata=meta)
