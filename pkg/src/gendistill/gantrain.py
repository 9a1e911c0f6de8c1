"""Stage 1: adversarial pretraining of the conditional GAN.

The discriminator maximizes log D(x|y) + log(1 - D(G(z|y)|y)); the generator
by default minimizes the non-saturating form -log D(G(z|y)|y) (the literal
min-form is available via ``saturating=True``). One discriminator step per
generator step, no gradient penalties.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import Adam

from .arch import GeneratorSpec, build_discriminator, build_generator
from .checkpoint import STAGE_PRETRAINED, GeneratorCheckpoint, checkpoint_from_models
from .data import DatasetHandle, ImageBatch, sample_mixed_batch
from .exceptions import ConfigError, NumericalDivergenceError

# named rng streams; stage 2 reuses the adversarial/data stream tags so that
# with zero matching weights its update sequence replays stage 1 exactly
STREAM_ADV = "adv"
STREAM_DATA = "data"


def derive_seed(seed: int, tag: str) -> int:
    """Stable child seed for a named rng stream."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class GanTrainConfig:
    epochs: int = 1
    iters_per_epoch: int = 100
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    noise_dim: int = 100
    label_dim: int = 10
    saturating: bool = False
    seed: int = 0

    def validate(self) -> "GanTrainConfig":
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.iters_per_epoch < 1:
            raise ConfigError("iters_per_epoch must be >= 1")
        if self.batch_size < 2:
            # generator batch norm needs at least 2 samples in train mode
            raise ConfigError("batch_size must be >= 2")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.noise_dim < 1:
            raise ConfigError("noise_dim must be >= 1")
        return self


@dataclass
class GanLossRecord:
    epoch: int
    iteration: int
    d_loss: float
    g_loss: float


def discriminator_step(disc, gen, real: ImageBatch, opt_d, rng: torch.Generator) -> float:
    """One discriminator update on a real batch plus an equal-size fake batch."""
    b = len(real)
    num_classes = gen.spec.num_classes
    z = torch.randn(b, gen.spec.noise_dim, generator=rng)
    y_fake = torch.randint(0, num_classes, (b,), generator=rng)
    with torch.no_grad():
        fake = gen(z, y_fake)
    score_real = disc(real.pixels, real.labels)
    score_fake = disc(fake, y_fake)
    if not (torch.isfinite(score_real).all() and torch.isfinite(score_fake).all()):
        raise NumericalDivergenceError("discriminator scores are not finite")
    loss = F.binary_cross_entropy(
        score_real, torch.ones_like(score_real)
    ) + F.binary_cross_entropy(score_fake, torch.zeros_like(score_fake))
    if not torch.isfinite(loss):
        raise NumericalDivergenceError("discriminator loss is not finite")
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    return loss.item()


def generator_adv_loss(gen, disc, batch_size: int, rng: torch.Generator, saturating: bool = False):
    """Adversarial generator loss on a fresh fake batch with uniform labels."""
    num_classes = gen.spec.num_classes
    z = torch.randn(batch_size, gen.spec.noise_dim, generator=rng)
    y = torch.randint(0, num_classes, (batch_size,), generator=rng)
    scores = disc(gen(z, y), y)
    if not torch.isfinite(scores).all():
        raise NumericalDivergenceError("discriminator scores are not finite")
    if saturating:
        # literal min-form: minimize log(1 - D(G(z|y)|y))
        return torch.log(1.0 - scores + 1e-12).mean()
    return F.binary_cross_entropy(scores, torch.ones_like(scores))


def generator_gan_step(gen, disc, batch_size: int, opt_g, rng: torch.Generator, saturating: bool = False) -> float:
    """One generator update against the current discriminator."""
    loss = generator_adv_loss(gen, disc, batch_size, rng, saturating)
    if not torch.isfinite(loss):
        raise NumericalDivergenceError("generator loss is not finite")
    opt_g.zero_grad()
    loss.backward()
    opt_g.step()
    return loss.item()


def run_gan_training(gen, disc, data: DatasetHandle, cfg: GanTrainConfig, record_sink=None, checkpoint_dir=None):
    """Inner training loop over pre-built networks; returns the loss records."""
    cfg.validate()
    opt_d = Adam(disc.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_g = Adam(gen.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    rng_adv = torch.Generator().manual_seed(derive_seed(cfg.seed, STREAM_ADV))
    rng_data = np.random.default_rng(derive_seed(cfg.seed, STREAM_DATA))
    gen.train()
    disc.train()
    records = []
    last_good = checkpoint_from_models(gen, disc, STAGE_PRETRAINED)
    for epoch in range(1, cfg.epochs + 1):
        for it in range(1, cfg.iters_per_epoch + 1):
            real = sample_mixed_batch(data, cfg.batch_size, rng_data)
            try:
                d_loss = discriminator_step(disc, gen, real, opt_d, rng_adv)
                g_loss = generator_gan_step(
                    gen, disc, cfg.batch_size, opt_g, rng_adv, cfg.saturating
                )
            except NumericalDivergenceError as exc:
                path = _persist_last_good(last_good, checkpoint_dir)
                raise NumericalDivergenceError(
                    f"{exc} (epoch {epoch}, iteration {it})",
                    epoch=epoch,
                    iteration=it,
                    checkpoint_path=path,
                ) from exc
            record = GanLossRecord(epoch, it, d_loss, g_loss)
            records.append(record)
            if record_sink is not None:
                record_sink(record)
        last_good = checkpoint_from_models(gen, disc, STAGE_PRETRAINED)
    return records


def _persist_last_good(ckpt: GeneratorCheckpoint, checkpoint_dir):
    if checkpoint_dir is None:
        return None
    import os

    path = os.path.join(checkpoint_dir, "last_good.ckpt")
    ckpt.save(path)
    return path


def pretrain_gan(data: DatasetHandle, cfg: GanTrainConfig, record_sink=None, checkpoint_dir=None, metadata=None) -> GeneratorCheckpoint:
    """Train a conditional GAN on ``data`` and return its checkpoint."""
    cfg.validate()
    spec = GeneratorSpec(
        noise_dim=cfg.noise_dim,
        label_dim=cfg.label_dim,
        num_classes=data.num_classes,
        output_shape=(data.channels, 32, 32),
    )
    gen = build_generator(spec, derive_seed(cfg.seed, "gen-init"))
    disc = build_discriminator(
        data.num_classes, data.channels, derive_seed(cfg.seed, "disc-init")
    )
    run_gan_training(gen, disc, data, cfg, record_sink, checkpoint_dir)
    meta = {"dataset": data.name, **(metadata or {})}
    return checkpoint_from_models(gen, disc, STAGE_PRETRAINED, metadata=meta)
