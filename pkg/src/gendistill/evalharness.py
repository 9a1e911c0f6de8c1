"""Measurement protocols: train classifiers from scratch on distilled data,
test on the real test split, and aggregate repeated runs into mean/std
reports. Also drives the cross-architecture and local-weight ablation
protocols.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import Adam

from .arch import MATCHER_ARCHS, MatcherSpec, build_matcher
from .checkpoint import GeneratorCheckpoint
from .data import DatasetHandle
from .deploy import DistilledDataset, generate_distilled
from .distill import DistillConfig, ModelPool, distill
from .exceptions import ConfigError, NumericalDivergenceError, UnsupportedArchitectureError
from .gantrain import derive_seed


@dataclass
class EvalRunConfig:
    arch: str = "convnet3"
    epochs: int = 300
    lr: float = 1e-3
    batch_size: int = 256
    repeats: int = 5
    seed_base: int = 0
    early_stop_patience: int = 25
    early_stop_min_delta: float = 1e-4
    regenerate_per_repeat: bool = True  # fresh distilled set per repeat
    augment: bool = False  # optional horizontal-flip augmentation

    def validate(self) -> "EvalRunConfig":
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.arch not in MATCHER_ARCHS:
            raise UnsupportedArchitectureError(f"unknown architecture {self.arch!r}")
        return self


@dataclass
class EvalReport:
    dataset: str
    ipc: int
    arch: str
    accuracies: list = field(default_factory=list)
    mean: float = 0.0
    std: float = 0.0
    gen_seeds: list = field(default_factory=list)  # distilled-data provenance

    @classmethod
    def from_accuracies(cls, dataset, ipc, arch, accuracies, gen_seeds=None) -> "EvalReport":
        mean, std = aggregate(accuracies)
        return cls(
            dataset=dataset,
            ipc=ipc,
            arch=arch,
            accuracies=list(accuracies),
            mean=mean,
            std=std,
            gen_seeds=list(gen_seeds or []),
        )

    def recompute(self):
        """Re-derive (mean, std) from the stored per-repeat list."""
        return aggregate(self.accuracies)


def aggregate(accuracies):
    arr = np.asarray(accuracies, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def train_from_scratch(ds: DistilledDataset, arch: str, cfg: EvalRunConfig, seed: int):
    """Train a fresh classifier on distilled data only.

    Adam on cross-entropy, shuffled full passes, early stop once the epoch
    training loss stops improving. Deterministic under ``seed``.
    """
    cfg.validate()
    if len(ds) == 0:
        raise ValueError("distilled dataset is empty")
    spec = MatcherSpec(
        arch_id=arch,
        num_classes=ds.num_classes,
        input_channels=ds.images.shape[1],
    )
    net = build_matcher(spec, derive_seed(seed, "eval-init"))
    opt = Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(seed, "eval-shuffle"))
    n = len(ds)
    batch = min(cfg.batch_size, n)
    best = float("inf")
    stale = 0
    net.train()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, batch):
            idx = torch.from_numpy(perm[start : start + batch])
            x = ds.images[idx]
            if cfg.augment:
                flip = torch.from_numpy(
                    rng.random(len(idx)) < 0.5
                )
                x = torch.where(flip[:, None, None, None], x.flip(-1), x)
            loss = F.cross_entropy(net(x), ds.labels[idx])
            if not torch.isfinite(loss):
                raise NumericalDivergenceError(
                    f"evaluation training diverged (arch={arch}, epoch={epoch})",
                    epoch=epoch,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            batches += 1
        avg = epoch_loss / batches
        if avg < best - cfg.early_stop_min_delta:
            best = avg
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return net


def evaluate_accuracy(model, test: DatasetHandle) -> float:
    """Top-1 accuracy over the full test split."""
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(test), 512):
            x = test.images[start : start + 512]
            y = test.labels[start : start + 512]
            correct += int((model(x).argmax(dim=1) == y).sum())
    return correct / len(test)


def benchmark(ckpt: GeneratorCheckpoint, test: DatasetHandle, ipc: int, cfg: EvalRunConfig) -> EvalReport:
    """Repeatedly train-from-scratch on freshly generated distilled data."""
    cfg.validate()
    accuracies = []
    gen_seeds = []
    for r in range(cfg.repeats):
        tag = f"gen-{r}" if cfg.regenerate_per_repeat else "gen-0"
        gen_seed = derive_seed(cfg.seed_base, tag)
        ds = generate_distilled(ckpt, ipc, gen_seed)
        model = train_from_scratch(ds, cfg.arch, cfg, seed=derive_seed(cfg.seed_base, f"train-{r}"))
        accuracies.append(evaluate_accuracy(model, test))
        gen_seeds.append(gen_seed)
    return EvalReport.from_accuracies(test.name, ipc, cfg.arch, accuracies, gen_seeds)


def cross_architecture(ckpt: GeneratorCheckpoint, test: DatasetHandle, ipc: int, archs, cfg: EvalRunConfig):
    """Benchmark several test architectures on identical distilled-data seeds."""
    for arch in archs:
        if arch not in MATCHER_ARCHS:
            raise UnsupportedArchitectureError(f"unknown architecture {arch!r}")
    return [benchmark(ckpt, test, ipc, replace(cfg, arch=arch)) for arch in archs]


def ablate_local_weight(stage1_ckpt: GeneratorCheckpoint, train: DatasetHandle, test: DatasetHandle, ipc: int, omega_l_values, pool: ModelPool, distill_cfg: DistillConfig, eval_cfg: EvalRunConfig):
    """Re-run stage 2 per local-loss weight (global weight held fixed) and
    benchmark each resulting generator under otherwise identical seeds."""
    if not omega_l_values:
        raise ConfigError("omega_l_values must be nonempty")
    for w in omega_l_values:
        if w < 0:
            raise ConfigError(f"omega_l must be >= 0, got {w}")
    results = []
    for w in omega_l_values:
        cfg = replace(distill_cfg, omega_l=float(w))
        ckpt2 = distill(stage1_ckpt, train, pool, cfg)
        report = benchmark(ckpt2, test, ipc, eval_cfg)
        results.append((float(w), report))
    return results


def write_repeat_csv(reports, path) -> None:
    """Per-repeat rows: dataset, ipc, arch, repeat, accuracy, gen_seed."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "ipc", "arch", "repeat", "accuracy", "gen_seed"])
        for report in reports:
            for r, acc in enumerate(report.accuracies):
                seed = report.gen_seeds[r] if r < len(report.gen_seeds) else ""
                writer.writerow([report.dataset, report.ipc, report.arch, r, repr(acc), seed])


def write_summary_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "ipc", "arch", "repeats", "mean", "std"])
        for report in reports:
            writer.writerow(
                [report.dataset, report.ipc, report.arch, len(report.accuracies), repr(report.mean), repr(report.std)]
            )


def read_repeat_csv(path):
    """Rebuild EvalReports (mean/std recomputed) from a per-repeat CSV."""
    groups = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["dataset"], int(row["ipc"]), row["arch"])
            groups.setdefault(key, []).append(
                (int(row["repeat"]), float(row["accuracy"]), row.get("gen_seed", ""))
            )
    reports = []
    for (dataset, ipc, arch), rows in groups.items():
        rows.sort()
        reports.append(
            EvalReport.from_accuracies(
                dataset,
                ipc,
                arch,
                [acc for _, acc, _ in rows],
                [int(s) for _, _, s in rows if s != ""],
            )
        )
    return reports
