"""Stage 3: synthesize distilled datasets of arbitrary IPC from a saved
generator, with zero parameter updates, and persist them losslessly.

Distilled archive layout (all integers little-endian):

    bytes 0..3    magic b"GDDS"
    bytes 4..7    u32 version (currently 1)
    bytes 8..11   u32 image count N (= ipc * num_classes)
    bytes 12..15  u32 channels C
    bytes 16..19  u32 height H
    bytes 20..23  u32 width W
    bytes 24..27  u32 dtype code (1 = float32)
    bytes 28..35  u64 provenance JSON length P
    bytes 36..    provenance JSON (utf-8, P bytes)
    then          image payload, N*C*H*W float32 little-endian
    then          label payload, N int64 little-endian
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import GeneratorCheckpoint
from .exceptions import CheckpointError

ARCHIVE_MAGIC = b"GDDS"
ARCHIVE_VERSION = 1
_DTYPE_FLOAT32 = 1

_GENERATION_CHUNK = 512  # generator forward batch; eval-mode BN makes chunking size-invariant


@dataclass
class DistilledDataset:
    """A class-balanced synthetic dataset with generation provenance."""

    images: torch.Tensor  # (ipc*K, C, 32, 32) float32 in [-1, 1]
    labels: torch.Tensor  # (ipc*K,) int64, ipc entries per class
    provenance: dict  # checkpoint id, seed, ipc, ...

    @property
    def num_classes(self) -> int:
        return int(self.provenance["num_classes"])

    @property
    def ipc(self) -> int:
        return int(self.provenance["ipc"])

    def __len__(self) -> int:
        return self.images.shape[0]


def generate_distilled(ckpt: GeneratorCheckpoint, ipc: int, seed: int) -> DistilledDataset:
    """Generate ``ipc`` images per class by one pass of the saved generator.

    Deterministic under ``seed``; performs no parameter updates.
    """
    if ipc < 1:
        raise ValueError("ipc must be >= 1")
    gen = ckpt.build_generator()
    gen.eval()
    spec = gen.spec
    k = spec.num_classes
    n = ipc * k
    rng = torch.Generator().manual_seed(seed)
    z = torch.randn(n, spec.noise_dim, generator=rng)
    labels = torch.arange(k, dtype=torch.long).repeat_interleave(ipc)
    chunks = []
    with torch.no_grad():
        for start in range(0, n, _GENERATION_CHUNK):
            stop = min(start + _GENERATION_CHUNK, n)
            chunks.append(gen(z[start:stop], labels[start:stop]))
    images = torch.cat(chunks)
    provenance = {
        "checkpoint": ckpt.digest(),
        "stage": ckpt.stage,
        "dataset": ckpt.metadata.get("dataset"),
        "seed": int(seed),
        "ipc": int(ipc),
        "num_classes": k,
    }
    return DistilledDataset(images=images, labels=labels, provenance=provenance)


def export_distilled(ds: DistilledDataset, path: str, format: str = "archive"):
    """Write a distilled dataset to disk.

    ``format="archive"`` writes the lossless binary container described in
    the module docstring; ``format="grid"`` writes a classes-by-ipc PNG grid.
    """
    if format == "archive":
        with open(path, "wb") as f:
            f.write(archive_bytes(ds))
        return path
    if format == "grid":
        from .report import GridLayout, render_grid

        render_grid(ds, GridLayout(), path)
        return path
    raise ValueError(f"unknown export format {format!r}; use 'archive' or 'grid'")


def archive_bytes(ds: DistilledDataset) -> bytes:
    n, c, h, w = ds.images.shape
    prov = json.dumps(ds.provenance, sort_keys=True).encode("utf-8")
    header = ARCHIVE_MAGIC + struct.pack(
        "<IIIIII", ARCHIVE_VERSION, n, c, h, w, _DTYPE_FLOAT32
    ) + struct.pack("<Q", len(prov))
    images = ds.images.detach().cpu().numpy().astype("<f4", copy=False).tobytes()
    labels = ds.labels.detach().cpu().numpy().astype("<i8", copy=False).tobytes()
    return header + prov + images + labels


def import_distilled(path: str) -> DistilledDataset:
    """Read back a distilled archive written by :func:`export_distilled`."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read archive {path}: {exc}") from exc
    if len(raw) < 36 or raw[:4] != ARCHIVE_MAGIC:
        raise CheckpointError("not a distilled archive (bad magic)")
    version, n, c, h, w, dtype_code = struct.unpack("<IIIIII", raw[4:28])
    if version != ARCHIVE_VERSION:
        raise CheckpointError(f"unsupported archive version {version}")
    if dtype_code != _DTYPE_FLOAT32:
        raise CheckpointError(f"unsupported archive dtype code {dtype_code}")
    (prov_len,) = struct.unpack("<Q", raw[28:36])
    offset = 36
    try:
        provenance = json.loads(raw[offset : offset + prov_len].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt provenance block: {exc}") from exc
    offset += prov_len
    image_bytes = n * c * h * w * 4
    label_bytes = n * 8
    if len(raw) != offset + image_bytes + label_bytes:
        raise CheckpointError("archive payload size mismatch")
    images = np.frombuffer(raw, dtype="<f4", count=n * c * h * w, offset=offset)
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=offset + image_bytes)
    return DistilledDataset(
        images=torch.from_numpy(images.reshape(n, c, h, w).copy()),
        labels=torch.from_numpy(labels.copy()),
        provenance=provenance,
    )
