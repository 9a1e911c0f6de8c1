"""Benchmark dataset loading and class-conditional batch sampling.

Supported datasets: MNIST, Fashion-MNIST (IDX binary format) and CIFAR-10
(binary batch files). Images are decoded, resized to 32x32 where needed, and
normalized to [-1, 1] with a single global affine so they are directly
comparable to tanh generator output. Grayscale datasets stay single-channel.
"""
from __future__ import annotations

import gzip
import os
import struct
import urllib.request
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import (
    DatasetLoadError,
    EmptyDatasetError,
    InsufficientSamplesError,
    UnsupportedDatasetError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

NUM_CLASSES = 10
IMAGE_SIZE = 32

DATASET_CHANNELS = {"mnist": 1, "fashion_mnist": 1, "cifar10": 3}

# standard published file names per split
_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_CIFAR_FILES = {
    "train": ["data_batch_%d.bin" % i for i in range(1, 6)],
    "test": ["test_batch.bin"],
}

_DOWNLOAD_URLS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
_CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def normalize_pixels(unit: torch.Tensor) -> torch.Tensor:
    """Map pixel values from [0, 1] to [-1, 1]."""
    return unit * 2.0 - 1.0


def denormalize_pixels(signed: torch.Tensor) -> torch.Tensor:
    """Map pixel values from [-1, 1] back to [0, 1]."""
    return (signed + 1.0) / 2.0


@dataclass
class ImageBatch:
    """A batch of images with per-image class labels."""

    pixels: torch.Tensor  # (B, C, 32, 32) float32 in [-1, 1]
    labels: torch.Tensor  # (B,) int64 in [0, num_classes)

    def validate(self, num_classes: int = NUM_CLASSES) -> "ImageBatch":
        if self.pixels.ndim != 4 or self.pixels.shape[0] == 0:
            raise ValueError("batch must be non-empty with shape (B, C, H, W)")
        if self.pixels.shape[0] != self.labels.shape[0]:
            raise ValueError("pixels/labels batch size mismatch")
        if self.pixels.min() < -1.0 - 1e-6 or self.pixels.max() > 1.0 + 1e-6:
            raise ValueError("pixel values must lie in [-1, 1]")
        if self.labels.min() < 0 or self.labels.max() >= num_classes:
            raise ValueError("labels must be valid class indices")
        return self

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass
class DatasetHandle:
    """An immutable, fully decoded dataset split."""

    name: str
    split: str
    images: torch.Tensor  # (N, C, 32, 32) float32 in [-1, 1]
    labels: torch.Tensor  # (N,) int64
    num_classes: int = NUM_CLASSES
    _class_indices: list = field(default=None, repr=False)

    def __post_init__(self):
        if self._class_indices is None:
            labels = self.labels.numpy()
            self._class_indices = [
                np.flatnonzero(labels == k) for k in range(self.num_classes)
            ]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_count(self, k: int) -> int:
        return len(self._class_indices[k])


def _read_idx_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise DatasetLoadError(f"cannot read {path}: {exc}") from exc


def _find_file(directory: str, basename: str) -> str:
    for candidate in (basename + ".gz", basename):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise DatasetLoadError(
        f"missing dataset file {basename}[.gz] under {directory}"
    )


def _parse_idx_images(raw: bytes, path: str) -> np.ndarray:
    if len(raw) < 16:
        raise DatasetLoadError(f"{path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DatasetLoadError(f"{path}: bad IDX image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DatasetLoadError(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def _parse_idx_labels(raw: bytes, path: str) -> np.ndarray:
    if len(raw) < 8:
        raise DatasetLoadError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABEL_MAGIC:
        raise DatasetLoadError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) != 8 + count:
        raise DatasetLoadError(f"{path}: expected {8 + count} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def _load_idx_split(directory: str, split: str):
    image_name, label_name = _IDX_FILES[split]
    images = _parse_idx_images(
        _read_idx_bytes(_find_file(directory, image_name)), image_name
    )
    labels = _parse_idx_labels(
        _read_idx_bytes(_find_file(directory, label_name)), label_name
    )
    if images.shape[0] != labels.shape[0]:
        raise DatasetLoadError(
            f"{directory}: image/label count mismatch "
            f"({images.shape[0]} vs {labels.shape[0]})"
        )
    return images[:, None, :, :], labels  # (N, 1, H, W)


def _load_cifar_split(directory: str, split: str):
    # each record: 1 label byte + 3072 pixel bytes (3 channel planes of 1024)
    record = 1 + 3 * 1024
    images, labels = [], []
    for basename in _CIFAR_FILES[split]:
        path = os.path.join(directory, basename)
        if not os.path.exists(path):
            alt = os.path.join(directory, "cifar-10-batches-bin", basename)
            if os.path.exists(alt):
                path = alt
            else:
                raise DatasetLoadError(f"missing CIFAR-10 batch file {basename} under {directory}")
        raw = _read_idx_bytes(path)
        if len(raw) % record != 0:
            raise DatasetLoadError(f"{path}: size {len(raw)} is not a multiple of {record}")
        data = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(data[:, 0])
        images.append(data[:, 1:].reshape(-1, 3, 32, 32))
    return np.concatenate(images), np.concatenate(labels)


def load_dataset(name: str, split: str, data_dir: str) -> DatasetHandle:
    """Load one split of a benchmark dataset from its published binary files.

    Expects the files under ``data_dir/<name>/`` (see README for the exact
    layout). Pixels come out as float32 in [-1, 1] at 32x32; MNIST-family
    images are bilinearly resized from 28x28. Ordering is the file order, so
    repeated loads are identical.
    """
    if name not in DATASET_CHANNELS:
        raise UnsupportedDatasetError(f"unsupported dataset {name!r}")
    if split not in ("train", "test"):
        raise UnsupportedDatasetError(f"unsupported split {split!r}")
    directory = os.path.join(data_dir, name)
    if name == "cifar10":
        images_u8, labels_u8 = _load_cifar_split(directory, split)
    else:
        images_u8, labels_u8 = _load_idx_split(directory, split)
    if labels_u8.size and labels_u8.max() >= NUM_CLASSES:
        raise DatasetLoadError(f"{name}/{split}: label out of range")

    images = torch.from_numpy(images_u8.copy()).float() / 255.0
    if images.shape[-1] != IMAGE_SIZE:
        images = F.interpolate(
            images, size=(IMAGE_SIZE, IMAGE_SIZE), mode="bilinear", align_corners=False
        )
        images = images.clamp_(0.0, 1.0)
    images = normalize_pixels(images)
    labels = torch.from_numpy(labels_u8.copy()).long()
    return DatasetHandle(name=name, split=split, images=images, labels=labels)


def sample_class_batch(
    handle: DatasetHandle, k: int, b: int, rng: np.random.Generator
) -> ImageBatch:
    """Sample ``b`` images of class ``k`` without replacement within the call."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if not 0 <= k < handle.num_classes:
        raise ValueError(f"class index {k} out of range")
    population = handle._class_indices[k]
    if b > len(population):
        raise InsufficientSamplesError(
            f"class {k} has {len(population)} examples, requested {b}"
        )
    idx = rng.choice(population, size=b, replace=False)
    return ImageBatch(
        pixels=handle.images[idx], labels=handle.labels[torch.from_numpy(idx)]
    )


def sample_mixed_batch(
    handle: DatasetHandle, b: int, rng: np.random.Generator
) -> ImageBatch:
    """Sample ``b`` uniformly random (image, label) pairs."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if len(handle) == 0:
        raise EmptyDatasetError(f"{handle.name}/{handle.split} holds no images")
    idx = rng.integers(0, len(handle), size=b)
    idx_t = torch.from_numpy(idx)
    return ImageBatch(pixels=handle.images[idx_t], labels=handle.labels[idx_t])


def download_dataset(name: str, data_dir: str) -> None:
    """Fetch the published binary files for ``name`` into data_dir/<name>/.

    Only runs when explicitly requested (CLI ``--download``); requires network
    access to the canonical mirrors.
    """
    if name not in DATASET_CHANNELS:
        raise UnsupportedDatasetError(f"unsupported dataset {name!r}")
    directory = os.path.join(data_dir, name)
    os.makedirs(directory, exist_ok=True)
    if name == "cifar10":
        import tarfile

        archive = os.path.join(directory, "cifar-10-binary.tar.gz")
        if not os.path.exists(archive):
            urllib.request.urlretrieve(_CIFAR_URL, archive)
        with tarfile.open(archive, "r:gz") as tar:
            tar.extractall(directory)
        return
    base = _DOWNLOAD_URLS[name]
    for split_files in _IDX_FILES.values():
        for basename in split_files:
            target = os.path.join(directory, basename + ".gz")
            if not os.path.exists(target):
                urllib.request.urlretrieve(base + basename + ".gz", target)
