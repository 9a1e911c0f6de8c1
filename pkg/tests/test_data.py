import gzip
import struct

import numpy as np
import pytest
import torch

from gendistill.data import (
    DatasetHandle,
    denormalize_pixels,
    load_dataset,
    normalize_pixels,
    sample_class_batch,
    sample_mixed_batch,
)
from gendistill.exceptions import (
    DatasetLoadError,
    EmptyDatasetError,
    InsufficientSamplesError,
    UnsupportedDatasetError,
)

from conftest import TEST_PER_CLASS, TRAIN_PER_CLASS


def test_load_shapes_and_range(toy_train):
    assert toy_train.images.shape == (TRAIN_PER_CLASS * 10, 1, 32, 32)
    assert toy_train.labels.shape == (TRAIN_PER_CLASS * 10,)
    assert toy_train.images.dtype == torch.float32
    assert toy_train.images.min() >= -1.0 and toy_train.images.max() <= 1.0
    assert toy_train.num_classes == 10
    assert toy_train.channels == 1


def test_load_cifar_three_channel(toy_cifar_train, toy_data_dir):
    assert toy_cifar_train.images.shape == (TRAIN_PER_CLASS * 10, 3, 32, 32)
    test = load_dataset("cifar10", "test", toy_data_dir)
    assert test.images.shape == (TEST_PER_CLASS * 10, 3, 32, 32)


def test_load_is_deterministic(toy_data_dir):
    a = load_dataset("mnist", "train", toy_data_dir)
    b = load_dataset("mnist", "train", toy_data_dir)
    assert torch.equal(a.images, b.images)
    assert torch.equal(a.labels, b.labels)


def test_unknown_dataset_rejected(toy_data_dir):
    with pytest.raises(UnsupportedDatasetError):
        load_dataset("svhn", "train", toy_data_dir)
    with pytest.raises(UnsupportedDatasetError):
        load_dataset("mnist", "validation", toy_data_dir)


def test_missing_files_raise(tmp_path):
    (tmp_path / "mnist").mkdir()
    with pytest.raises(DatasetLoadError):
        load_dataset("mnist", "train", str(tmp_path))


def test_bad_magic_raises(tmp_path):
    d = tmp_path / "mnist"
    d.mkdir()
    with gzip.open(d / "train-images-idx3-ubyte.gz", "wb") as f:
        f.write(struct.pack(">IIII", 0xDEADBEEF, 1, 28, 28) + bytes(784))
    with gzip.open(d / "train-labels-idx1-ubyte.gz", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 1) + bytes(1))
    with pytest.raises(DatasetLoadError):
        load_dataset("mnist", "train", str(tmp_path))


def test_truncated_file_raises(tmp_path):
    d = tmp_path / "mnist"
    d.mkdir()
    with gzip.open(d / "train-images-idx3-ubyte.gz", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, 4, 28, 28) + bytes(100))
    with gzip.open(d / "train-labels-idx1-ubyte.gz", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 4) + bytes(4))
    with pytest.raises(DatasetLoadError):
        load_dataset("mnist", "train", str(tmp_path))


def test_normalization_round_trip():
    rng = np.random.default_rng(0)
    unit = torch.from_numpy(rng.random((5, 1, 32, 32), dtype=np.float32))
    back = denormalize_pixels(normalize_pixels(unit))
    assert torch.allclose(back, unit, atol=1e-6)
    signed = normalize_pixels(unit)
    again = normalize_pixels(denormalize_pixels(signed))
    assert torch.allclose(again, signed, atol=1e-6)


def test_class_batch_purity_and_determinism(toy_train):
    for k in (0, 3, 9):
        batch = sample_class_batch(toy_train, k, 16, np.random.default_rng(7))
        assert len(batch) == 16
        assert (batch.labels == k).all()
    a = sample_class_batch(toy_train, 3, 16, np.random.default_rng(7))
    b = sample_class_batch(toy_train, 3, 16, np.random.default_rng(7))
    assert torch.equal(a.pixels, b.pixels)
    assert torch.equal(a.labels, b.labels)


def test_class_batch_without_replacement(toy_train):
    batch = sample_class_batch(toy_train, 2, TRAIN_PER_CLASS, np.random.default_rng(5))
    # all class-2 images drawn exactly once: pixel rows must be pairwise distinct sets
    flat = batch.pixels.reshape(len(batch), -1).numpy()
    assert len({row.tobytes() for row in flat}) == TRAIN_PER_CLASS


def test_class_batch_insufficient_samples(toy_train):
    with pytest.raises(InsufficientSamplesError):
        sample_class_batch(toy_train, 0, 10**9, np.random.default_rng(0))


def test_mixed_batch_pairing_and_determinism(toy_train):
    batch = sample_mixed_batch(toy_train, 64, np.random.default_rng(1))
    assert len(batch) == 64
    # pairing preserved: each sampled image matches the stored image of its label
    for i in range(0, 64, 7):
        matches = (toy_train.images == batch.pixels[i]).all(dim=(1, 2, 3))
        assert (toy_train.labels[matches] == batch.labels[i]).all()
    again = sample_mixed_batch(toy_train, 64, np.random.default_rng(1))
    assert torch.equal(batch.pixels, again.pixels)
    assert torch.equal(batch.labels, again.labels)


def test_mixed_batch_empty_handle():
    empty = DatasetHandle(
        name="mnist",
        split="train",
        images=torch.zeros(0, 1, 32, 32),
        labels=torch.zeros(0, dtype=torch.long),
    )
    with pytest.raises(EmptyDatasetError):
        sample_mixed_batch(empty, 1, np.random.default_rng(0))


def test_splits_disjoint_sizes(toy_train, toy_test):
    assert len(toy_train) == TRAIN_PER_CLASS * 10
    assert len(toy_test) == TEST_PER_CLASS * 10


def test_batch_validation(toy_train):
    from gendistill.data import ImageBatch

    sample_mixed_batch(toy_train, 8, np.random.default_rng(0)).validate()
    with pytest.raises(ValueError):
        ImageBatch(pixels=torch.full((2, 1, 32, 32), 3.0), labels=torch.tensor([0, 1])).validate()
    with pytest.raises(ValueError):
        ImageBatch(pixels=torch.zeros(0, 1, 32, 32), labels=torch.zeros(0, dtype=torch.long)).validate()
