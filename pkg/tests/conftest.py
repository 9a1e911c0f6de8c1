"""Shared fixtures: small synthetic datasets written in the real on-disk
formats (IDX for the MNIST family, binary batches for CIFAR-10) so every test
exercises the production loaders."""
import gzip
import hashlib
import os
import struct

import numpy as np
import pytest
import torch

from gendistill.data import load_dataset

TRAIN_PER_CLASS = 48
TEST_PER_CLASS = 12


def make_pattern_images(per_class, height, width, channels, rng):
    """Ten highly separable classes: class k is a bright band at row band_k."""
    n = per_class * 10
    images = rng.integers(0, 40, size=(n, channels, height, width), dtype=np.int64)
    labels = np.repeat(np.arange(10), per_class)
    band = max(height // 10, 1)
    for i, k in enumerate(labels):
        r0 = (k * height) // 10
        images[i, :, r0 : r0 + band, :] += 180
    order = rng.permutation(n)
    return np.clip(images[order], 0, 255).astype(np.uint8), labels[order].astype(np.uint8)


def write_idx_pair(directory, image_name, label_name, images, labels, compress=True):
    """images: (N, H, W) uint8."""
    n, h, w = images.shape
    image_raw = struct.pack(">IIII", 0x00000803, n, h, w) + images.tobytes()
    label_raw = struct.pack(">II", 0x00000801, n) + labels.tobytes()
    suffix = ".gz" if compress else ""
    opener = gzip.open if compress else open
    with opener(os.path.join(directory, image_name + suffix), "wb") as f:
        f.write(image_raw)
    with opener(os.path.join(directory, label_name + suffix), "wb") as f:
        f.write(label_raw)


def write_cifar_batch(path, images, labels):
    """images: (N, 3, 32, 32) uint8."""
    records = []
    for img, lab in zip(images, labels):
        records.append(bytes([lab]) + img.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(records))


@pytest.fixture(scope="session")
def toy_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toydata")
    rng = np.random.default_rng(1234)

    mnist = root / "mnist"
    mnist.mkdir()
    train_x, train_y = make_pattern_images(TRAIN_PER_CLASS, 28, 28, 1, rng)
    test_x, test_y = make_pattern_images(TEST_PER_CLASS, 28, 28, 1, rng)
    write_idx_pair(mnist, "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                   train_x[:, 0], train_y)
    write_idx_pair(mnist, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte",
                   test_x[:, 0], test_y, compress=False)

    fashion = root / "fashion_mnist"
    fashion.mkdir()
    train_x, train_y = make_pattern_images(TRAIN_PER_CLASS, 28, 28, 1, rng)
    test_x, test_y = make_pattern_images(TEST_PER_CLASS, 28, 28, 1, rng)
    write_idx_pair(fashion, "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                   train_x[:, 0], train_y)
    write_idx_pair(fashion, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte",
                   test_x[:, 0], test_y)

    cifar = root / "cifar10" / "cifar-10-batches-bin"
    cifar.mkdir(parents=True)
    train_x, train_y = make_pattern_images(TRAIN_PER_CLASS, 32, 32, 3, rng)
    test_x, test_y = make_pattern_images(TEST_PER_CLASS, 32, 32, 3, rng)
    per_file = len(train_x) // 5
    for b in range(5):
        sl = slice(b * per_file, (b + 1) * per_file)
        write_cifar_batch(cifar / f"data_batch_{b + 1}.bin", train_x[sl], train_y[sl])
    write_cifar_batch(cifar / "test_batch.bin", test_x, test_y)
    return str(root)


@pytest.fixture(scope="session")
def toy_train(toy_data_dir):
    return load_dataset("mnist", "train", toy_data_dir)


@pytest.fixture(scope="session")
def toy_test(toy_data_dir):
    return load_dataset("mnist", "test", toy_data_dir)


@pytest.fixture(scope="session")
def toy_cifar_train(toy_data_dir):
    return load_dataset("cifar10", "train", toy_data_dir)


def param_hash(module) -> str:
    """Hash of learnable parameters only (normalization buffers excluded)."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def state_hash(module) -> str:
    """Hash of the full state dict (parameters and buffers)."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def params_equal(a, b) -> bool:
    pa = dict(a.named_parameters())
    pb = dict(b.named_parameters())
    if pa.keys() != pb.keys():
        return False
    return all(torch.equal(pa[k], pb[k]) for k in pa)
