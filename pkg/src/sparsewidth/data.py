"""MNIST ingestion from the raw IDX files, normalization, and subsetting.

The four canonical files (train-images-idx3-ubyte, train-labels-idx1-ubyte,
t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte) are parsed bit-exactly:
big-endian 32-bit magic (0x00000803 for images, 0x00000801 for labels),
big-endian dimension sizes, then raw unsigned bytes. Pixels are scaled to
[0, 1] and standardized with statistics computed on the training split
only.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class DataError(ValueError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class SizeTooLarge(DataError):
    pass


@dataclass
class Dataset:
    """Flattened images with integer labels and the stats that scaled them."""

    images: np.ndarray  # (N, pixels) float64, normalized
    labels: np.ndarray  # (N,) int64 in [0, 10)
    split: str
    mean: np.ndarray | float
    stdev: np.ndarray | float

    def __len__(self) -> int:
        return len(self.labels)


def _read_exact(fh, count: int, path: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise TruncatedFile(f"{path}: expected {count} more bytes, got {len(buf)}")
    return buf


def read_idx_images(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != IMAGES_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
        n, rows, cols = struct.unpack(">III", _read_exact(fh, 12, path))
        raw = _read_exact(fh, n * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)


def read_idx_labels(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != LABELS_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
        n, = struct.unpack(">I", _read_exact(fh, 4, path))
        raw = _read_exact(fh, n, path)
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_mnist(data_dir: str, per_pixel_stats: bool = False) -> tuple[Dataset, Dataset]:
    """Both splits, normalized as (image - mean) / stdev with train-split stats.

    Pixel bytes are first scaled to [0, 1]. By default mean and stdev are
    scalars over all training pixels; per_pixel_stats switches to one
    statistic per pixel position (zero-variance positions divide by 1).
    """
    train_x = read_idx_images(os.path.join(data_dir, TRAIN_IMAGES)).astype(np.float64) / 255.0
    train_y = read_idx_labels(os.path.join(data_dir, TRAIN_LABELS))
    test_x = read_idx_images(os.path.join(data_dir, TEST_IMAGES)).astype(np.float64) / 255.0
    test_y = read_idx_labels(os.path.join(data_dir, TEST_LABELS))
    if len(train_x) != len(train_y):
        raise CountMismatch(f"train: {len(train_x)} images vs {len(train_y)} labels")
    if len(test_x) != len(test_y):
        raise CountMismatch(f"test: {len(test_x)} images vs {len(test_y)} labels")

    if per_pixel_stats:
        mean = train_x.mean(axis=0)
        stdev = train_x.std(axis=0)
        stdev = np.where(stdev == 0.0, 1.0, stdev)
    else:
        mean = float(train_x.mean())
        stdev = float(train_x.std())
    train = Dataset((train_x - mean) / stdev, train_y, "train", mean, stdev)
    test = Dataset((test_x - mean) / stdev, test_y, "test", mean, stdev)
    return train, test


def subset(ds: Dataset, size: int, seed: int) -> Dataset:
    """Uniform sample without replacement, in the original row order."""
    if size > len(ds):
        raise SizeTooLarge(f"subset size {size} exceeds dataset size {len(ds)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.sort(rng.permutation(len(ds))[:size])
    return Dataset(ds.images[idx], ds.labels[idx], ds.split, ds.mean, ds.stdev)


def find_mnist_dir(explicit: str | None = None) -> str | None:
    """First existing directory holding all four IDX files.

    Checks, in order: the explicit argument, $SPARSEWIDTH_MNIST, ./data/mnist,
    ~/data/mnist. Returns None when nothing qualifies.
    """
    candidates = []
    if explicit:
        candidates.append(explicit)
    env = os.environ.get("SPARSEWIDTH_MNIST")
    if env:
        candidates.append(env)
    candidates.append(os.path.join(os.getcwd(), "data", "mnist"))
    candidates.append(os.path.expanduser(os.path.join("~", "data", "mnist")))
    needed = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
    for cand in candidates:
        if all(os.path.isfile(os.path.join(cand, f)) for f in needed):
            return cand
    return None
