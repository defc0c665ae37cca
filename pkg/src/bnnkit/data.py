"""Dataset ingestion and minibatch iteration.

Supports the big-endian IDX image/label format (the de-facto MNIST layout)
and a synthetic Gaussian-blob generator for fast tests.  Splitting and
shuffling are fully determined by their seeds; the batch permutation folds
the epoch number into the stream so consecutive epochs differ.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import BadMagicError, ConfigError, CountMismatchError, TruncatedFileError
from .mlp import Batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if len(self) < 1:
            raise ConfigError("dataset is empty")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ConfigError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0,1), got {self.train_fraction}")


def _read_bytes(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair; pixels scaled to [0,1]."""
    img_raw = _read_bytes(images_path)
    if len(img_raw) < 16:
        raise TruncatedFileError(f"{images_path}: missing IDX header")
    magic, n, rows, cols = struct.unpack_from(">IIII", img_raw, 0)
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"{images_path}: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
    if len(img_raw) < 16 + n * rows * cols:
        raise TruncatedFileError(f"{images_path}: expected {n * rows * cols} pixel bytes")

    lab_raw = _read_bytes(labels_path)
    if len(lab_raw) < 8:
        raise TruncatedFileError(f"{labels_path}: missing IDX header")
    lmagic, ln = struct.unpack_from(">II", lab_raw, 0)
    if lmagic != LABELS_MAGIC:
        raise BadMagicError(f"{labels_path}: magic {lmagic:#010x}, expected {LABELS_MAGIC:#010x}")
    if len(lab_raw) < 8 + ln:
        raise TruncatedFileError(f"{labels_path}: expected {ln} label bytes")
    if n != ln:
        raise CountMismatchError(f"{n} images but {ln} labels")

    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    inputs = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=ln, offset=8).astype(np.int64)
    return Dataset(inputs, labels, int(labels.max()) + 1)


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Inverse of load_idx (1 x d images); inputs quantized to uint8."""
    n, d = ds.inputs.shape
    pixels = np.clip(np.rint(ds.inputs * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, 1, d))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def synth_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """K isotropic Gaussian clusters with distinct unit-norm means."""
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    inputs = means[labels] + spread * rng.normal(size=(labels.size, dim))
    return Dataset(inputs, labels, num_classes)


def take(ds: Dataset, idx: np.ndarray) -> Dataset:
    return Dataset(ds.inputs[idx], ds.labels[idx], ds.num_classes)


def blobs_with_test(
    num_classes: int, per_class: int, test_per_class: int, dim: int, spread: float, seed: int
) -> tuple[Dataset, Dataset]:
    """One blob draw split into a train pool and a held-out test set.

    Both shares come from the same cluster means (a fresh seed would move
    the clusters and make the test set a different task)."""
    tot = per_class + test_per_class
    full = synth_blobs(num_classes, tot, dim, spread, seed)
    base = np.arange(num_classes)[:, None] * tot
    pool_idx = (base + np.arange(per_class)).ravel()
    test_idx = (base + per_class + np.arange(test_per_class)).ravel()
    return take(full, pool_idx), take(full, test_idx)


def split(ds: Dataset, cfg: SplitConfig) -> tuple[Dataset, Dataset]:
    """Disjoint (train, valid) covering ds exactly; train size floors."""
    perm = np.random.default_rng(cfg.seed).permutation(len(ds))
    n_train = int(len(ds) * cfg.train_fraction)
    return take(ds, perm[:n_train]), take(ds, perm[n_train:])


def steps_per_epoch(n: int, batch_size: int) -> int:
    return (n + batch_size - 1) // batch_size


def batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> Iterator[Batch]:
    """One pass over ds in shuffled minibatches; the last may be short."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    perm = np.random.default_rng([shuffle_seed, epoch]).permutation(len(ds))
    for lo in range(0, len(ds), batch_size):
        idx = perm[lo : lo + batch_size]
        yield Batch(ds.inputs[idx], ds.labels[idx])
