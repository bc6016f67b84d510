"""Datasets, loaders, per-image whitening and the randomization transforms.

A :class:`Dataset` is a dense float64 feature matrix with integer class
labels. The randomizers never mutate their input; each returns a new
Dataset and is a pure function of (input, mode, seed).
"""

import enum
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .seeding import rng as make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
CIFAR_CLASSES = 10


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValidationError(f"features must be a non-empty 2-D array, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValidationError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValidationError("labels must be integers")
        y = y.astype(np.int64)
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain NaN or Inf")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, count, start=0):
        """First ``count`` rows from ``start`` (the split is never shuffled)."""
        stop = start + count
        if count < 1 or stop > self.n:
            raise ValidationError(f"cannot take rows [{start}, {stop}) from {self.n}")
        return replace(self, features=self.features[start:stop], labels=self.labels[start:stop])


class Mode(str, enum.Enum):
    TRUE_LABELS = "true"
    PARTIAL_CORRUPTION = "partial"
    RANDOM_LABELS = "random_labels"
    SHUFFLED_PIXELS = "shuffled_pixels"
    RANDOM_PIXELS = "random_pixels"
    GAUSSIAN_PIXELS = "gaussian"


LABEL_MODES = (Mode.PARTIAL_CORRUPTION, Mode.RANDOM_LABELS)
INPUT_MODES = (Mode.SHUFFLED_PIXELS, Mode.RANDOM_PIXELS, Mode.GAUSSIAN_PIXELS)


@dataclass(frozen=True)
class RandomizationSpec:
    mode: Mode = Mode.TRUE_LABELS
    corruption_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 <= self.corruption_p <= 1.0:
            raise ValidationError(f"corruption_p must be in [0, 1], got {self.corruption_p}")


def effective_flip_rate(p, num_classes):
    """Expected fraction of labels that actually change under corruption rate p.

    The replacement is uniform over all classes, the true one included.
    """
    return p * (num_classes - 1) / num_classes


# -- loaders -----------------------------------------------------------------


def _read_bytes(path):
    path = Path(path)
    if path.suffix in (".gz", ".gzip"):
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_idx(buf, magic, ndim, path):
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ValidationError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise ValidationError(f"{path}: magic number 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = int(np.prod(dims))
    if len(buf) - header < expected:
        raise ValidationError(f"{path}: truncated file, need {expected} data bytes, have {len(buf) - header}")
    return dims, np.frombuffer(buf, dtype=np.uint8, count=expected, offset=header)


def load_idx(images_path, labels_path, num_classes=10, limit=None, name="idx"):
    """Load an IDX image/label pair (MNIST layout), scaling pixels to [0, 1].

    Files ending in ``.gz`` are decompressed transparently. ``limit`` keeps
    only the first rows, which avoids converting all 60000 MNIST images when
    a subset is wanted.
    """
    (count, rows, cols), pixels = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    (label_count,), labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if count != label_count:
        raise ValidationError(f"header count mismatch: {count} images vs {label_count} labels")
    keep = count if limit is None else min(int(limit), count)
    x = pixels.reshape(count, rows * cols)[:keep].astype(np.float64) / 255.0
    return Dataset(x, labels[:keep].astype(np.int64), num_classes, name)


def load_cifar10_bin(batch_paths, center_crop=True, limit=None, name="cifar10"):
    """Load CIFAR10 binary batches (1 label byte + 3072 channel-major pixel bytes).

    With ``center_crop`` every 32x32 channel is cut to its central 28x28
    window, giving d = 2352; the channel-major order is kept.
    """
    if isinstance(batch_paths, (str, Path)):
        batch_paths = [batch_paths]
    chunks = []
    for path in batch_paths:
        buf = _read_bytes(path)
        if len(buf) == 0 or len(buf) % CIFAR_RECORD:
            raise ValidationError(f"{path}: length {len(buf)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    if limit is not None:
        records = records[: int(limit)]
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        raise ValidationError(f"record {bad[0]} has invalid label byte {labels[bad[0]]}")
    images = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    if center_crop:
        images = images[:, :, 2:30, 2:30]
    x = images.reshape(len(records), -1).astype(np.float64) / 255.0
    return Dataset(x, labels, CIFAR_CLASSES, name)


def _class_means(d, num_classes, separation):
    # Scaled one-hot means sit at pairwise distance exactly `separation`.
    # With d < K they fall back to fixed random directions. The means never
    # depend on the sampling seed, so train/test drawn with different seeds
    # share them.
    means = np.zeros((num_classes, d))
    if d >= num_classes:
        means[np.arange(num_classes), np.arange(num_classes)] = 1.0
    else:
        dirs = make_rng(0).standard_normal((num_classes, d))
        means = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return means * (separation / np.sqrt(2.0))


def synth_blobs(n, d, num_classes, separation, seed, name="blobs"):
    """K unit-variance Gaussian clusters, labels balanced up to the remainder.

    Rows are guaranteed distinct; any duplicate is redrawn.
    """
    if n < num_classes or d < 1:
        raise ValidationError(f"need n >= K and d >= 1, got n={n}, d={d}, K={num_classes}")
    gen = make_rng(seed)
    labels = gen.permutation(np.arange(n) % num_classes)
    means = _class_means(d, num_classes, separation)
    x = means[labels] + gen.standard_normal((n, d))
    while True:
        _, first = np.unique(x, axis=0, return_index=True)
        if first.size == n:
            break
        dup = np.setdiff1d(np.arange(n), first)
        x[dup] = means[labels[dup]] + gen.standard_normal((dup.size, d))
    return Dataset(x, labels, num_classes, name)


def whiten_per_image(ds):
    """Per-row standardization: (x - mean) / max(std, 1/sqrt(d))."""
    x = ds.features
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    adjusted = np.maximum(std, 1.0 / np.sqrt(ds.d))
    return replace(ds, features=(x - mean) / adjusted)


# -- randomization -------------------------------------------------------------


def randomize_labels(ds, mode, seed, p=1.0):
    """Corrupt labels: each independently with probability p (RANDOM_LABELS: p=1).

    A corrupted label is a uniform draw over all K classes, so it keeps its
    true value with probability 1/K.
    """
    mode = Mode(mode)
    if mode not in LABEL_MODES:
        raise ValidationError(f"{mode.value} is not a label randomization")
    if mode is Mode.RANDOM_LABELS:
        p = 1.0
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must be in [0, 1], got {p}")
    gen = make_rng(seed)
    hit = gen.random(ds.n) < p
    draws = gen.integers(0, ds.num_classes, size=ds.n)
    return replace(ds, labels=np.where(hit, draws, ds.labels))


def randomize_inputs(train, test, mode, seed):
    """Randomize pixels of both splits; labels are untouched."""
    mode = Mode(mode)
    if mode not in INPUT_MODES:
        raise ValidationError(f"{mode.value} is not an input randomization")
    if train.d != test.d:
        raise ValidationError(f"dimension mismatch: train d={train.d}, test d={test.d}")
    gen = make_rng(seed)
    if mode is Mode.SHUFFLED_PIXELS:
        perm = gen.permutation(train.d)
        new_train, new_test = train.features[:, perm], test.features[:, perm]
    elif mode is Mode.RANDOM_PIXELS:
        new_train = gen.permuted(train.features, axis=1)
        new_test = gen.permuted(test.features, axis=1)
    else:
        mu = train.features.mean()
        sd = train.features.std()
        new_train = gen.normal(mu, sd, size=train.features.shape)
        new_test = gen.normal(mu, sd, size=test.features.shape)
    return replace(train, features=new_train), replace(test, features=new_test)


def apply_randomization(train, test, spec):
    """Dispatch a :class:`RandomizationSpec`; test labels are never corrupted."""
    if spec.mode is Mode.TRUE_LABELS:
        return train, test
    if spec.mode in LABEL_MODES:
        return randomize_labels(train, spec.mode, spec.seed, spec.corruption_p), test
    return randomize_inputs(train, test, spec.mode, spec.seed)
