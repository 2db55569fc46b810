"""Dataset loading, standardization and deterministic batching.

Directory layout under the data root (``--data-dir``, else ``$VARINIT_DATA``,
else ``./data``)::

    mnist/train-images-idx3-ubyte[.gz]   mnist/train-labels-idx1-ubyte[.gz]
    mnist/t10k-images-idx3-ubyte[.gz]    mnist/t10k-labels-idx1-ubyte[.gz]
    cifar-10-batches-bin/data_batch_{1..5}.bin
    cifar-10-batches-bin/test_batch.bin

A loader also accepts the dataset directory itself. Pixels are scaled to
[0, 1]; MNIST images are flattened to 784 features, CIFAR-10 images are
decoded to ``N x 32 x 32 x 3``.
"""

from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .core import DataError, RandomSource

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073
CIFAR_HW = 32


class FormatError(DataError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_classes: int = 10

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.images.shape[0]

    def take(self, idx, split: str | None = None) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx],
                       split=split or self.split)


def data_root(data_dir=None) -> str:
    return data_dir or os.environ.get("VARINIT_DATA") or "data"


def _open(path):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _find(dirpath: str, name: str) -> str:
    for cand in (name, name + ".gz"):
        p = os.path.join(dirpath, cand)
        if os.path.exists(p):
            return p
    raise FileNotFoundError(os.path.join(dirpath, name))


def read_idx(path: str, expected_magic: int) -> np.ndarray:
    """Parse an IDX file (big-endian header, unsigned-byte payload)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(path, len(raw), "truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(path, 0, f"bad magic {magic}, expected {expected_magic}")
    n_dims = raw[3]
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise FormatError(path, len(raw), "truncated dimension list")
    dims = struct.unpack(f">{n_dims}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise FormatError(path, len(raw), f"truncated payload: need {header + size} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def _mnist_dir(path: str) -> str:
    sub = os.path.join(path, "mnist")
    return sub if os.path.isdir(sub) else path


def load_mnist_idx(path: str) -> tuple[Dataset, Dataset]:
    d = _mnist_dir(path)
    out = []
    for prefix, split in (("train", "train"), ("t10k", "test")):
        imgs = read_idx(_find(d, f"{prefix}-images-idx3-ubyte"), IDX_IMAGES_MAGIC)
        labels = read_idx(_find(d, f"{prefix}-labels-idx1-ubyte"), IDX_LABELS_MAGIC)
        if imgs.ndim != 3:
            raise FormatError(d, 3, f"{prefix} images must have 3 dimensions, got {imgs.ndim}")
        x = imgs.reshape(imgs.shape[0], -1).astype(np.float64) / 255.0
        out.append(Dataset(x, labels.astype(np.int64), split))
    return out[0], out[1]


def decode_cifar_records(raw: bytes, path="<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Decode CIFAR-10 binary records to (uint8 N x 32 x 32 x 3, labels)."""
    if len(raw) % CIFAR_RECORD:
        raise FormatError(path, len(raw) - len(raw) % CIFAR_RECORD,
                          f"file size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= 10)[0]
    if bad.size:
        raise FormatError(path, int(bad[0]) * CIFAR_RECORD, f"label {labels[bad[0]]} out of range")
    # pixels are channel-major: 1024 red, 1024 green, 1024 blue, each row-major
    imgs = rec[:, 1:].reshape(-1, 3, CIFAR_HW, CIFAR_HW).transpose(0, 2, 3, 1)
    return imgs, labels


def encode_cifar_record(image: np.ndarray, label: int) -> bytes:
    """Inverse of :func:`decode_cifar_records` for one ``32 x 32 x 3`` uint8 image."""
    return bytes([label]) + np.ascontiguousarray(image.transpose(2, 0, 1)).tobytes()


def load_cifar10_binary(path: str) -> tuple[Dataset, Dataset]:
    sub = os.path.join(path, "cifar-10-batches-bin")
    d = sub if os.path.isdir(sub) else path
    out = []
    for names, split in (([f"data_batch_{i}.bin" for i in range(1, 6)], "train"), (["test_batch.bin"], "test")):
        parts = []
        for name in names:
            p = os.path.join(d, name)
            with open(p, "rb") as fh:
                parts.append(decode_cifar_records(fh.read(), p))
        imgs = np.concatenate([a for a, _ in parts])
        labels = np.concatenate([b for _, b in parts])
        out.append(Dataset(imgs.astype(np.float64) / 255.0, labels, split))
    return out[0], out[1]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray


def standardize(ds: Dataset, stats: Standardizer | None = None) -> tuple[Dataset, Standardizer]:
    """Per-feature zero mean / unit variance. Pass the train split's stats for val/test."""
    if stats is None:
        mean = ds.images.mean(axis=0)
        std = ds.images.std(axis=0)
        const = std == 0.0
        if np.any(const):
            log.warning("%d constant features left centered with scale 1", int(const.sum()))
        stats = Standardizer(mean, np.where(const, 1.0, std))
    return replace(ds, images=(ds.images - stats.mean) / stats.scale), stats


def batches(ds: Dataset, size: int, shuffle: bool = False, seed: int = 0):
    """Yield ``(images, labels)`` minibatches; the last batch may be short."""
    if size < 1:
        raise ValueError("batch size must be at least 1")
    order = RandomSource(seed).permutation(len(ds)) if shuffle else np.arange(len(ds))
    for start in range(0, len(ds), size):
        idx = order[start:start + size]
        yield ds.images[idx], ds.labels[idx]


def holdout_split(ds: Dataset, n_val: int = 5000, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the last ``n_val`` examples become the validation split."""
    if not 0 < n_val < len(ds):
        raise DataError(f"cannot hold out {n_val} of {len(ds)} examples")
    order = RandomSource(seed).permutation(len(ds))
    return ds.take(np.sort(order[:-n_val]), "train"), ds.take(np.sort(order[-n_val:]), "val")


def toy_mnist(n_train: int = 60000, n_test: int = 10000, seed: int = 0,
              n_features: int = 784, latent: int = 16) -> tuple[Dataset, Dataset]:
    """Synthetic stand-in for MNIST: Gaussian class blobs in a 16-d latent space,
    mapped linearly to 784 pixel-like features in [0, 1] with per-pixel noise.

    Classes overlap, so a good classifier still has a few percent error.
    """
    rng = RandomSource(seed)
    protos = rng.child(0).standard_normal((10, latent)) * 1.2
    mixing = rng.child(1).standard_normal((latent, n_features)) / np.sqrt(latent)

    def draw(n, key):
        r = rng.child(key)
        labels = r.integers(0, 10, n)
        z = protos[labels] + r.standard_normal((n, latent))
        x = 0.5 + 0.18 * (z @ mixing) + 0.15 * r.standard_normal((n, n_features))
        return np.clip(x, 0.0, 1.0), labels.astype(np.int64)

    xtr, ytr = draw(n_train, 2)
    xte, yte = draw(n_test, 3)
    return Dataset(xtr, ytr, "train"), Dataset(xte, yte, "test")


def load_dataset(name: str, data_dir=None, seed: int = 0) -> tuple[Dataset, Dataset]:
    if name == "mnist":
        return load_mnist_idx(data_root(data_dir))
    if name == "cifar10":
        return load_cifar10_binary(data_root(data_dir))
    if name == "toy-mnist":
        return toy_mnist(seed=seed)
    raise DataError(f"unknown dataset {name!r}; expected mnist, cifar10 or toy-mnist")
