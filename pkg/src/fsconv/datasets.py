"""Loaders for the MNIST IDX and CIFAR-10 binary formats.

Both loaders are pure functions of the file bytes.  Pixels are scaled to
``[0, 1]`` and stored as float64; images are channel-first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    name: str
    num_classes: int = 10
    normalization: dict = field(default_factory=lambda: {"scheme": "unit"})

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{self.name}: {len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"{self.name}: labels outside 0..{self.num_classes - 1}")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int, start: int = 0) -> "Dataset":
        sl = slice(start, start + n)
        return replace(self, images=self.images[sl].copy(), labels=self.labels[sl].copy())

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)


def _read(path) -> bytes:
    return Path(path).read_bytes()


def parse_idx(data: bytes, expected_magic: int, what: str) -> np.ndarray:
    """Parse an unsigned-byte IDX payload; validates magic, header and length."""
    if len(data) < 4:
        raise DatasetError(f"{what}: truncated header: {len(data)} bytes, need at least 4 at offset 0")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        kind = "label" if expected_magic == MNIST_LABEL_MAGIC else "image"
        raise DatasetError(
            f"{what}: expected {kind} magic 0x{expected_magic:08x} at byte offset 0, found 0x{magic:08x}"
        )
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DatasetError(
            f"{what}: truncated header: file ends at byte offset {len(data)}, dimension sizes need offsets 4..{header}"
        )
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    need = int(np.prod(dims, dtype=np.int64))
    have = len(data) - header
    if have < need:
        raise DatasetError(
            f"{what}: truncated payload: header at offset 4 declares {dims} = {need} bytes, "
            f"only {have} present after offset {header}"
        )
    if have > need:
        raise DatasetError(
            f"{what}: {have - need} trailing bytes after payload end at offset {header + need}"
        )
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_mnist(images_path, labels_path, name: str = "mnist") -> Dataset:
    images = parse_idx(_read(images_path), MNIST_IMAGE_MAGIC, str(images_path))
    labels = parse_idx(_read(labels_path), MNIST_LABEL_MAGIC, str(labels_path))
    if images.ndim != 3:
        raise DatasetError(f"{images_path}: expected 3 dimensions (count, rows, cols), header at offset 3 says {images.ndim}")
    if len(images) != len(labels):
        raise DatasetError(
            f"count mismatch: {images_path} declares {len(images)} images (offset 4), "
            f"{labels_path} declares {len(labels)} labels (offset 4)"
        )
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        i = int(bad[0])
        raise DatasetError(f"{labels_path}: label out of range 0..9: {labels[i]} at byte offset {8 + i}")
    pix = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(pix, labels.astype(np.int64), name)


def mnist_split(directory, split: str = "train") -> Dataset:
    """Load ``train`` or ``test`` from a directory holding the four standard files."""
    d = Path(directory)
    prefix = {"train": "train", "test": "t10k"}[split]
    candidates = [
        (d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte"),
        (d / f"{prefix}-images.idx3-ubyte", d / f"{prefix}-labels.idx1-ubyte"),
    ]
    for img, lab in candidates:
        if img.exists() and lab.exists():
            return load_mnist(img, lab, f"mnist-{split}")
    raise DatasetError(f"{d}: no MNIST {split} files found (expected {candidates[0][0].name})")


def parse_cifar10(data: bytes, what: str = "cifar10") -> tuple[np.ndarray, np.ndarray]:
    if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES:
        raise DatasetError(
            f"{what}: length {len(data)} is not a positive multiple of {CIFAR_RECORD_BYTES}; "
            f"last complete record ends at offset {len(data) // CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES}"
        )
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = rec[:, 0]
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        i = int(bad[0])
        raise DatasetError(
            f"{what}: label out of range 0..9: {labels[i]} in record {i} at byte offset {i * CIFAR_RECORD_BYTES}"
        )
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10(bin_paths: Sequence, name: str = "cifar10") -> Dataset:
    if isinstance(bin_paths, (str, Path)):
        bin_paths = [bin_paths]
    imgs, labs = [], []
    for p in bin_paths:
        x, y = parse_cifar10(_read(p), str(p))
        imgs.append(x)
        labs.append(y)
    if not imgs:
        raise DatasetError("load_cifar10 needs at least one file")
    pix = np.concatenate(imgs).astype(np.float64) / 255.0
    return Dataset(pix, np.concatenate(labs).astype(np.int64), name)


def cifar10_split(directory, split: str = "train") -> Dataset:
    d = Path(directory)
    if (d / "cifar-10-batches-bin").is_dir():
        d = d / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    paths = [d / n for n in names]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise DatasetError(f"{d}: missing CIFAR-10 files: {', '.join(missing)}")
    return load_cifar10(paths, f"cifar10-{split}")


def normalize(ds: Dataset, scheme: str = "unit", mean=None, std=None) -> Dataset:
    """``unit`` leaves values as loaded; ``per_channel`` maps x -> (x - mean) / std per channel."""
    if scheme == "unit":
        return replace(ds, normalization={"scheme": "unit"})
    if scheme != "per_channel":
        raise DatasetError(f"unknown normalization scheme {scheme!r}; use 'unit' or 'per_channel'")
    c = ds.images.shape[1]
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (c,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (c,))
    if np.any(std == 0):
        raise DatasetError("per_channel normalization needs nonzero std")
    shape = (1, c) + (1,) * (ds.images.ndim - 2)
    out = (ds.images - mean.reshape(shape)) / std.reshape(shape)
    return replace(
        ds,
        images=out,
        normalization={"scheme": "per_channel", "mean": mean.tolist(), "std": std.tolist()},
    )


def denormalize(ds: Dataset) -> Dataset:
    norm = ds.normalization
    if norm.get("scheme") != "per_channel":
        return ds
    c = ds.images.shape[1]
    shape = (1, c) + (1,) * (ds.images.ndim - 2)
    mean = np.asarray(norm["mean"]).reshape(shape)
    std = np.asarray(norm["std"]).reshape(shape)
    return replace(ds, images=ds.images * std + mean, normalization={"scheme": "unit"})


def load_dataset_flag(flag: str, split: str = "test") -> Dataset:
    """Resolve a ``mnist:<dir>`` / ``cifar10:<dir>`` flag value."""
    kind, _, directory = flag.partition(":")
    if not directory:
        raise DatasetError(f"dataset flag must look like mnist:<dir> or cifar10:<dir>, got {flag!r}")
    if kind == "mnist":
        return mnist_split(directory, split)
    if kind == "cifar10":
        return cifar10_split(directory, split)
    raise DatasetError(f"unknown dataset kind {kind!r}; use mnist or cifar10")
