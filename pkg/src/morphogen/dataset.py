"""IDX corpus ingestion: parse MNIST-style files, normalize pixels, split train/validation."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    DegenerateSplit,
    LabelOutOfRange,
    TruncatedPayload,
)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

GZIP_HEADER = b"\x1f\x8b"


@dataclass(frozen=True)
class RawIdxImages:
    """An IDX image file decoded but not yet rescaled: one byte per pixel, row-major."""

    magic: int
    count: int
    rows: int
    cols: int
    pixels: bytes


@dataclass(frozen=True)
class LabelSet:
    """Digit labels aligned with an image file."""

    magic: int
    count: int
    labels: np.ndarray  # (count,) uint8, values 0-9


@dataclass
class Dataset:
    """Normalized images (pixels in [0,1]) with optional labels."""

    images: np.ndarray  # (n, rows, cols) float64 in [0,1]
    labels: np.ndarray | None = None  # (n,) int64
    split_tag: str = "train"

    def __len__(self) -> int:
        return self.images.shape[0]


def parse_idx_images(data: bytes) -> RawIdxImages:
    """Decode an IDX image container (big-endian header, byte pixels)."""
    if len(data) < 16:
        raise TruncatedPayload(f"image header needs 16 bytes, got {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"expected image magic {IMAGE_MAGIC}, got {magic}")
    payload = data[16:]
    expected = count * rows * cols
    if len(payload) != expected:
        raise TruncatedPayload(
            f"payload holds {len(payload)} bytes, header promises {expected}"
        )
    return RawIdxImages(magic=magic, count=count, rows=rows, cols=cols, pixels=payload)


def serialize_idx_images(raw: RawIdxImages) -> bytes:
    """Inverse of parse_idx_images; round-trips bit-exactly."""
    header = struct.pack(">IIII", raw.magic, raw.count, raw.rows, raw.cols)
    return header + raw.pixels


def parse_idx_labels(data: bytes) -> LabelSet:
    """Decode an IDX label container."""
    if len(data) < 8:
        raise TruncatedPayload(f"label header needs 8 bytes, got {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABEL_MAGIC:
        raise BadMagic(f"expected label magic {LABEL_MAGIC}, got {magic}")
    payload = data[8:]
    if len(payload) != count:
        raise TruncatedPayload(
            f"payload holds {len(payload)} labels, header promises {count}"
        )
    labels = np.frombuffer(payload, dtype=np.uint8)
    if labels.size and labels.max() > 9:
        bad = int(labels[labels > 9][0])
        raise LabelOutOfRange(f"label {bad} outside digit domain 0-9")
    return LabelSet(magic=magic, count=count, labels=labels)


def serialize_idx_labels(labels: LabelSet) -> bytes:
    header = struct.pack(">II", labels.magic, labels.count)
    return header + labels.labels.astype(np.uint8).tobytes()


def normalize(raw: RawIdxImages, labels: LabelSet | None = None) -> Dataset:
    """Rescale pixel bytes to [0,1] by b/255; attach labels when given."""
    if labels is not None and labels.count != raw.count:
        raise CountMismatch(
            f"{raw.count} images but {labels.count} labels"
        )
    pixels = np.frombuffer(raw.pixels, dtype=np.uint8)
    images = (pixels.astype(np.float64) / 255.0).reshape(raw.count, raw.rows, raw.cols)
    lab = None if labels is None else labels.labels.astype(np.int64)
    return Dataset(images=images, labels=lab)


def split(data: Dataset, validation_fraction: float, rng_seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded partition into (train, validation)."""
    n = len(data)
    if n == 0:
        raise DegenerateSplit("cannot split an empty dataset")
    if not 0.0 < validation_fraction < 1.0:
        raise DegenerateSplit(f"fraction {validation_fraction} outside (0,1)")
    n_val = int(round(n * validation_fraction))
    if n_val < 1 or n - n_val < 1:
        raise DegenerateSplit(
            f"fraction {validation_fraction} of {n} items leaves an empty side"
        )
    perm = np.random.default_rng(rng_seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])

    def take(idx: np.ndarray, tag: str) -> Dataset:
        return Dataset(
            images=data.images[idx].copy(),
            labels=None if data.labels is None else data.labels[idx].copy(),
            split_tag=tag,
        )

    return take(train_idx, "train"), take(val_idx, "validation")


def read_idx_bytes(path: str | Path) -> bytes:
    """Read a raw or gzip-compressed IDX file into memory."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:2] == GZIP_HEADER:
        blob = gzip.decompress(blob)
    return blob


def load_dataset(images_path: str | Path, labels_path: str | Path | None = None) -> Dataset:
    """Parse + normalize an image file and (optionally) its label file."""
    raw = parse_idx_images(read_idx_bytes(images_path))
    labels = None
    if labels_path is not None:
        labels = parse_idx_labels(read_idx_bytes(labels_path))
    return normalize(raw, labels)
