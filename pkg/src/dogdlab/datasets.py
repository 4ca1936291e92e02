"""IDX image/label files and batch sampling for logistic-regression tasks.

IDX layout (all integers big-endian)::

    images: magic 0x00000803, count, rows, cols, then count*rows*cols ubytes
    labels: magic 0x00000801, count, then count ubytes

Files ending in ``.gz`` are decompressed transparently.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, InsufficientData, IoError, TruncatedFile
from .losses import LogisticBatch
from .rng import substream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray  # (M, d), pixels in [0, 1]
    labels: np.ndarray  # (M,)
    n_classes: int

    def __post_init__(self) -> None:
        f = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if f.shape[0] != y.size:
            raise ValueError(f"{f.shape[0]} feature rows but {y.size} labels")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
        if path.suffix == ".gz":
            raw = gzip.decompress(raw)
    except (OSError, EOFError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return raw


def parse_idx_images(raw: bytes) -> np.ndarray:
    if len(raw) < 16:
        raise TruncatedFile(f"image header needs 16 bytes, got {len(raw)}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"expected image magic 0x{IMAGE_MAGIC:08x}, got 0x{magic:08x}")
    size = count * rows * cols
    if len(raw) - 16 < size:
        raise TruncatedFile(f"expected {size} pixel bytes, got {len(raw) - 16}")
    px = np.frombuffer(raw, dtype=np.uint8, count=size, offset=16)
    return px.reshape(count, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(raw: bytes) -> np.ndarray:
    if len(raw) < 8:
        raise TruncatedFile(f"label header needs 8 bytes, got {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise BadMagic(f"expected label magic 0x{LABEL_MAGIC:08x}, got 0x{magic:08x}")
    if len(raw) - 8 < count:
        raise TruncatedFile(f"expected {count} label bytes, got {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx_images(path) -> np.ndarray:
    """Read an IDX image file into an ``(M, rows*cols)`` matrix scaled to [0, 1]."""
    return parse_idx_images(_read_bytes(path))


def load_idx_labels(path) -> np.ndarray:
    return parse_idx_labels(_read_bytes(path))


def load_dataset(images_path, labels_path, n_classes: int | None = None) -> LabeledDataset:
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} images but {y.size} labels")
    return LabeledDataset(x, y, int(y.max()) + 1 if n_classes is None else n_classes)


def images_to_idx(images: np.ndarray, rows: int, cols: int) -> bytes:
    """Encode ``(M, rows*cols)`` pixels in [0, 1] as IDX bytes (rounded to 1/255)."""
    px = np.rint(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)
    return struct.pack(">IIII", IMAGE_MAGIC, px.shape[0], rows, cols) + px.tobytes()


def labels_to_idx(labels) -> bytes:
    y = np.asarray(labels).astype(np.uint8)
    return struct.pack(">II", LABEL_MAGIC, y.size) + y.tobytes()


def sample_batches(
    ds: LabeledDataset,
    batch_size: int,
    count: int,
    seed: int,
    class_subset=None,
) -> list[LogisticBatch]:
    """Draw ``count`` independent batches.

    Within a batch rows are drawn without replacement; batches are
    independent of each other. With ``class_subset`` only those classes are
    used and labels are re-indexed to their position in the subset.
    """
    if batch_size < 1 or count < 0:
        raise ValueError("batch_size must be >= 1 and count >= 0")
    if class_subset is None:
        pool = np.arange(len(ds))
        labels = ds.labels
        n_classes = ds.n_classes
    else:
        subset = [int(c) for c in class_subset]
        remap = np.full(ds.n_classes, -1, dtype=np.int64)
        for k, c in enumerate(subset):
            if not 0 <= c < ds.n_classes:
                raise ValueError(f"class {c} outside [0, {ds.n_classes})")
            remap[c] = k
        for c in subset:
            if not np.any(ds.labels == c):
                raise InsufficientData(f"class {c} has no examples")
        pool = np.flatnonzero(remap[ds.labels] >= 0)
        labels = remap[ds.labels]
        n_classes = len(subset)
    if batch_size > pool.size:
        raise InsufficientData(f"batch of {batch_size} from only {pool.size} examples")
    rng = substream(seed, "batches")
    out = []
    for _ in range(count):
        idx = rng.choice(pool, size=batch_size, replace=False)
        out.append(LogisticBatch(ds.features[idx], labels[idx], n_classes))
    return out
