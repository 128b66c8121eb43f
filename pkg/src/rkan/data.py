"""Dataset ingestion, synthetic shape generation, and preprocessing.

CIFAR binary formats are parsed record-by-record: CIFAR-10 records are
3,073 bytes (1 label byte + 3x1024 channel-planar pixel bytes, R then G
then B, row-major 32x32), CIFAR-100 records are 3,074 bytes (coarse label,
fine label, pixels). The synthetic generator emits the CIFAR-10 record
layout for interchange.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

CIFAR10_RECORD = 3073
CIFAR100_RECORD = 3074
_PIXELS = 3072

SHAPE_CLASSES = ("square", "disk", "cross", "stripes")


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N, 3, H, W]
    labels: np.ndarray  # int64 [N]
    class_count: int
    split: str = ""

    def __post_init__(self):
        if self.labels.size and (
                self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InputError(
                f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.images)


def _parse_records(blob, record_size, path):
    if len(blob) % record_size != 0:
        offset = (len(blob) // record_size) * record_size
        raise FormatError(
            f"{path}: size {len(blob)} is not a multiple of {record_size} "
            f"(truncated record at byte {offset})")
    return np.frombuffer(blob, dtype=np.uint8).reshape(-1, record_size)


def _batch_files(path, pattern):
    if os.path.isfile(path):
        return [path]
    names = sorted(n for n in os.listdir(path) if pattern(n))
    if not names:
        raise FormatError(f"no batch files found under {path}")
    return [os.path.join(path, n) for n in names]


def load_cifar10(path, split="train"):
    """Load CIFAR-10 binary batches from a file or directory."""
    if os.path.isdir(path):
        prefix = "data_batch" if split == "train" else "test_batch"
        files = _batch_files(path, lambda n: n.startswith(prefix) and n.endswith(".bin"))
    else:
        files = [path]
    images, labels = [], []
    for f in files:
        with open(f, "rb") as fh:
            records = _parse_records(fh.read(), CIFAR10_RECORD, f)
        lab = records[:, 0].astype(np.int64)
        if lab.size and lab.max() >= 10:
            raise FormatError(f"{f}: label {lab.max()} out of range for CIFAR-10")
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(lab)
    return Dataset(np.concatenate(images), np.concatenate(labels), 10, split)


def serialize_cifar10(dataset):
    """Inverse of :func:`load_cifar10` for one batch: dataset -> bytes."""
    n = len(dataset)
    records = np.empty((n, CIFAR10_RECORD), dtype=np.uint8)
    records[:, 0] = dataset.labels
    records[:, 1:] = dataset.images.reshape(n, _PIXELS)
    return records.tobytes()


def load_cifar100(path, split="train"):
    """Load the CIFAR-100 binary file (fine labels, K=100)."""
    if os.path.isdir(path):
        path = os.path.join(path, "train.bin" if split == "train" else "test.bin")
    with open(path, "rb") as fh:
        records = _parse_records(fh.read(), CIFAR100_RECORD, path)
    fine = records[:, 1].astype(np.int64)
    if fine.size and fine.max() >= 100:
        raise FormatError(f"{path}: fine label {fine.max()} out of range")
    images = records[:, 2:].reshape(-1, 3, 32, 32)
    return Dataset(images, fine, 100, split)


# ---------------------------------------------------------------------------
# Synthetic shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    classes: int = 3
    per_class: int = 100
    image_hw: int = 32
    noise_sigma: float = 8.0
    seed: int = 0
    fixed_position: bool = False

    def __post_init__(self):
        if not 1 <= self.classes <= len(SHAPE_CLASSES):
            raise InputError(
                f"classes must be in [1, {len(SHAPE_CLASSES)}], got {self.classes}")
        if self.noise_sigma < 0:
            raise InputError(f"noise sigma must be >= 0, got {self.noise_sigma}")


def _draw_shape(kind, hw, cy, cx, half, canvas):
    y, x = np.ogrid[:hw, :hw]
    if kind == "square":
        mask = (abs(y - cy) <= half) & (abs(x - cx) <= half)
    elif kind == "disk":
        mask = (y - cy) ** 2 + (x - cx) ** 2 <= half ** 2
    elif kind == "cross":
        arm = max(1, half // 3)
        mask = ((abs(y - cy) <= arm) & (abs(x - cx) <= half)) | \
               ((abs(x - cx) <= arm) & (abs(y - cy) <= half))
    elif kind == "stripes":
        period = max(2, half // 2)
        mask = (abs(y - cy) <= half) & (abs(x - cx) <= half) & \
               ((y - cy) % period < (period + 1) // 2)
    else:
        raise InputError(f"unknown shape kind {kind!r}")
    canvas[mask] = 220


def generate_synthetic(cfg: SyntheticConfig):
    """Procedural shape-classification dataset, fully determined by the seed.

    Grayscale shapes at random positions and scales, replicated to RGB,
    with additive clipped Gaussian noise. Exactly ``per_class`` images per
    label, in label-block order.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    hw = cfg.image_hw
    n = cfg.classes * cfg.per_class
    images = np.zeros((n, 3, hw, hw), dtype=np.uint8)
    labels = np.repeat(np.arange(cfg.classes), cfg.per_class).astype(np.int64)

    for i, label in enumerate(labels):
        canvas = np.full((hw, hw), 30.0)
        if cfg.fixed_position:
            cy = cx = hw // 2
            half = hw // 4
        else:
            half = int(rng.integers(hw // 8, hw // 4 + 1))
            cy = int(rng.integers(half, hw - half))
            cx = int(rng.integers(half, hw - half))
        _draw_shape(SHAPE_CLASSES[label], hw, cy, cx, half, canvas)
        if cfg.noise_sigma > 0:
            canvas = canvas + rng.normal(0.0, cfg.noise_sigma, size=canvas.shape)
        gray = np.clip(canvas, 0, 255).astype(np.uint8)
        images[i] = gray[None, :, :]
    return Dataset(images, labels, cfg.classes, split=f"synthetic-{cfg.seed}")


def synthetic_task(seed=7, classes=3, train_per_class=100, val_per_class=50,
                   noise_sigma=8.0, image_hw=32):
    """The desk-scale benchmark split: seeded train and validation sets."""
    train = generate_synthetic(SyntheticConfig(
        classes=classes, per_class=train_per_class, image_hw=image_hw,
        noise_sigma=noise_sigma, seed=seed))
    val = generate_synthetic(SyntheticConfig(
        classes=classes, per_class=val_per_class, image_hw=image_hw,
        noise_sigma=noise_sigma, seed=seed + 1))
    return train, val


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

class Standardizer:
    """Per-channel standardization with statistics fixed on a training split."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, images):
        scaled = images.astype(np.float64) / 255.0
        mean = scaled.mean(axis=(0, 2, 3))
        std = scaled.std(axis=(0, 2, 3))
        std[std == 0] = 1.0
        return cls(mean, std)

    def transform(self, images, flips=None):
        """Scale to [0,1] and standardize; optionally flip marked images.

        ``flips`` is a boolean mask over the batch (training only); eval
        passes omit it for deterministic output.
        """
        x = images.astype(np.float64) / 255.0
        if flips is not None:
            x[flips] = x[flips, :, :, ::-1]
        return (x - self.mean[:, None, None]) / self.std[:, None, None]
