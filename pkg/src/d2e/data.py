"""Synthetic image datasets and the ``D2E1`` binary container.

File layout (little-endian)::

    b"D2E1" | u32 n | u32 C | u32 H | u32 W | u32 classes
    | n*C*H*W intensity bytes (row-major, /255 -> [0, 1]) | n label bytes
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"D2E1"
HEADER = struct.Struct("<4s5I")
KINDS = ("two-blobs", "bars", "checker")


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [n, C, H, W]
    labels: np.ndarray  # uint8 [n]
    classes: int
    # probability of each row when the rows enumerate a finite input space
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 4:
            raise DatasetFormatError(f"images must be [n, C, H, W], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DatasetFormatError(f"{len(self.labels)} labels for {len(self.images)} images")
        if len(self.labels) and self.labels.max() >= self.classes:
            raise DatasetFormatError(f"label {self.labels.max()} >= classes {self.classes}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def x(self) -> np.ndarray:
        return self.images.astype(np.float64) / 255.0

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def enumerable(self) -> bool:
        return self.weights is not None

    def to_bytes(self) -> bytes:
        n, C, H, W = self.images.shape
        header = HEADER.pack(MAGIC, n, C, H, W, self.classes)
        return header + np.ascontiguousarray(self.images).tobytes() + self.labels.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Dataset":
        if len(blob) < HEADER.size:
            raise DatasetFormatError("file shorter than the 24-byte header")
        magic, n, C, H, W, classes = HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        pixels = n * C * H * W
        expected = HEADER.size + pixels + n
        if len(blob) != expected:
            raise DatasetFormatError(f"file length {len(blob)} != {expected} for n={n}, shape {C}x{H}x{W}")
        images = np.frombuffer(blob, np.uint8, pixels, HEADER.size).reshape(n, C, H, W).copy()
        labels = np.frombuffer(blob, np.uint8, n, HEADER.size + pixels).copy()
        return cls(images, labels, classes)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())


def _balanced_labels(n: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    if n < classes:
        raise ValueError(f"need at least one sample per class: n={n} < classes={classes}")
    return rng.permutation(np.arange(n) % classes)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _two_blobs(label: int, rng: np.random.Generator, size: int, noise: float, jitter: float) -> np.ndarray:
    cx = (0.3 if label == 0 else 0.7) * (size - 1) + rng.normal(0, 1.0)
    cy = 0.5 * (size - 1) + rng.normal(0, 2.0)
    sigma = rng.uniform(1.5, 3.0)
    yy, xx = np.mgrid[0:size, 0:size]
    blob = rng.uniform(0.6, 1.0) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    return blob + rng.uniform(0, noise, (size, size))


# bar angle per class: horizontal, vertical, diagonal, anti-diagonal
_BAR_ANGLES = (0.0, 90.0, 45.0, 135.0)


def _bars(label: int, rng: np.random.Generator, size: int, noise: float, jitter: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    offset = rng.uniform(-size / 4, size / 4)
    half_width = rng.uniform(0.8, 1.6)
    theta = np.deg2rad(_BAR_ANGLES[label] + rng.uniform(-jitter, jitter))
    dist = np.abs(np.cos(theta) * (yy - c) - np.sin(theta) * (xx - c) - offset)
    bar = rng.uniform(0.5, 1.0) * np.clip(half_width + 0.5 - dist, 0.0, 1.0)
    return bar + rng.uniform(0, noise, (size, size))


def _checker(label: int, rng: np.random.Generator, size: int, noise: float, jitter: float) -> np.ndarray:
    cell = int(rng.integers(2, 5))
    yy, xx = np.mgrid[0:size, 0:size]
    board = ((yy // cell + xx // cell + label) % 2).astype(np.float64)
    return rng.uniform(0.5, 1.0) * board + rng.uniform(0, noise, (size, size))


_MAKERS = {"two-blobs": (_two_blobs, 2), "bars": (_bars, 4), "checker": (_checker, 2)}


def gen_synthetic(kind: str, n: int, seed: int, size: int = 16, noise: float = 0.3, jitter: float = 0.0) -> Dataset:
    """Deterministic, class-balanced single-channel toy set of ``size x size`` images.

    ``noise`` is the width of the additive uniform pixel noise. ``jitter``
    (degrees) spreads each bar angle uniformly; above 22.5 neighbouring
    orientation classes overlap. Other kinds ignore it.
    """
    if noise < 0 or jitter < 0:
        raise ValueError("noise and jitter must be >= 0")
    if kind not in _MAKERS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {', '.join(KINDS)}")
    maker, classes = _MAKERS[kind]
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, classes, rng)
    images = np.stack([_quantize(maker(int(y), rng, size, noise, jitter)) for y in labels])[:, None]
    return Dataset(images, labels, classes)


def binary_pixels(rule: str = "majority") -> Dataset:
    """Every 2x2 binary image once, uniformly weighted: a fully enumerable input space.

    ``majority`` labels an image 1 when at least two pixels are on.
    """
    patterns = np.array(list(itertools.product([0, 1], repeat=4)), dtype=np.uint8)
    if rule == "majority":
        labels = (patterns.sum(axis=1) >= 2).astype(np.uint8)
    elif rule == "top-row":
        labels = (patterns[:, 0] | patterns[:, 1]).astype(np.uint8)
    else:
        raise ValueError(f"unknown labelling rule {rule!r}")
    images = (patterns * 255).reshape(16, 1, 2, 2)
    return Dataset(images, labels, 2, weights=np.full(16, 1 / 16))
