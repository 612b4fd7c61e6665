"""Dataset provisioning: synthetic blobs, client partitioning, IDX ingestion.

The IDX binary container (big-endian; magic 0x00000803 for image tensors,
0x00000801 for label vectors) is supported for both reading and writing so
ingestion can be round-trip tested without network access.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload: bad magic, truncation, or count mismatch."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{len(self.features)} samples"
            )
        if len(self.labels) < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients.

    ``mode`` is "iid" (shuffle, near-equal split) or "dirichlet"
    (per-class client proportions drawn from Dirichlet(alpha); smaller
    alpha means stronger label skew).
    """

    num_clients: int
    seed: int
    mode: str = "iid"
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.mode not in ("iid", "dirichlet"):
            raise ValueError(f"mode must be 'iid' or 'dirichlet', got {self.mode!r}")
        if self.mode == "dirichlet":
            if self.alpha is None or not self.alpha > 0:
                raise ValueError(f"dirichlet mode needs alpha > 0, got {self.alpha}")


def gen_synthetic(
    num_classes: int,
    num_features: int,
    num_samples: int,
    separation: float,
    seed: int,
) -> Dataset:
    """Gaussian blobs: unit-variance classes with means drawn on a sphere
    of radius ``separation``.

    Sample counts are as equal as possible (the first ``N mod K`` classes
    get one extra). Deterministic per seed.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if num_features < 1:
        raise ValueError(f"num_features must be >= 1, got {num_features}")
    if num_samples < num_classes:
        raise ValueError(
            f"num_samples ({num_samples}) must be >= num_classes ({num_classes})"
        )
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")

    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(num_classes, num_features))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    means = separation * directions / norms

    base, extra = divmod(num_samples, num_classes)
    feature_blocks = []
    label_blocks = []
    for c in range(num_classes):
        count = base + (1 if c < extra else 0)
        feature_blocks.append(means[c] + rng.normal(size=(count, num_features)))
        label_blocks.append(np.full(count, c, dtype=np.int64))
    return Dataset(
        features=np.concatenate(feature_blocks),
        labels=np.concatenate(label_blocks),
        num_classes=num_classes,
    )


def partition_indices(ds: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Index sets per client: pairwise disjoint, all non-empty, exact cover.

    Dirichlet draws that leave a client empty are resampled with an
    incremented seed, up to 100 attempts.
    """
    n = len(ds)
    if spec.num_clients > n:
        raise ValueError(
            f"cannot split {n} samples across {spec.num_clients} clients"
        )
    if spec.mode == "iid":
        rng = np.random.default_rng(spec.seed)
        return list(np.array_split(rng.permutation(n), spec.num_clients))

    for attempt in range(100):
        rng = np.random.default_rng(spec.seed + attempt)
        buckets: list[list[int]] = [[] for _ in range(spec.num_clients)]
        for c in range(ds.num_classes):
            class_idx = rng.permutation(np.flatnonzero(ds.labels == c))
            props = rng.dirichlet(np.full(spec.num_clients, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * len(class_idx)).astype(int)
            for m, part in enumerate(np.split(class_idx, cuts)):
                buckets[m].extend(part.tolist())
        if all(buckets):
            return [np.asarray(b, dtype=np.int64) for b in buckets]
    raise ValueError(
        "could not produce non-empty dirichlet shards in 100 attempts; "
        "increase the sample count or alpha"
    )


def partition(ds: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split a dataset into per-client shards (class count preserved)."""
    return [
        Dataset(
            features=ds.features[idx],
            labels=ds.labels[idx],
            num_classes=ds.num_classes,
        )
        for idx in partition_indices(ds, spec)
    ]


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise IdxFormatError(
            f"truncated {what}: need {offset + count} bytes, file has {len(data)}"
        )
    return data[offset : offset + count]


def _parse_idx_images(data: bytes) -> np.ndarray:
    magic, count, rows, cols = struct.unpack(
        ">IIII", _read_exact(data, 0, 16, "image header")
    )
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"bad image magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})"
        )
    payload = _read_exact(data, 16, count * rows * cols, "image payload")
    pixels = np.frombuffer(payload, dtype=np.uint8)
    return pixels.reshape(count, rows * cols)


def _parse_idx_labels(data: bytes) -> np.ndarray:
    magic, count = struct.unpack(">II", _read_exact(data, 0, 8, "label header"))
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"bad label magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})"
        )
    payload = _read_exact(data, 8, count, "label payload")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(path_images: str, path_labels: str) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    with open(path_images, "rb") as f:
        images = _parse_idx_images(f.read())
    with open(path_labels, "rb") as f:
        labels = _parse_idx_labels(f.read())
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    num_classes = int(labels.max()) + 1 if len(labels) else 0
    if num_classes < 2:
        raise IdxFormatError("label file must contain at least two classes")
    if len(labels) < num_classes:
        raise IdxFormatError(
            f"{len(labels)} samples cannot cover {num_classes} classes"
        )
    return Dataset(
        features=images.astype(np.float64) / 255.0,
        labels=labels,
        num_classes=num_classes,
    )


def write_idx(
    ds: Dataset,
    path_images: str,
    path_labels: str,
    rows: int | None = None,
    cols: int | None = None,
) -> None:
    """Write a dataset with features in [0, 1] as an IDX pair.

    Features are quantized to the 1/255 grid. Image geometry defaults to a
    single row of the full feature width.
    """
    n, d = ds.features.shape
    if rows is None or cols is None:
        rows, cols = 1, d
    if rows * cols != d:
        raise ValueError(f"rows*cols = {rows * cols} does not match {d} features")
    if ds.features.min() < 0.0 or ds.features.max() > 1.0:
        raise ValueError("features must lie in [0, 1] to be written as pixels")
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    with open(path_images, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(path_labels, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())
