"""Dataset loading, preprocessing, augmentation, and splits.

External label values are arbitrary integers; internally labels are the
0-based index of each value's first appearance, with the original values
kept on the dataset so files round-trip exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError
from .rng import stream

__all__ = [
    "Dataset",
    "load_dataset",
    "save_dataset",
    "scale_unit",
    "split",
    "augment_mask",
    "augment_gaussian",
]

DENSE_MAGIC = b"RFKDENSE"
DENSE_VERSION = 1


@dataclass
class Dataset:
    X: np.ndarray  # (N, d) float64
    y: np.ndarray  # (N,) int64, 0-based
    num_classes: int
    id: str
    label_values: tuple[int, ...] = ()  # external value for each internal label
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] < 1:
            raise ValueError("dataset must have at least one sample")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("label count must match sample count")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("dataset contains non-finite feature values")
        if self.y.min() < 0 or self.y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not self.label_values:
            self.label_values = tuple(range(1, self.num_classes + 1))

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]


def _remap_labels(raw: list[int]) -> tuple[np.ndarray, tuple[int, ...]]:
    mapping: dict[int, int] = {}
    for v in raw:
        if v not in mapping:
            mapping[v] = len(mapping)
    y = np.array([mapping[v] for v in raw], dtype=np.int64)
    return y, tuple(mapping.keys())


def _load_csv(path: Path) -> tuple[np.ndarray, list[int]]:
    rows, labels = [], []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                labels.append(int(parts[0]))
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"{path}: line {lineno}: expected {width} fields, got {len(parts)}")
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    return np.asarray(rows, dtype=np.float64), labels


def _load_svmlight(path: Path, num_features: int | None) -> tuple[np.ndarray, list[int]]:
    entries, labels = [], []
    max_index = 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(int(float(parts[0])))
                row = {}
                for tok in parts[1:]:
                    idx, val = tok.split(":")
                    idx = int(idx)
                    if idx < 1:
                        raise ValueError(f"feature index {idx} < 1")
                    row[idx] = float(val)
                    max_index = max(max_index, idx)
                entries.append(row)
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    if not entries:
        raise ValueError(f"{path}: empty dataset file")
    d = num_features or max_index
    if max_index > d:
        raise FormatError(f"{path}: feature index {max_index} exceeds declared width {d}")
    X = np.zeros((len(entries), d))
    for i, row in enumerate(entries):
        for idx, val in row.items():
            X[i, idx - 1] = val
    return X, labels


def _load_dense_binary(path: Path) -> tuple[np.ndarray, list[int]]:
    raw = path.read_bytes()
    if len(raw) < 8 + 1 + 24:
        raise CorruptionError(f"{path}: truncated header")
    if raw[:8] != DENSE_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    version = raw[8]
    if version != DENSE_VERSION:
        raise FormatError(f"{path}: unsupported dense_binary version {version}")
    n, d, _c = struct.unpack_from("<QQQ", raw, 9)
    offset = 9 + 24
    need = offset + 8 * n + 8 * n * d
    if len(raw) != need:
        raise CorruptionError(f"{path}: expected {need} bytes, found {len(raw)}")
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=offset)
    X = np.frombuffer(raw, dtype="<f8", count=n * d, offset=offset + 8 * n).reshape(n, d)
    return X.copy(), [int(v) for v in labels]


def load_dataset(path, format: str = "csv", num_features: int | None = None) -> Dataset:
    """Load a dataset from csv, svmlight, or dense_binary.

    csv: first column is the integer label, the rest are features.
    svmlight: "label index:value ..." with 1-based indices, densified.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if format == "csv":
        X, raw_labels = _load_csv(path)
    elif format == "svmlight":
        X, raw_labels = _load_svmlight(path, num_features)
    elif format == "dense_binary":
        X, raw_labels = _load_dense_binary(path)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    y, label_values = _remap_labels(raw_labels)
    return Dataset(
        X=X,
        y=y,
        num_classes=len(label_values),
        id=path.stem,
        label_values=label_values,
        meta={"source": str(path), "format": format,
              "label_values": list(label_values)},
    )


def save_dataset(path, dataset: Dataset) -> None:
    """Write a dataset in the dense_binary layout (little-endian)."""
    path = Path(path)
    external = np.asarray(dataset.label_values, dtype=np.int64)[dataset.y]
    with open(path, "wb") as fh:
        fh.write(DENSE_MAGIC)
        fh.write(bytes([DENSE_VERSION]))
        fh.write(struct.pack("<QQQ", dataset.num_samples, dataset.input_dim, dataset.num_classes))
        fh.write(external.astype("<i8").tobytes())
        fh.write(dataset.X.astype("<f8").tobytes())


def scale_unit(dataset: Dataset) -> Dataset:
    """Divide features by 256, mapping [0, 256) into [0, 1). Refuses to run twice."""
    if dataset.meta.get("unit_scaled"):
        raise ValueError("dataset is already unit-scaled")
    if dataset.X.min() < 0 or dataset.X.max() >= 256:
        raise ValueError("scale_unit expects feature values in [0, 256)")
    return replace(
        dataset,
        X=dataset.X / 256.0,
        meta={**dataset.meta, "unit_scaled": True},
    )


def split(dataset: Dataset, heldout_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split into (train, heldout); disjoint and exhaustive."""
    if not (0.0 < heldout_fraction < 1.0):
        raise ValueError("heldout_fraction must lie in (0, 1)")
    n = dataset.num_samples
    n_held = int(np.ceil(n * heldout_fraction))
    if n_held == 0 or n_held == n:
        raise ValueError(f"split of {n} samples at fraction {heldout_fraction} leaves an empty part")
    perm = stream(seed, "split").permutation(n)
    held_idx, train_idx = perm[:n_held], perm[n_held:]

    def take(idx, tag):
        return replace(
            dataset,
            X=dataset.X[idx],
            y=dataset.y[idx],
            id=f"{dataset.id}#{tag}",
            meta={**dataset.meta, "split": tag, "split_seed": seed},
        )

    return take(train_idx, "train"), take(held_idx, "heldout")


def augment_mask(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Mask-out noise: each nonzero entry is independently zeroed with probability rate.

    Entries are expected in [0, 1]. Training-time only; never applied to
    held-out or test data.
    """
    if not (0.0 <= rate <= 1.0):
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ValueError("mask-out noise expects entries in [0, 1]")
    keep = rng.random(x.shape) >= rate
    return np.where(x != 0, x * keep, x)


def augment_gaussian(x: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian noise per coordinate. Training-time only."""
    if noise_std < 0:
        raise ValueError(f"noise std must be nonnegative, got {noise_std}")
    x = np.asarray(x, dtype=np.float64)
    if noise_std == 0:
        return x.copy()
    return x + rng.normal(0.0, noise_std, size=x.shape)
