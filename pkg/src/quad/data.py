"""Multimodal datasets: synthetic generation, tabular ingestion, noise, splits, z-scoring."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Base class for problems with input data."""


class RowCountMismatch(DataError):
    pass


class NonNumericCell(DataError):
    pass


class UnseenLabel(DataError):
    pass


@dataclass(frozen=True)
class MultimodalSample:
    features: list
    label: int


@dataclass(frozen=True)
class DatasetSpec:
    n_modalities: int = 3
    n_classes: int = 4
    dims: tuple = (32, 32, 32)
    n_samples: int = 2000
    separation: tuple = (6.0, 6.0, 6.0)
    seed: int = 0

    def validate(self) -> None:
        if self.n_modalities < 1:
            raise DataError("n_modalities must be >= 1")
        if self.n_classes < 2:
            raise DataError("n_classes must be >= 2")
        if len(self.dims) != self.n_modalities or any(d < 1 for d in self.dims):
            raise DataError(f"dims {self.dims} must list {self.n_modalities} positive sizes")
        if len(self.separation) != self.n_modalities:
            raise DataError(f"separation {self.separation} must list {self.n_modalities} values")
        if any(s < 0 for s in self.separation):
            raise DataError("separation must be non-negative")
        if self.n_samples < self.n_classes:
            raise DataError("n_samples must be >= n_classes")


@dataclass(frozen=True)
class NoiseSpec:
    modalities: tuple = (0,)
    sigma: float = 0.0
    fraction: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class MultimodalDataset:
    """Per-modality feature matrices ``(N, d_m)`` plus integer labels in ``[0, C)``.

    ``centers`` holds the noiseless per-class means (``(C, d_m)`` per modality)
    when they are known, i.e. for synthetic data. ``noised`` flags rows that
    went through :func:`inject_noise`.
    """

    modalities: tuple
    labels: np.ndarray
    n_classes: int
    centers: tuple | None = None
    noised: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        for x in self.modalities:
            if x.ndim != 2 or x.shape[0] != n:
                raise DataError(f"modality shape {x.shape} does not match {n} labels")
            if not np.all(np.isfinite(x)):
                raise DataError("features contain NaN or Inf")
            x.setflags(write=False)
        self.labels.setflags(write=False)
        if self.noised is None:
            object.__setattr__(self, "noised", np.zeros(n, dtype=bool))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def dims(self) -> tuple:
        return tuple(x.shape[1] for x in self.modalities)

    def sample(self, i: int) -> MultimodalSample:
        return MultimodalSample([x[i] for x in self.modalities], int(self.labels[i]))

    def subset(self, idx) -> "MultimodalDataset":
        idx = np.asarray(idx, dtype=int)
        return replace(
            self,
            modalities=tuple(x[idx].copy() for x in self.modalities),
            labels=self.labels[idx].copy(),
            noised=self.noised[idx].copy(),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for x in self.modalities:
            h.update(np.ascontiguousarray(x).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def generate_synthetic(spec: DatasetSpec) -> MultimodalDataset:
    """Isotropic Gaussian class clusters; ``separation[m]`` scales modality m's class centers."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = tuple(rng.standard_normal((spec.n_classes, d)) * s
                    for d, s in zip(spec.dims, spec.separation))
    labels = np.arange(spec.n_samples) % spec.n_classes
    rng.shuffle(labels)
    feats = tuple(c[labels] + rng.standard_normal((spec.n_samples, c.shape[1])) for c in centers)
    return MultimodalDataset(feats, labels.astype(np.int64), spec.n_classes, centers=centers)


def inject_noise(dataset: MultimodalDataset, noise: NoiseSpec) -> MultimodalDataset:
    """Add N(0, sigma^2) to ``noise.modalities`` of a seeded ``floor(fraction * N)`` subset of rows."""
    if noise.sigma < 0 or not 0.0 <= noise.fraction <= 1.0:
        raise DataError(f"invalid noise spec {noise}")
    for m in noise.modalities:
        if not 0 <= m < dataset.n_modalities:
            raise DataError(f"noise target modality {m} out of range")
    n = len(dataset)
    k = int(np.floor(noise.fraction * n))
    if noise.sigma == 0 or k == 0 or not noise.modalities:
        return dataset
    rng = np.random.default_rng(noise.seed)
    rows = np.sort(rng.choice(n, size=k, replace=False))
    feats = list(dataset.modalities)
    for m in sorted(set(noise.modalities)):
        x = feats[m].copy()
        x[rows] += noise.sigma * rng.standard_normal((k, x.shape[1]))
        feats[m] = x
    noised = dataset.noised.copy()
    noised[rows] = True
    return replace(dataset, modalities=tuple(feats), noised=noised)


def split(dataset: MultimodalDataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Class-stratified, seeded, disjoint and exhaustive split; returns one dataset per ratio."""
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise DataError(f"ratios {tuple(ratios)} must be positive and sum to 1")
    k = len(ratios)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in range(k)]
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < k:
            raise DataError(f"class {c} has {len(idx)} samples, fewer than {k} splits")
        idx = rng.permutation(idx)
        counts = _allocate(len(idx), ratios)
        start = 0
        for j, cnt in enumerate(counts):
            parts[j].extend(idx[start:start + cnt].tolist())
            start += cnt
    return tuple(dataset.subset(np.sort(p)) for p in parts)


def _allocate(n: int, ratios: np.ndarray) -> list[int]:
    raw = n * ratios
    counts = np.floor(raw).astype(int)
    for j in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[j] += 1
    # every split sees every class
    for j in range(len(counts)):
        if counts[j] == 0:
            counts[int(np.argmax(counts))] -= 1
            counts[j] = 1
    return counts.tolist()


@dataclass
class Standardizer:
    """Per-modality z-scoring; zero-variance columns keep a unit denominator."""

    means: list = field(default_factory=list)
    stds: list = field(default_factory=list)

    @classmethod
    def fit(cls, train: MultimodalDataset) -> "Standardizer":
        means, stds = [], []
        for x in train.modalities:
            mu = x.mean(axis=0)
            sd = x.std(axis=0)
            sd = np.where(sd > 0, sd, 1.0)
            means.append(mu)
            stds.append(sd)
        return cls(means, stds)

    def transform(self, dataset: MultimodalDataset) -> MultimodalDataset:
        feats = tuple((x - mu) / sd for x, mu, sd in zip(dataset.modalities, self.means, self.stds))
        centers = None
        if dataset.centers is not None:
            centers = tuple((c - mu) / sd for c, mu, sd in zip(dataset.centers, self.means, self.stds))
        return replace(dataset, modalities=feats, centers=centers)


@dataclass(frozen=True)
class Splits:
    train: MultimodalDataset
    val: MultimodalDataset
    test: MultimodalDataset
    scaler: Standardizer | None = None

    @property
    def n_samples(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def check_labels_seen(train: MultimodalDataset, other: MultimodalDataset) -> None:
    unseen = sorted(set(np.unique(other.labels)) - set(np.unique(train.labels)))
    if unseen:
        raise UnseenLabel(f"labels {unseen} do not occur in the training split")


def prepare(dataset: MultimodalDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0,
            normalize: bool = True) -> Splits:
    """Split, then z-score every part with statistics fitted on the train part only."""
    train, val, test = split(dataset, ratios, seed)
    check_labels_seen(train, val)
    check_labels_seen(train, test)
    if not normalize:
        return Splits(train, val, test)
    scaler = Standardizer.fit(train)
    return Splits(scaler.transform(train), scaler.transform(val), scaler.transform(test), scaler)


def _read_rows(path: Path, delimiter: str, header: bool) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for r, row in enumerate(reader):
            if header and r == 0:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise NonNumericCell(f"{path}: row {r + 1}, column {c + 1}: {cell!r} is not numeric") from None
            rows.append(vals)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise DataError(f"{path}: ragged rows with widths {sorted(widths)}")
    arr = np.array(rows, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: NaN or Inf values")
    return arr


def read_tabular(paths: Sequence, label_path, delimiter: str = ",", header: bool = False) -> MultimodalDataset:
    """Read one delimiter-separated file per modality plus a single-column label file."""
    paths = [Path(p) for p in paths]
    feats = [_read_rows(p, delimiter, header) for p in paths]
    raw_labels = _read_rows(Path(label_path), delimiter, header)
    counts = {str(p): len(x) for p, x in zip(paths, feats)}
    counts[str(label_path)] = len(raw_labels)
    if len(set(counts.values())) != 1:
        detail = ", ".join(f"{k}={v}" for k, v in counts.items())
        raise RowCountMismatch(f"row counts disagree: {detail}")
    if raw_labels.ndim != 2 or raw_labels.shape[1] != 1:
        raise DataError(f"{label_path}: expected a single label column")
    lab = raw_labels[:, 0]
    if np.any(lab != np.round(lab)):
        raise DataError(f"{label_path}: labels must be integers")
    classes, labels = np.unique(lab.astype(np.int64), return_inverse=True)
    return MultimodalDataset(tuple(feats), labels.astype(np.int64), len(classes))


def load_tabular(paths: Sequence, label_path, ratios=(0.8, 0.1, 0.1), seed: int = 0,
                 delimiter: str = ",", header: bool = False) -> Splits:
    return prepare(read_tabular(paths, label_path, delimiter, header), ratios, seed)


def write_tabular(dataset: MultimodalDataset, out_dir, delimiter: str = ",") -> list:
    """Write the dataset in the layout :func:`read_tabular` expects; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for m, x in enumerate(dataset.modalities):
        p = out / f"modality_{m}.csv"
        np.savetxt(p, x, delimiter=delimiter, fmt="%.17g")
        written.append(p)
    p = out / "labels.csv"
    np.savetxt(p, dataset.labels, fmt="%d")
    written.append(p)
    return written
