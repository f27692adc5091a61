"""Synthetic datasets, controlled corruption and CSV persistence."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, UsageError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    corruption_mask: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise UsageError(
                f"features {self.features.shape} do not match {self.labels.shape[0]} labels"
            )
        if np.any(np.isnan(self.features)):
            raise UsageError("features contain NaN")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise UsageError(f"labels outside 0..{self.n_classes - 1}")
        if self.corruption_mask is not None:
            self.corruption_mask = np.asarray(self.corruption_mask, dtype=bool)
            if self.corruption_mask.shape != self.labels.shape:
                raise UsageError("corruption mask length differs from the number of samples")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        mask = None if self.corruption_mask is None else self.corruption_mask[idx]
        return Dataset(self.features[idx], self.labels[idx], mask, self.n_classes)

    def without_mask(self) -> "Dataset":
        """The view handed to pipeline stages: ground truth stripped."""
        return replace(self, corruption_mask=None)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "feature-gaussian"
    level: float = 8.0
    fraction: float = 0.5


def gen_blobs(
    n_per_class: int,
    classes: int,
    d: int,
    spread: float,
    seed: int,
    separation: float = 4.0,
) -> Dataset:
    """Isotropic Gaussian clusters, one per class.

    Centres are random directions rescaled so the closest pair sits exactly
    ``separation`` apart; ``spread`` is the per-dimension standard deviation
    around each centre. Samples are shuffled.
    """
    if classes < 2 or d < 2:
        raise UsageError("gen_blobs needs at least 2 classes and 2 dimensions")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, d))
    diff = centres[:, None, :] - centres[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    closest = dist[np.triu_indices(classes, 1)].min()
    centres *= separation / closest
    labels = np.repeat(np.arange(classes), n_per_class)
    features = centres[labels] + spread * rng.standard_normal((len(labels), d))
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], None, classes)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise UsageError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def _pick(m: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= fraction <= 1.0:
        raise UsageError(f"noise fraction {fraction} outside [0, 1]")
    n = int(round(fraction * m))
    mask = np.zeros(m, dtype=bool)
    mask[rng.choice(m, size=n, replace=False)] = True
    return mask


def inject_feature_noise(ds: Dataset, spec: NoiseSpec, seed: int) -> Dataset:
    """Add Gaussian noise to a random subset of samples.

    Per-dimension noise std is ``level / 4`` times the clean feature std, so
    level 4 corrupts at one feature-std. Labels are not touched.
    """
    if spec.kind != "feature-gaussian":
        raise UsageError(f"inject_feature_noise cannot apply {spec.kind!r} noise")
    rng = np.random.default_rng(seed)
    mask = _pick(len(ds), spec.fraction, rng)
    sigma = (spec.level / 4.0) * ds.features.std(axis=0)
    features = ds.features.copy()
    features[mask] += rng.standard_normal((int(mask.sum()), ds.dim)) * sigma
    return Dataset(features, ds.labels.copy(), mask, ds.n_classes)


def inject_label_noise(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Replace the label of a random subset with a different, uniform class."""
    if ds.n_classes < 2:
        raise UsageError("label noise needs at least 2 classes")
    rng = np.random.default_rng(seed)
    mask = _pick(len(ds), fraction, rng)
    labels = ds.labels.copy()
    # an offset in 1..C-1 guarantees a different class
    offsets = rng.integers(1, ds.n_classes, size=int(mask.sum()))
    labels[mask] = (labels[mask] + offsets) % ds.n_classes
    return Dataset(ds.features.copy(), labels, mask, ds.n_classes)


def inject_noise(ds: Dataset, spec: NoiseSpec, seed: int) -> Dataset:
    if spec.kind == "feature-gaussian":
        return inject_feature_noise(ds, spec, seed)
    if spec.kind == "label-flip":
        return inject_label_noise(ds, spec.fraction, seed)
    raise UsageError(f"unknown noise kind {spec.kind!r}")


def save_csv(ds: Dataset, path: str | Path) -> None:
    header = [f"f{j}" for j in range(ds.dim)] + ["label"]
    if ds.corruption_mask is not None:
        header.append("corrupted")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.features[i]] + [int(ds.labels[i])]
            if ds.corruption_mask is not None:
                row.append(int(ds.corruption_mask[i]))
            writer.writerow(row)


def load_csv(path: str | Path, n_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", 1) from None
        n_feat = 0
        while n_feat < len(header) and header[n_feat] == f"f{n_feat}":
            n_feat += 1
        rest = header[n_feat:]
        if n_feat == 0:
            raise ParseError("header must start with f0", 1)
        if rest not in (["label"], ["label", "corrupted"]):
            raise ParseError(f"expected label[,corrupted] after features, got {rest}", 1)
        has_mask = len(rest) == 2
        feats, labels, mask = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                feats.append([float(v) for v in row[:n_feat]])
                labels.append(int(row[n_feat]))
                if has_mask:
                    flag = int(row[n_feat + 1])
                    if flag not in (0, 1):
                        raise ValueError(f"corrupted flag {flag} is not 0/1")
                    mask.append(flag)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    features = np.array(feats, dtype=np.float64).reshape(len(labels), n_feat)
    return Dataset(features, labels, np.array(mask, dtype=bool) if has_mask else None, n_classes)
