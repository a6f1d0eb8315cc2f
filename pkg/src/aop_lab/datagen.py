"""Synthetic data: the two-Gaussian special/common-feature model, a multi-class
blob task built the same way, and CSV ingestion.

All normal draws come from numpy's ``Generator.standard_normal`` (ziggurat
sampler over PCG64), seeded explicitly, so output is bitwise reproducible.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

PROVENANCES = ("id_train", "id_test", "ood")


@dataclass(frozen=True)
class GaussianModelParams:
    d: int
    eta: float
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")

    def mean_id(self) -> np.ndarray:
        return np.concatenate([[1.0], np.full(self.d, self.eta)])

    def mean_ood(self) -> np.ndarray:
        return np.concatenate([[0.0], np.full(self.d, self.eta)])


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: Optional[np.ndarray]
    provenance: str

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got {self.inputs.shape}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "ood":
            if self.labels is not None:
                raise ValueError("OOD datasets carry no labels")
        else:
            if self.labels is None:
                raise ValueError(f"{self.provenance} dataset needs labels")
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.inputs),):
                raise ValueError("labels must have one entry per row")

    def __len__(self):
        return len(self.inputs)


def _seed_words(seed) -> list:
    if isinstance(seed, (tuple, list)):
        return [int(v) for v in seed]
    return [int(seed)]


def _signed_gaussian(mean: np.ndarray, sigma: float, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    signs = rng.integers(0, 2, size=n)
    x = sigma * rng.standard_normal((n, mean.size))
    x += np.where(signs[:, None] == 1, 1.0, -1.0) * mean
    return x, signs


def sample_id(params: GaussianModelParams, n: int, seed: Optional[int] = None) -> LabeledDataset:
    """Rows ``y * mu_id + sigma * eps``; label 1 encodes y=+1 and 0 encodes y=-1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([*_seed_words(params.seed if seed is None else seed), 0])
    x, y = _signed_gaussian(params.mean_id(), params.sigma, n, rng)
    return LabeledDataset(x, y, "id_test")


def sample_ood(params: GaussianModelParams, n: int, seed: Optional[int] = None) -> LabeledDataset:
    """Rows ``q * mu_ood + sigma * eps`` with the random sign ``q`` discarded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([*_seed_words(params.seed if seed is None else seed), 1])
    x, _ = _signed_gaussian(params.mean_ood(), params.sigma, n, rng)
    return LabeledDataset(x, None, "ood")


@dataclass(frozen=True)
class BlobTaskSpec:
    """Multi-class version of the special/common feature model.

    Class ``c`` has mean ``class_separation * v_c`` on the special dims and
    ``common_mean * s_c`` on the common dims, where ``s_c`` is a fixed random
    sign pattern. OOD rows draw a pseudo-class ``q`` uniformly and use the same
    common-dim mean ``common_mean * s_q`` (so the common dims are distributed
    identically for ID and OOD), while their special-dim mean is
    ``ood_shift * 1 / sqrt(special_dims)``, a location no ID class occupies.
    """

    num_classes: int = 4
    special_dims: int = 4
    common_dims: int = 200
    class_separation: float = 3.0
    common_mean: float = 0.1
    noise_sigma: float = 1.0
    ood_shift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.special_dims < 1:
            raise ValueError("special_dims must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.common_dims < 0 or self.noise_sigma < 0:
            raise ValueError("common_dims and noise_sigma must be >= 0")

    @property
    def input_dim(self) -> int:
        return self.special_dims + self.common_dims

    def special_means(self) -> np.ndarray:
        if self.special_dims >= self.num_classes:
            base = np.eye(self.num_classes, self.special_dims)
        else:
            # fewer dims than classes: seeded random unit directions (a line for one dim)
            rng = np.random.default_rng([self.seed, 101])
            base = rng.standard_normal((self.num_classes, self.special_dims))
            base /= np.linalg.norm(base, axis=1, keepdims=True)
            if self.special_dims == 1:
                base = np.linspace(-1.0, 1.0, self.num_classes)[:, None]
        return self.class_separation * base

    def common_signs(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 102])
        return np.where(rng.integers(0, 2, size=(self.num_classes, self.common_dims)) == 1, 1.0, -1.0)

    def ood_special_mean(self) -> np.ndarray:
        return np.full(self.special_dims, self.ood_shift / np.sqrt(self.special_dims))


def _balanced_labels(num_classes: int, n: int, rng) -> np.ndarray:
    labels = np.arange(n) % num_classes
    return rng.permutation(labels)


def _blob_rows(spec: BlobTaskSpec, classes: np.ndarray, special_mean: np.ndarray, rng) -> np.ndarray:
    n = len(classes)
    common = spec.common_mean * spec.common_signs()[classes]
    mean = np.concatenate([special_mean, common], axis=1)
    return mean + spec.noise_sigma * rng.standard_normal((n, spec.input_dim))


def make_blob_task(spec: BlobTaskSpec, n_train: int, n_test: int, n_ood: int):
    """Return ``(train, test, ood)`` datasets, class-balanced."""
    if min(n_train, n_test, n_ood) < spec.num_classes:
        raise ValueError("each split needs at least num_classes samples")
    means = spec.special_means()
    out = []
    for stream, (n, prov) in enumerate([(n_train, "id_train"), (n_test, "id_test")]):
        rng = np.random.default_rng([spec.seed, stream])
        y = _balanced_labels(spec.num_classes, n, rng)
        out.append(LabeledDataset(_blob_rows(spec, y, means[y], rng), y, prov))
    rng = np.random.default_rng([spec.seed, 2])
    q = _balanced_labels(spec.num_classes, n_ood, rng)
    special = np.broadcast_to(spec.ood_special_mean(), (n_ood, spec.special_dims))
    out.append(LabeledDataset(_blob_rows(spec, q, special, rng), None, "ood"))
    return tuple(out)


def make_outliers(spec: BlobTaskSpec, n: int, seed: int, spread: float = 1.5) -> np.ndarray:
    """Auxiliary outliers for outlier-exposure training.

    Special dims are drawn uniformly from a box around the origin scaled by
    ``spread * class_separation``; common dims follow the shared distribution.
    Uses its own seed stream, disjoint from the evaluation OOD set.
    """
    rng = np.random.default_rng([seed, 9001])
    q = rng.integers(0, spec.num_classes, size=n)
    half = spread * spec.class_separation
    special = rng.uniform(-half, half, size=(n, spec.special_dims))
    return _blob_rows(spec, q, special, rng)


class CsvFormatError(ValueError):
    pass


def load_csv(path, header: bool = False, provenance: Optional[str] = None) -> LabeledDataset:
    """Read ``f0,...,fk,label`` rows; label ``-1`` marks an OOD row.

    A file must be all-OOD or all-labelled. ``provenance`` defaults to
    ``ood`` or ``id_train`` accordingly.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                for col, c in enumerate(row):
                    try:
                        float(c)
                    except ValueError:
                        raise CsvFormatError(f"{path}:{lineno}:{col + 1}: non-numeric cell {c!r}") from None
            if rows and len(values) != len(rows[0]):
                raise CsvFormatError(
                    f"{path}:{lineno}: ragged row with {len(values)} cells, expected {len(rows[0])}")
            if len(values) < 2:
                raise CsvFormatError(f"{path}:{lineno}: need at least one feature and a label")
            rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: empty dataset")
    data = np.array(rows, dtype=np.float64)
    x, lab = data[:, :-1], data[:, -1]
    is_ood = lab == -1
    if is_ood.any() and not is_ood.all():
        raise CsvFormatError(f"{path}: mixes OOD (-1) and labelled rows")
    if is_ood.all():
        return LabeledDataset(x, None, provenance or "ood")
    if np.any(lab != np.round(lab)) or lab.min() < 0:
        raise CsvFormatError(f"{path}: labels must be non-negative integers or -1")
    return LabeledDataset(x, lab.astype(np.int64), provenance or "id_train")


def save_csv(dataset: LabeledDataset, path, header: bool = False) -> None:
    """Write a dataset in the ``load_csv`` format; values use ``repr`` so reloads are exact."""
    path = Path(path)
    labels = dataset.labels if dataset.labels is not None else np.full(len(dataset), -1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"f{i}" for i in range(dataset.inputs.shape[1])] + ["label"])
        for row, lab in zip(dataset.inputs, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(lab)])
