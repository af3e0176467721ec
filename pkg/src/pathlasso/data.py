"""Datasets: synthetic hypercube clusters, splitting, standardization and CSV I/O.

All randomness goes through ``numpy.random.Generator`` with the PCG64 bit
generator; Gaussian draws use numpy's ziggurat sampler.  Both are stable
across platforms for a given seed.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ParseError


@dataclass
class Dataset:
    x: np.ndarray
    labels: Optional[np.ndarray] = None
    train_idx: Optional[np.ndarray] = None
    val_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise ValueError("x must be a matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.x.shape[0],):
                raise ValueError("labels must have one entry per row")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def part(self, name: str):
        """Rows and labels of the ``train``, ``val`` or ``test`` split (or ``all``)."""
        if name == "all":
            return self.x, self.labels
        idx = getattr(self, f"{name}_idx")
        if idx is None:
            raise ConfigError(f"dataset has no {name} split")
        return self.x[idx], None if self.labels is None else self.labels[idx]

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return np.asarray(x, dtype=float)
        return np.asarray(x, dtype=float) * self.scale + self.mean


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def generate_hypercube(
    clusters_dim: int = 4,
    points_per_cluster: int = 100,
    cluster_std: float = 0.1,
    noise_std: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian clusters at the ``2**m`` vertices of ``{0,1}**m``; label = vertex index.

    Noise is drawn from its own stream so the noisy and noiseless datasets for
    the same seed share cluster positions.
    """
    if clusters_dim < 1 or points_per_cluster < 1:
        raise ConfigError("need clusters_dim >= 1 and points_per_cluster >= 1")
    cluster_rng, noise_rng = (make_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    vertices = np.array(list(itertools.product((0.0, 1.0), repeat=clusters_dim)))
    labels = np.repeat(np.arange(len(vertices)), points_per_cluster)
    centers = vertices[labels]
    x = centers + cluster_std * cluster_rng.standard_normal(centers.shape)
    noise = noise_rng.standard_normal(centers.shape)
    if noise_std > 0:
        x = x + noise_std * noise
    return Dataset(x, labels)


def split(dataset: Dataset, test_frac: float = 0.2, val_frac: float = 0.1, seed: int = 0) -> Dataset:
    """Shuffle, hold out ``test_frac`` for testing, then ``val_frac`` of the rest for validation."""
    if not (0 < test_frac < 1 and 0 < val_frac < 1 and test_frac + val_frac < 1):
        raise ConfigError("fractions must lie in (0, 1) and sum to less than 1")
    n = dataset.n
    perm = make_rng(seed).permutation(n)
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * (n - n_test)))
    n_train = n - n_test - n_val
    if min(n_test, n_val, n_train) <= 0:
        raise ConfigError(f"split of {n} rows leaves an empty part")
    return replace(
        dataset,
        test_idx=np.sort(perm[:n_test]),
        val_idx=np.sort(perm[n_test:n_test + n_val]),
        train_idx=np.sort(perm[n_test + n_val:]),
    )


def standardize(dataset: Dataset) -> Dataset:
    """Zero mean, unit variance per column, fitted on the training rows."""
    fit_rows = dataset.x if dataset.train_idx is None else dataset.x[dataset.train_idx]
    mean = fit_rows.mean(axis=0)
    scale = fit_rows.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return replace(dataset, x=(dataset.x - mean) / scale, mean=mean, scale=scale)


def load_csv(path, has_labels: bool = False, skip_header: bool = False) -> Dataset:
    """Read a rectangular numeric CSV; with ``has_labels`` the last column holds integer labels."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for r, row in enumerate(reader):
            if r == 0 and skip_header:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"row {r + 1} has {len(row)} columns, expected {width}", row=r + 1)
            values = []
            for c, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"non-numeric cell {cell!r} at row {r + 1}, column {c + 1}", row=r + 1, column=c + 1
                    ) from None
            rows.append(values)
    if not rows:
        raise ParseError(f"{path} contains no data")
    arr = np.array(rows)
    if not has_labels:
        return Dataset(arr)
    if arr.shape[1] < 2:
        raise ParseError("a labelled file needs at least one feature column")
    labels = arr[:, -1]
    if np.any(labels != np.round(labels)):
        raise ParseError("label column must hold integers", column=arr.shape[1])
    return Dataset(arr[:, :-1], labels.astype(np.int64))


def save_csv(dataset: Dataset, path, with_labels: bool = True) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(dataset.x):
            cells = [repr(float(v)) for v in row]
            if with_labels and dataset.labels is not None:
                cells.append(str(int(dataset.labels[i])))
            writer.writerow(cells)


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(matrix):
            writer.writerow([repr(float(v)) for v in row])
