"""Bundled toy problems and the CSV dataset format.

A dataset is a pair of CSV files ``<name>.train.csv`` / ``<name>.valid.csv``
with a header row, feature columns, then an integer ``label`` column.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .hashing import sha3_512

BUNDLED = ("xor", "two_spirals", "stripes")


@dataclass
class Dataset:
    name: str
    train_X: np.ndarray
    train_y: np.ndarray
    valid_X: np.ndarray
    valid_y: np.ndarray
    num_classes: int
    metric: str = "accuracy"

    def __post_init__(self):
        for X, y in ((self.train_X, self.train_y), (self.valid_X, self.valid_y)):
            if X.ndim != 2 or X.shape[0] != y.shape[0]:
                raise ValueError(f"{self.name}: features and labels disagree")
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValueError(f"{self.name}: label out of range")
        if self.valid_y.size == 0:
            raise ValueError(f"{self.name}: validation set is empty")
        if self.train_X.shape[1] != self.valid_X.shape[1]:
            raise ValueError(f"{self.name}: train and validation widths differ")

    @property
    def input_width(self) -> int:
        return self.train_X.shape[1]


@dataclass
class Problem:
    """A training problem as chosen by governance: data plus quality metric."""

    problem_id: str
    dataset: Dataset

    @property
    def metric(self) -> str:
        return self.dataset.metric


# ---------------------------------------------------------------- generators


def xor() -> Dataset:
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    return Dataset("xor", X, y, X.copy(), y.copy(), 2)


def _spirals(n_per_class: int, rng: np.random.Generator, noise: float):
    t = np.sqrt(rng.uniform(0.0, 1.0, n_per_class)) * 3.0 * np.pi
    r = t / (3.0 * np.pi)
    a = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    b = -a
    X = np.concatenate([a, b]) + rng.normal(0.0, noise, (2 * n_per_class, 2))
    y = np.concatenate([np.zeros(n_per_class, int), np.ones(n_per_class, int)])
    perm = rng.permutation(2 * n_per_class)
    return X[perm], y[perm]


def two_spirals(seed: int = 7, n_train: int = 400, n_valid: int = 200, noise: float = 0.02) -> Dataset:
    rng = np.random.default_rng(seed)
    X, y = _spirals((n_train + n_valid) // 2, rng, noise)
    return Dataset("two_spirals", X[:n_train], y[:n_train], X[n_train:], y[n_train:], 2)


def stripes(seed: int = 11, n_train: int = 1000, n_valid: int = 500, width: int = 16, noise: float = 0.3) -> Dataset:
    """Noisy square waves: class 0 has period 4, class 1 has period 8, random phase."""
    rng = np.random.default_rng(seed)
    n = n_train + n_valid
    y = rng.integers(0, 2, n)
    period = np.where(y == 0, 4, 8)
    phase = rng.integers(0, 8, n)
    pos = np.arange(width)[None, :] + phase[:, None]
    X = ((pos % period[:, None]) < period[:, None] // 2).astype(np.float64)
    X += rng.normal(0.0, noise, X.shape)
    return Dataset("stripes", X[:n_train], y[:n_train], X[n_train:], y[n_train:], 2)


GENERATORS = {"xor": xor, "two_spirals": two_spirals, "stripes": stripes}


# ---------------------------------------------------------------- csv


def to_csv(X: np.ndarray, y: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
    for row, label in zip(X, y):
        w.writerow([repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def from_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][-1] != "label":
        raise ValueError("dataset CSV needs a header ending in 'label'")
    body = [r for r in rows[1:] if r]
    X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), len(rows[0]) - 1)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return X, y


def write_dataset(ds: Dataset, directory: Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train = directory / f"{ds.name}.train.csv"
    valid = directory / f"{ds.name}.valid.csv"
    train.write_text(to_csv(ds.train_X, ds.train_y))
    valid.write_text(to_csv(ds.valid_X, ds.valid_y))
    return train, valid


def load_dataset(train_path, valid_path, name: str | None = None, num_classes: int | None = None,
                 metric: str = "accuracy") -> Dataset:
    train_X, train_y = from_csv(Path(train_path).read_text())
    valid_X, valid_y = from_csv(Path(valid_path).read_text())
    if num_classes is None:
        num_classes = max(2, int(max(train_y.max(initial=0), valid_y.max(initial=0))) + 1)
    name = name or Path(train_path).name.removesuffix(".train.csv")
    return Dataset(name, train_X, train_y, valid_X, valid_y, num_classes, metric)


def bundled_path(filename: str) -> Path:
    return Path(str(resources.files("coinai").joinpath("datasets", filename)))


def bundled_dataset(name: str) -> Dataset:
    if name not in BUNDLED:
        raise KeyError(f"no bundled dataset {name!r}; choose from {BUNDLED}")
    return load_dataset(bundled_path(f"{name}.train.csv"), bundled_path(f"{name}.valid.csv"), name)


def dataset_files(ds_paths: tuple[Path, Path]) -> dict[str, bytes]:
    """Raw file bytes keyed by file name, for storing datasets with keepers."""
    return {Path(p).name: Path(p).read_bytes() for p in ds_paths}


def dataset_digest(ds: Dataset) -> bytes:
    return sha3_512((to_csv(ds.train_X, ds.train_y) + to_csv(ds.valid_X, ds.valid_y)).encode())
