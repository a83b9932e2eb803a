"""EasyCore — Datasets: Gaussian-cluster generation, CSV ingestion, subsetting."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..errors import SelectionError, ValidationError
from .io import read_rows, write_rows, write_yaml
from .random import generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with labels and stable sample ids."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    ids: np.ndarray = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            features = features.reshape(len(features), -1)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.arange(len(labels), dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if not (len(features) == len(labels) == len(ids)):
            raise ValidationError(
                f"dataset columns disagree: {len(features)} rows, {len(labels)} labels, {len(ids)} ids"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValidationError(f"labels must lie in [0, {self.class_count})")
        if len(np.unique(ids)) != len(ids):
            raise ValidationError("dataset ids must be unique")
        for name, value in (("features", features), ("labels", labels), ("ids", ids)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def positions(self, indices):
        """Row positions of the given ids."""
        lookup = {int(i): p for p, i in enumerate(self.ids)}
        try:
            return np.array([lookup[int(i)] for i in indices], dtype=np.int64)
        except KeyError as e:
            raise SelectionError(f"unknown sample id {e.args[0]}") from None

    def class_histogram(self):
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class ClusterConfig:
    centers: Tuple[Tuple[float, float], ...]
    train_counts: Tuple[int, ...]
    test_counts: Tuple[int, ...]
    stds: Tuple[float, ...]
    class_of_cluster: Optional[Tuple[int, ...]] = field(default=None)

    @classmethod
    def six_clusters(cls):
        """Six clusters, two classes; 1200 train and 3000 test points."""
        return cls(
            centers=((-12.0, 0.0), (-6.0, 0.0), (-6.0, -12.0), (0.0, 12.0), (0.0, 0.0), (6.0, 0.0)),
            train_counts=(100, 100, 400, 400, 100, 100),
            test_counts=(250, 250, 1000, 1000, 250, 250),
            stds=(2.3, 2.3, 4.6, 4.6, 2.3, 2.3),
        )

    def classes(self):
        if self.class_of_cluster is None:
            return tuple(i % 2 for i in range(len(self.centers)))
        return tuple(int(c) for c in self.class_of_cluster)

    def validate(self):
        lengths = {len(self.centers), len(self.train_counts), len(self.test_counts),
                   len(self.stds), len(self.classes())}
        problems = []
        if not self.centers:
            problems.append("clusters: at least one cluster is required")
        if len(lengths) != 1:
            problems.append(
                "clusters: centers, train_counts, test_counts, stds and class_of_cluster must have equal length"
            )
        if any(int(c) <= 0 for c in tuple(self.train_counts) + tuple(self.test_counts)):
            problems.append("clusters: counts must be positive")
        if any(float(s) < 0 for s in self.stds):
            problems.append("clusters: stds must be nonnegative")
        if any(c < 0 for c in self.classes()):
            problems.append("clusters: class indices must be nonnegative")
        if problems:
            raise ValidationError("invalid cluster config", problems)
        return self


def generate_clusters(config, seed):
    """Draw train and test sets as center + std * standard-normal pairs.

    Per cluster the train points are drawn before the test points, from one
    Philox stream keyed by (seed, "data").
    """
    config.validate()
    rng = generator(seed, "data")
    classes = config.classes()
    class_count = max(max(classes) + 1, 2)
    parts = {"train": ([], []), "test": ([], [])}
    for i, (cx, cy) in enumerate(config.centers):
        center = np.array([cx, cy], dtype=np.float64)
        for split, count in (("train", config.train_counts[i]), ("test", config.test_counts[i])):
            points = rng.standard_normal((int(count), 2)) * float(config.stds[i]) + center
            parts[split][0].append(points)
            parts[split][1].append(np.full(int(count), classes[i], dtype=np.int64))
    train = Dataset(np.vstack(parts["train"][0]), np.concatenate(parts["train"][1]), class_count)
    test = Dataset(np.vstack(parts["test"][0]), np.concatenate(parts["test"][1]), class_count)
    logger.info("generated %d train / %d test points from %d clusters", len(train), len(test), len(config.centers))
    return train, test


def load_csv_dataset(path, header=False, scale=False, class_count=None):
    """Load feature columns followed by one integer label column.

    Args:
        path: CSV file.
        header: Skip the first row.
        scale: Min-max scale each feature column to [0, 1].
        class_count: Override max(label) + 1.
    """
    _, rows = read_rows(path, header=False)
    if header:
        rows = rows[1:]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise ValidationError(f"{path}: need at least one feature column and a label column")
    features, labels = [], []
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise ValidationError(f"{path}:{lineno}: ragged row ({len(row)} fields, expected {width})")
        try:
            features.append([float(cell) for cell in row[:-1]])
            labels.append(int(row[-1].strip()))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric field") from None
        if labels[-1] < 0:
            raise ValidationError(f"{path}:{lineno}: negative label {labels[-1]}")
    features = np.array(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise ValidationError(f"{path}: non-finite feature value")
    if scale:
        lo = features.min(axis=0)
        span = features.max(axis=0) - lo
        features = np.where(span > 0, (features - lo) / np.where(span > 0, span, 1.0), 0.0)
    labels = np.array(labels, dtype=np.int64)
    count = int(labels.max()) + 1 if class_count is None else int(class_count)
    return Dataset(features, labels, count)


def save_csv_dataset(data, path, header=True):
    columns = [f"x{j}" for j in range(data.dim)] + ["label"]
    rows = ([*map(float, x), int(y)] for x, y in zip(data.features, data.labels))
    return write_rows(path, columns if header else None, rows)


def save_generated(train, test, config, seed, out_dir):
    """Write train/test CSVs and a dataset manifest next to them."""
    train_path = save_csv_dataset(train, os.path.join(out_dir, "train.csv"))
    test_path = save_csv_dataset(test, os.path.join(out_dir, "test.csv"))
    manifest = {
        "seed": int(seed),
        "clusters": {
            "centers": [list(map(float, c)) for c in config.centers],
            "train_counts": [int(c) for c in config.train_counts],
            "test_counts": [int(c) for c in config.test_counts],
            "stds": [float(s) for s in config.stds],
            "class_of_cluster": list(config.classes()),
        },
        "rows": {"train": len(train), "test": len(test)},
        "files": {"train": train_path, "test": test_path},
    }
    write_yaml(os.path.join(out_dir, "dataset.yaml"), manifest)
    return train_path, test_path


def subset(data, indices):
    """Rows for `indices` (ids, in the given order); original ids are kept."""
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise SelectionError("duplicate id in subset indices")
    rows = data.positions(indices) if indices else np.zeros(0, dtype=np.int64)
    return Dataset(
        data.features[rows].reshape(len(rows), data.dim),
        data.labels[rows],
        data.class_count,
        data.ids[rows],
    )
