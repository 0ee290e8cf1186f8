"""Dataset ingestion and hierarchy-aligned synthetic data generation."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .taxonomy import Taxonomy


class DataError(ValueError):
    """Malformed dataset file or inconsistent dataset contents."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus leaf-class labels aligned with a taxonomy."""

    features: np.ndarray       # (N, m_in) float64
    labels: np.ndarray         # (N,) int, index into class_names
    class_names: tuple[str, ...]

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        z = np.array(self.labels, dtype=np.intp)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("features must be a non-empty (N, m_in) matrix")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        if z.shape != (X.shape[0],):
            raise DataError("labels must be one per sample")
        if z.size and (z.min() < 0 or z.max() >= len(self.class_names)):
            raise DataError("label index out of range")
        X.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", z)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]


def gen_hierarchical_gaussians(tax: Taxonomy, per_class: int, dims: int,
                               root_spread: float = 4.0, decay: float = 0.5,
                               noise: float = 0.5,
                               rng: np.random.Generator | None = None) -> Dataset:
    """Gaussian blobs whose means follow the taxonomy layout.

    Each node's mean sits at its parent's mean plus a uniformly random
    direction scaled by root_spread * decay**parent_level, so classes that
    are close in the tree are geometrically close. Leaf samples add
    isotropic noise. Deterministic for a fixed rng.
    """
    if per_class < 1:
        raise DataError("per_class must be >= 1")
    if dims < 2:
        raise DataError("dims must be >= 2")
    if not 0 <= decay < 1:
        raise DataError("decay must lie in [0, 1)")
    if not tax.leaf_ids:
        raise DataError("degenerate taxonomy: no leaves")
    if rng is None:
        rng = np.random.default_rng(0)

    # Means are drawn level by level (document order within a level) so the
    # draw sequence does not depend on how the file ordered parents/children.
    order = sorted(range(tax.n_nodes), key=lambda i: (tax.level(i), i))
    means = np.zeros((tax.n_nodes, dims))
    for i in order:
        parent = tax.nodes[i].parent
        if parent is None:
            continue
        direction = rng.standard_normal(dims)
        norm = np.linalg.norm(direction)
        while norm == 0.0:
            direction = rng.standard_normal(dims)
            norm = np.linalg.norm(direction)
        scale = root_spread * decay ** tax.level(parent)
        means[i] = means[parent] + direction / norm * scale

    blocks = []
    labels = []
    for k, leaf in enumerate(tax.leaf_ids):
        blocks.append(means[leaf] + noise * rng.standard_normal((per_class, dims)))
        labels.append(np.full(per_class, k, dtype=np.intp))
    return Dataset(np.vstack(blocks), np.concatenate(labels), tax.leaf_names)


def load_csv(text_or_path, label_column: str, tax: Taxonomy) -> Dataset:
    """Dataset from a CSV file with numeric feature columns and a label column.

    Accepts a path or raw CSV text. Feature order follows column order;
    labels are resolved against the taxonomy leaf names.
    """
    if isinstance(text_or_path, str) and "\n" in text_or_path:
        text = text_or_path
    else:
        with open(text_or_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row]
    if not rows:
        raise DataError("empty dataset: no header row")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataError(f"label column '{label_column}' not found in header")
    if len(rows) == 1:
        raise DataError("empty dataset: header only")
    label_pos = header.index(label_column)
    feature_pos = [i for i in range(len(header)) if i != label_pos]
    if not feature_pos:
        raise DataError("no feature columns")

    leaf_index = {name: k for k, name in enumerate(tax.leaf_names)}
    features = np.zeros((len(rows) - 1, len(feature_pos)))
    labels = np.zeros(len(rows) - 1, dtype=np.intp)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        name = row[label_pos].strip()
        if name not in leaf_index:
            raise DataError(f"row {r}: unknown label '{name}'")
        labels[r - 2] = leaf_index[name]
        for j, pos in enumerate(feature_pos):
            try:
                features[r - 2, j] = float(row[pos])
            except ValueError:
                raise DataError(
                    f"row {r}: non-numeric value '{row[pos]}' in column "
                    f"'{header[pos]}'") from None
    return Dataset(features, labels, tax.leaf_names)


def dataset_to_csv(dataset: Dataset, label_column: str = "label") -> str:
    """CSV text with feature columns f0..f{d-1} and a label-name column."""
    d = dataset.features.shape[1]
    buf = io.StringIO()
    buf.write(",".join(f"f{j}" for j in range(d)) + f",{label_column}\n")
    for x, z in zip(dataset.features, dataset.labels):
        buf.write(",".join(repr(float(v)) for v in x))
        buf.write(f",{dataset.class_names[z]}\n")
    return buf.getvalue()


def split(dataset: Dataset, test_fraction: float,
          rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Stratified train/test partition (exact: disjoint, union = all).

    Classes with a single sample cannot be stratified; they go to the train
    side with a warning. For classes with >= 2 samples both sides get at
    least one sample.
    """
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie strictly between 0 and 1")
    test_idx = []
    train_idx = []
    for k in range(len(dataset.class_names)):
        members = np.flatnonzero(dataset.labels == k)
        if members.size == 0:
            continue
        if members.size < 2:
            warnings.warn(f"class '{dataset.class_names[k]}' has fewer than 2 "
                          "samples; assigning it to the train split")
            train_idx.extend(members.tolist())
            continue
        n_test = int(np.floor(test_fraction * members.size + 0.5))
        n_test = min(max(n_test, 1), members.size - 1)
        perm = rng.permutation(members.size)
        test_idx.extend(members[perm[:n_test]].tolist())
        train_idx.extend(members[perm[n_test:]].tolist())
    train_idx = sorted(train_idx)
    test_idx = sorted(test_idx)
    make = lambda idx: Dataset(dataset.features[idx], dataset.labels[idx],
                               dataset.class_names)
    return make(train_idx), make(test_idx)
