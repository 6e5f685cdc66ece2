"""Tabular data loading, encoding and stratified cross-validation splits.

Feature encoding follows the usual tabular preprocessing recipe: one-hot
encoding for categorical columns and z-score standardization for numeric
columns. Encoding statistics can be fit on a training split and applied to a
held-out split so that no test-set statistic leaks into training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ColumnSchema:
    """Declares which CSV columns are numeric, categorical, and the label."""

    numeric: tuple[str, ...]
    categorical: tuple[str, ...]
    label: str

    def feature_columns(self) -> tuple[str, ...]:
        return self.numeric + self.categorical

    def all_columns(self) -> tuple[str, ...]:
        return self.numeric + self.categorical + (self.label,)


@dataclass
class RawDataset:
    """Rows straight from a CSV file, values kept as strings."""

    rows: list[dict[str, str]]
    schema: ColumnSchema

    @property
    def n(self) -> int:
        return len(self.rows)

    def subset(self, indices) -> "RawDataset":
        return RawDataset([self.rows[i] for i in indices], self.schema)


@dataclass
class Dataset:
    """Encoded dataset: real feature matrix and integer class labels.

    labels take values in 0..C-1; class_names[c] is the original label
    string of class c and class_counts[c] its cardinality in this split.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    class_counts: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass
class FoldAssignment:
    """Maps each row index to a fold in 0..n_folds-1."""

    fold_of: np.ndarray
    n_folds: int
    warnings: list[str] = field(default_factory=list)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def load_csv(path, schema: ColumnSchema) -> RawDataset:
    """Read a headered, comma-separated UTF-8 file into a RawDataset.

    Only the columns declared in the schema are kept. Fails if a schema
    column is missing from the header, a row has the wrong field count, or
    a label value is empty; row errors name the offending 1-based data row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.all_columns() if c not in header]
        if missing:
            raise ValueError(f"{path}: header is missing schema columns {missing}")
        col_pos = {c: header.index(c) for c in schema.all_columns()}
        rows = []
        for i, fields in enumerate(reader, start=1):
            if len(fields) != len(header):
                raise ValueError(
                    f"{path}: row {i} has {len(fields)} fields, expected {len(header)}"
                )
            row = {c: fields[p].strip() for c, p in col_pos.items()}
            if row[schema.label] == "":
                raise ValueError(f"{path}: row {i} has an empty label")
            rows.append(row)
    return RawDataset(rows, schema)


class FittedEncoding:
    """Encoding statistics fit on one set of rows and applicable to others.

    Numeric columns are z-scored with the mean and population standard
    deviation of the fit rows (constant columns map to all zeros). Each
    categorical column becomes one binary column per distinct fit-time value,
    in order of first appearance; values unseen at fit time encode to an
    all-zero block. Class labels are mapped to integers in order of first
    appearance in the fit rows.
    """

    def __init__(self, raw: RawDataset):
        schema = raw.schema
        self.schema = schema
        self.means: dict[str, float] = {}
        self.stds: dict[str, float] = {}
        for col in schema.numeric:
            vals = _numeric_column(raw, col)
            self.means[col] = float(np.mean(vals)) if len(vals) else 0.0
            self.stds[col] = float(np.std(vals)) if len(vals) else 0.0
        self.vocabularies: dict[str, list[str]] = {}
        for col in schema.categorical:
            seen: list[str] = []
            for row in raw.rows:
                v = row[col]
                if v not in seen:
                    seen.append(v)
            self.vocabularies[col] = seen
        self.class_names: list[str] = []
        for row in raw.rows:
            v = row[schema.label]
            if v not in self.class_names:
                self.class_names.append(v)
        self._class_index = {name: i for i, name in enumerate(self.class_names)}
        self.feature_names: list[str] = list(schema.numeric)
        for col in schema.categorical:
            self.feature_names += [f"{col}={v}" for v in self.vocabularies[col]]

    def transform(self, raw: RawDataset) -> Dataset:
        if raw.schema != self.schema:
            raise ValueError("schema mismatch between fit and transform rows")
        n = raw.n
        blocks = []
        for col in self.schema.numeric:
            vals = _numeric_column(raw, col)
            std = self.stds[col]
            if std > 0.0:
                blocks.append((vals - self.means[col]) / std)
            else:
                blocks.append(np.zeros(n))
        for col in self.schema.categorical:
            vocab = self.vocabularies[col]
            index = {v: j for j, v in enumerate(vocab)}
            onehot = np.zeros((n, len(vocab)))
            for i, row in enumerate(raw.rows):
                j = index.get(row[col])
                if j is not None:
                    onehot[i, j] = 1.0
            blocks.append(onehot)
        features = (
            np.column_stack(blocks) if blocks else np.zeros((n, 0))
        ).astype(np.float64)
        labels = np.empty(n, dtype=np.int64)
        for i, row in enumerate(raw.rows):
            name = row[self.schema.label]
            if name not in self._class_index:
                raise ValueError(f"row {i + 1}: label {name!r} unseen at fit time")
            labels[i] = self._class_index[name]
        counts = np.bincount(labels, minlength=len(self.class_names))
        return Dataset(features, labels, list(self.class_names), counts,
                       list(self.feature_names))


def encode(raw: RawDataset) -> Dataset:
    """Fit encoding statistics on the given rows and encode them."""
    return FittedEncoding(raw).transform(raw)


def fit_transform_split(train: RawDataset, test: RawDataset) -> tuple[Dataset, Dataset]:
    """Encode a train/test pair with statistics computed on the train rows only."""
    enc = FittedEncoding(train)
    return enc.transform(train), enc.transform(test)


def stratified_kfold(labels, n_folds: int, seed) -> FoldAssignment:
    """Assign rows to n_folds folds, stratified by class.

    Within each class the indices are shuffled with the seeded generator and
    dealt round-robin, so per-class fold counts differ by at most one. A class
    with fewer members than folds is still assigned, and a warning is recorded
    because some folds will not contain it.
    """
    labels = np.asarray(labels)
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    warnings = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < n_folds:
            warnings.append(
                f"class {c} has {len(idx)} members for {n_folds} folds; "
                "some folds will not contain it"
            )
        idx = rng.permutation(idx)
        for j, row in enumerate(idx):
            fold_of[row] = j % n_folds
    return FoldAssignment(fold_of, n_folds, warnings)


def write_fold_csv(assignment: FoldAssignment, path) -> None:
    """Export a fold assignment as a two-column (row_index, fold) CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "fold"])
        for i, f in enumerate(assignment.fold_of):
            writer.writerow([i, int(f)])


def _numeric_column(raw: RawDataset, col: str) -> np.ndarray:
    vals = np.empty(raw.n)
    for i, row in enumerate(raw.rows):
        try:
            vals[i] = float(row[col])
        except ValueError:
            raise ValueError(
                f"row {i + 1}: column {col!r} value {row[col]!r} is not numeric"
            ) from None
    return vals
