"""Bank-churn table ingestion, validation, encoding and splitting.

The expected CSV is the public 10,000-row bank customer file with 14 columns
(RowNumber .. Exited). Categorical features are carried as integer indices
into sorted level lists; an embedding lookup by index is exactly one-hot
times embedding matrix, so nothing is lost relative to dummy coding, and
baselines that need explicit one-hot expand on demand.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataValidationError, DegenerateDataError

# Column name -> parser, in file order.
TABLE_SCHEMA: dict[str, type] = {
    "RowNumber": int,
    "CustomerId": int,
    "Surname": str,
    "CreditScore": int,
    "Geography": str,
    "Gender": str,
    "Age": int,
    "Tenure": int,
    "Balance": float,
    "NumOfProducts": int,
    "HasCrCard": int,
    "IsActiveMember": int,
    "EstimatedSalary": float,
    "Exited": int,
}

DROPPED_COLUMNS = ("RowNumber", "CustomerId", "Surname")
CATEGORICAL_COLUMNS = ("Geography", "Gender", "NumOfProducts", "HasCrCard", "IsActiveMember")
NUMERIC_COLUMNS = ("CreditScore", "Age", "Tenure", "Balance", "EstimatedSalary")
LABEL_COLUMN = "Exited"

ENCODED_FORMAT_VERSION = 1


@dataclass
class RawTable:
    """Typed columns of the validated input CSV."""

    columns: dict[str, list]

    @property
    def n_rows(self) -> int:
        return len(self.columns[LABEL_COLUMN])


def load_csv(path) -> RawTable:
    """Read and validate the churn CSV; malformed rows get row-numbered errors."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        missing = [c for c in TABLE_SCHEMA if c not in header]
        if missing:
            raise DataValidationError(f"{path}: missing columns {missing}")
        positions = {c: header.index(c) for c in TABLE_SCHEMA}

        columns: dict[str, list] = {c: [] for c in TABLE_SCHEMA}
        n = 0
        for row_num, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataValidationError(
                    f"row {row_num}: expected {len(header)} cells, got {len(row)}"
                )
            for name, parse in TABLE_SCHEMA.items():
                cell = row[positions[name]]
                try:
                    value = parse(cell)
                except ValueError:
                    raise DataValidationError(
                        f"row {row_num}: cannot parse {name}={cell!r} as {parse.__name__}"
                    ) from None
                columns[name].append(value)
            exited = columns[LABEL_COLUMN][-1]
            if exited not in (0, 1):
                raise DataValidationError(
                    f"row {row_num}: Exited must be 0 or 1, got {exited}"
                )
            n += 1
    if n == 0:
        raise DataValidationError(f"{path}: no data rows after header")
    return RawTable(columns=columns)


# -- descriptive statistics -------------------------------------------------

@dataclass
class ColumnStats:
    mean: float
    std: float
    cv: float | None
    skewness: float | None
    kurtosis: float | None
    moment_error: str | None = None


@dataclass
class DescriptiveStats:
    columns: dict[str, ColumnStats]


def column_moments(values) -> ColumnStats:
    """Sample std, CV, and bias-adjusted skewness / excess kurtosis."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n < 3:
        raise DegenerateDataError(f"need >= 3 values for moment statistics, got {n}")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    cv = std / mean if mean != 0.0 else None
    d = x - mean
    m2 = float((d**2).mean())
    if m2 == 0.0:
        return ColumnStats(mean, 0.0, cv, None, None, moment_error="zero variance")
    g1 = float((d**3).mean()) / m2**1.5
    skew = math.sqrt(n * (n - 1)) / (n - 2) * g1
    if n < 4:
        return ColumnStats(mean, std, cv, skew, None, moment_error="kurtosis needs >= 4 values")
    g2 = float((d**4).mean()) / m2**2 - 3.0
    kurt = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
    return ColumnStats(mean, std, cv, skew, kurt)


def describe(raw: RawTable) -> DescriptiveStats:
    """Moment statistics for the five non-category columns."""
    return DescriptiveStats(
        columns={c: column_moments(raw.columns[c]) for c in NUMERIC_COLUMNS}
    )


# -- encoding ---------------------------------------------------------------

@dataclass
class EncodedDataset:
    """Row-aligned categorical indices, numeric features and binary labels.

    ``cat_levels`` maps each categorical feature to its sorted level strings;
    ``num_means``/``num_stds`` hold the standardization statistics (taken from
    training rows only) once ``standardized`` is True.
    """

    cat: np.ndarray  # (n, 5) int64
    num: np.ndarray  # (n, 5) float64
    labels: np.ndarray  # (n,) int64
    cat_levels: dict[str, list[str]]
    num_means: np.ndarray | None = None
    num_stds: np.ndarray | None = None
    standardized: bool = False
    cat_names: tuple[str, ...] = CATEGORICAL_COLUMNS
    num_names: tuple[str, ...] = NUMERIC_COLUMNS

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def cardinalities(self) -> list[int]:
        return [len(self.cat_levels[c]) for c in self.cat_names]

    def take(self, idx: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(
            cat=self.cat[idx],
            num=self.num[idx],
            labels=self.labels[idx],
            cat_levels=self.cat_levels,
            num_means=self.num_means,
            num_stds=self.num_stds,
            standardized=self.standardized,
        )


def encoders_match(a: EncodedDataset, b: EncodedDataset) -> bool:
    return a.cat_levels == b.cat_levels


def prepare(raw: RawTable) -> EncodedDataset:
    """Drop the identifier columns and encode features (unstandardized)."""
    n = raw.n_rows
    cat = np.empty((n, len(CATEGORICAL_COLUMNS)), dtype=np.int64)
    cat_levels: dict[str, list[str]] = {}
    for j, name in enumerate(CATEGORICAL_COLUMNS):
        values = raw.columns[name]
        levels = sorted(set(values))
        cat_levels[name] = [str(v) for v in levels]
        index_of = {v: i for i, v in enumerate(levels)}
        cat[:, j] = [index_of[v] for v in values]
    num = np.column_stack(
        [np.asarray(raw.columns[c], dtype=np.float64) for c in NUMERIC_COLUMNS]
    )
    labels = np.asarray(raw.columns[LABEL_COLUMN], dtype=np.int64)
    return EncodedDataset(cat=cat, num=num, labels=labels, cat_levels=cat_levels)


def split(
    ds: EncodedDataset, ratio: float, seed: int
) -> tuple[EncodedDataset, EncodedDataset]:
    """Seeded shuffle, partition, then standardize numerics on train stats."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n_rows)
    n_train = int(math.floor(ratio * ds.n_rows))
    train = ds.take(perm[:n_train])
    test = ds.take(perm[n_train:])

    means = train.num.mean(axis=0)
    stds = train.num.std(axis=0)
    if (stds == 0.0).any():
        constant = [ds.num_names[i] for i in np.flatnonzero(stds == 0.0)]
        raise DegenerateDataError(f"constant numeric column(s) in train split: {constant}")
    for part in (train, test):
        part.num = (part.num - means) / stds
        part.num_means = means
        part.num_stds = stds
        part.standardized = True
    return train, test


def one_hot_features(ds: EncodedDataset) -> np.ndarray:
    """Expanded design matrix: one-hot categoricals followed by numerics."""
    cards = ds.cardinalities()
    blocks = []
    for j, card in enumerate(cards):
        block = np.zeros((ds.n_rows, card))
        block[np.arange(ds.n_rows), ds.cat[:, j]] = 1.0
        blocks.append(block)
    blocks.append(ds.num)
    return np.concatenate(blocks, axis=1)


# -- persistence -------------------------------------------------------------

def save_encoded(ds: EncodedDataset, path) -> None:
    doc = {
        "format_version": ENCODED_FORMAT_VERSION,
        "cat_names": list(ds.cat_names),
        "num_names": list(ds.num_names),
        "cat_levels": ds.cat_levels,
        "num_means": None if ds.num_means is None else ds.num_means.tolist(),
        "num_stds": None if ds.num_stds is None else ds.num_stds.tolist(),
        "standardized": ds.standardized,
        "cat": ds.cat.tolist(),
        "num": ds.num.tolist(),
        "labels": ds.labels.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_encoded(path) -> EncodedDataset:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != ENCODED_FORMAT_VERSION:
        raise DataValidationError(
            f"{path}: unsupported encoded-dataset version {version!r}"
        )
    return EncodedDataset(
        cat=np.asarray(doc["cat"], dtype=np.int64),
        num=np.asarray(doc["num"], dtype=np.float64),
        labels=np.asarray(doc["labels"], dtype=np.int64),
        cat_levels=doc["cat_levels"],
        num_means=None if doc["num_means"] is None else np.asarray(doc["num_means"]),
        num_stds=None if doc["num_stds"] is None else np.asarray(doc["num_stds"]),
        standardized=doc["standardized"],
        cat_names=tuple(doc["cat_names"]),
        num_names=tuple(doc["num_names"]),
    )
