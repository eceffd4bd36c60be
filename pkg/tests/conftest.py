import csv
from pathlib import Path

import numpy as np
import pytest

from churnattn.data import EncodedDataset, load_csv, prepare

DATA_CSV = Path(__file__).resolve().parent.parent / "data" / "Churn_Modelling.csv"


@pytest.fixture(scope="session")
def churn_csv_path() -> Path:
    if not DATA_CSV.exists():
        pytest.skip("bank churn CSV not present at data/Churn_Modelling.csv")
    return DATA_CSV


@pytest.fixture(scope="session")
def raw_table(churn_csv_path):
    return load_csv(churn_csv_path)


@pytest.fixture(scope="session")
def prepared(raw_table):
    return prepare(raw_table)


@pytest.fixture(scope="session")
def small_csv(tmp_path_factory, churn_csv_path) -> Path:
    """A 600-row subsample of the real CSV for fast end-to-end tests."""
    with open(churn_csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    rng = np.random.default_rng(7)
    picked = [body[i] for i in sorted(rng.choice(len(body), size=600, replace=False))]
    out = tmp_path_factory.mktemp("data") / "churn_small.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(picked)
    return out


def toy_dataset(n=60, seed=0, n_cat_levels=(3, 2, 4, 2, 2), separable=False) -> EncodedDataset:
    """Random encoded dataset; optionally linearly separable on numeric 0."""
    rng = np.random.default_rng(seed)
    cat = np.column_stack([rng.integers(0, c, size=n) for c in n_cat_levels])
    num = rng.normal(size=(n, 5))
    if separable:
        labels = (num[:, 0] > 0).astype(np.int64)
        num[:, 0] += np.where(labels == 1, 1.0, -1.0)  # wide margin
    else:
        labels = rng.integers(0, 2, size=n).astype(np.int64)
    levels = {
        name: [str(v) for v in range(c)]
        for name, c in zip(
            ("Geography", "Gender", "NumOfProducts", "HasCrCard", "IsActiveMember"),
            n_cat_levels,
        )
    }
    return EncodedDataset(
        cat=cat,
        num=num,
        labels=labels,
        cat_levels=levels,
        num_means=np.zeros(5),
        num_stds=np.ones(5),
        standardized=True,
    )
