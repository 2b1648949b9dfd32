"""Small bundled datasets."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import pandas as pd

from ..data import Dataset, Schema, dataset_from_frame


def path(name: str) -> Path:
    return Path(str(resources.files(__name__).joinpath(name)))


def iris_frame() -> pd.DataFrame:
    """All 150 rows, with a ``species`` column."""
    return pd.read_csv(path("iris.csv"))


def iris_overlap() -> tuple[Dataset, pd.DataFrame]:
    """Versicolor/virginica rows as a grouped Dataset, plus the 50 setosa rows."""
    df = iris_frame()
    schema = Schema.load(path("iris_schema.json"))
    keep = df.species.isin(schema.groups)
    data = dataset_from_frame(df[keep].reset_index(drop=True), schema.features, schema.group_column, schema.groups)
    return data, df[~keep].reset_index(drop=True)
