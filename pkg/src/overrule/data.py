"""Dataset ingestion, literal binarization and uniform reference sampling."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from .rules import Literal

log = logging.getLogger(__name__)

KINDS = ("continuous", "categorical", "binary")


class DataError(ValueError):
    """Malformed input data or schema."""


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    categories: tuple | None = None
    thresholds: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "binary" and self.categories is None:
            object.__setattr__(self, "categories", (0, 1))
        if self.thresholds is not None:
            t = tuple(float(x) for x in self.thresholds)
            if any(b <= a for a, b in zip(t, t[1:])):
                raise DataError(f"feature {self.name!r}: thresholds must be strictly increasing")
            if self.low is not None and self.high is not None and t:
                if t[0] <= self.low or t[-1] >= self.high:
                    raise DataError(f"feature {self.name!r}: thresholds must lie strictly inside (min, max)")
            object.__setattr__(self, "thresholds", t)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "continuous":
            d["min"], d["max"] = self.low, self.high
            if self.thresholds is not None:
                d["thresholds"] = list(self.thresholds)
        elif self.kind == "categorical":
            d["categories"] = list(self.categories or ())
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureMeta":
        kind = d.get("kind")
        cats = d.get("categories")
        if kind == "categorical" and cats is not None:
            cats = tuple(str(c) for c in cats)
        return cls(
            name=d["name"],
            kind=kind,
            low=d.get("min"),
            high=d.get("max"),
            categories=cats,
            thresholds=d.get("thresholds"),
        )


@dataclass(frozen=True)
class Schema:
    features: tuple[FeatureMeta, ...]
    group_column: str | None = None
    groups: tuple | None = None
    policy_column: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        if "features" not in d:
            raise DataError("schema has no 'features' entry")
        groups = d.get("groups")
        return cls(
            features=tuple(FeatureMeta.from_dict(f) for f in d["features"]),
            group_column=d.get("group_column"),
            groups=tuple(groups) if groups is not None else None,
            policy_column=d.get("policy_column"),
        )

    @classmethod
    def load(cls, path) -> "Schema":
        path = Path(path)
        if not path.exists():
            raise DataError(f"schema file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise DataError(f"schema file {path}: {e}") from None


@dataclass(frozen=True)
class Dataset:
    """Dense covariate table.

    ``frame`` holds one column per feature (continuous as float, binary as
    int 0/1, categorical as str). ``extra`` keeps any other CSV columns,
    e.g. a policy column or an outcome used for evaluation.
    """

    frame: pd.DataFrame
    features: tuple[FeatureMeta, ...]
    group_column: str | None = None
    groups: np.ndarray | None = None
    group_set: tuple | None = None
    extra: pd.DataFrame | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return replace(
            self,
            frame=self.frame.iloc[idx].reset_index(drop=True),
            groups=None if self.groups is None else self.groups[idx],
            extra=None if self.extra is None else self.extra.iloc[idx].reset_index(drop=True),
        )


def dataset_from_frame(
    df: pd.DataFrame,
    features: Sequence[FeatureMeta],
    group_column: str | None = None,
    groups: Sequence | None = None,
) -> Dataset:
    """Build a Dataset from an in-memory frame, validating values and filling ranges."""
    names = [f.name for f in features]
    missing_cols = [n for n in names + ([group_column] if group_column else []) if n not in df.columns]
    if missing_cols:
        raise DataError(f"missing columns: {missing_cols}")
    na = df[names + ([group_column] if group_column else [])].isna().sum()
    if na.any():
        counts = ", ".join(f"{k}={v}" for k, v in na.items() if v)
        raise DataError(f"missing values are not supported (per-column counts: {counts})")

    cols: dict[str, np.ndarray] = {}
    metas: list[FeatureMeta] = []
    for f in features:
        raw = df[f.name]
        if f.kind == "continuous":
            vals = pd.to_numeric(raw, errors="coerce")
            bad = vals.isna() & raw.notna()
            if bad.any():
                i = int(np.flatnonzero(bad.to_numpy())[0])
                raise DataError(f"row {i}, column {f.name!r}: cannot parse {raw.iloc[i]!r} as a number")
            vals = vals.to_numpy(dtype=float)
            low = float(vals.min()) if f.low is None else float(f.low)
            high = float(vals.max()) if f.high is None else float(f.high)
            if len(vals) and (vals.min() < low or vals.max() > high):
                raise DataError(f"column {f.name!r}: values outside declared range [{low}, {high}]")
            metas.append(replace(f, low=low, high=high))
        elif f.kind == "binary":
            vals = pd.to_numeric(raw, errors="coerce")
            bad = ~vals.isin([0, 1])
            if bad.any():
                i = int(np.flatnonzero(bad.to_numpy())[0])
                raise DataError(f"row {i}, column {f.name!r}: binary value must be 0 or 1, got {raw.iloc[i]!r}")
            vals = vals.to_numpy().astype(int)
            metas.append(f)
        else:
            vals = raw.astype(str).to_numpy()
            if f.categories is None:
                cats = tuple(sorted(set(vals)))
            else:
                cats = tuple(str(c) for c in f.categories)
                unknown = ~np.isin(vals, cats)
                if unknown.any():
                    i = int(np.flatnonzero(unknown)[0])
                    raise DataError(f"row {i}, column {f.name!r}: unknown category {vals[i]!r}")
            metas.append(replace(f, categories=cats))
        cols[f.name] = vals

    group_arr = None
    group_set = None
    if group_column:
        graw = df[group_column].to_numpy()
        if groups is None:
            group_arr = _coerce_groups(graw)
            group_set = tuple(sorted(set(group_arr.tolist())))
        else:
            group_set = tuple(groups)
            lookup = {str(g): g for g in group_set}
            try:
                group_arr = np.array([lookup[str(_norm_group(v))] for v in graw], dtype=object)
            except KeyError as e:
                raise DataError(f"group column {group_column!r}: value {e.args[0]!r} not in declared groups {list(group_set)}") from None
            group_arr = _coerce_groups(group_arr)

    extra_cols = [c for c in df.columns if c not in names and c != group_column]
    extra = df[extra_cols].reset_index(drop=True) if extra_cols else None
    return Dataset(
        frame=pd.DataFrame(cols),
        features=tuple(metas),
        group_column=group_column,
        groups=group_arr,
        group_set=group_set,
        extra=extra,
    )


def _norm_group(v):
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, str):
        try:
            f = float(v)
            return int(f) if f.is_integer() else v
        except ValueError:
            return v
    return v


def _coerce_groups(values) -> np.ndarray:
    vals = [_norm_group(v) for v in values]
    if all(isinstance(v, (int, np.integer)) for v in vals):
        return np.asarray(vals, dtype=int)
    return np.asarray([str(v) for v in vals], dtype=object)


def load_csv(path, schema: Schema | Mapping | str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    if isinstance(schema, (str, Path)):
        schema = Schema.load(schema)
    elif isinstance(schema, Mapping):
        schema = Schema.from_dict(schema)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=True, skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: {e}") from None
    expected = [f.name for f in schema.features]
    absent = [n for n in expected if n not in df.columns]
    if absent:
        raise DataError(f"{path}: header lacks schema columns {absent}")
    return dataset_from_frame(df, schema.features, schema.group_column, schema.groups)


@dataclass(frozen=True)
class BinarizationConfig:
    num_quantiles: int = 10
    include_negations: bool = True


@dataclass(frozen=True, eq=False)
class BinarizedDataset:
    literal_matrix: np.ndarray  # rows x literals, bool
    literals: tuple[Literal, ...]
    features: tuple[FeatureMeta, ...]
    origin: Dataset | pd.DataFrame | None = field(default=None, repr=False)
    sample_kind: str = "data"

    @cached_property
    def literal_index(self) -> dict[Literal, int]:
        return {lit: i for i, lit in enumerate(self.literals)}

    def __len__(self) -> int:
        return self.literal_matrix.shape[0]

    def subset(self, mask) -> "BinarizedDataset":
        origin = self.origin
        if isinstance(origin, Dataset):
            origin = origin.subset(mask)
        elif isinstance(origin, pd.DataFrame):
            origin = origin.iloc[np.flatnonzero(mask) if np.asarray(mask).dtype == bool else mask].reset_index(drop=True)
        return replace(self, literal_matrix=self.literal_matrix[mask], origin=origin)


def quantile_thresholds(values: np.ndarray, num_quantiles: int, low: float, high: float) -> tuple[float, ...]:
    qs = np.arange(1, num_quantiles) / num_quantiles
    cuts = np.unique(np.quantile(values, qs))
    return tuple(float(c) for c in cuts if low < c < high)


def make_literals(features: Sequence[FeatureMeta], include_negations: bool = True) -> tuple[Literal, ...]:
    out: list[Literal] = []
    for j, f in enumerate(features):
        if f.kind == "continuous":
            span = f.high - f.low
            if not span > 0 or not f.thresholds:
                log.warning("feature %r is constant or has no cut points; no literals emitted", f.name)
                continue
            for q in f.thresholds:
                frac = (q - f.low) / span
                out.append(Literal(j, "<=", q, f.name, frac))
                if include_negations:
                    out.append(Literal(j, ">", q, f.name, 1.0 - frac))
        elif f.kind == "binary":
            out.append(Literal(j, "==", 1, f.name, 0.5))
            if include_negations:
                out.append(Literal(j, "==", 0, f.name, 0.5))
        else:
            cats = f.categories or ()
            if len(cats) < 2:
                log.warning("categorical feature %r has a single category; no literals emitted", f.name)
                continue
            c = len(cats)
            for v in cats:
                out.append(Literal(j, "==", v, f.name, 1.0 / c))
                if include_negations:
                    out.append(Literal(j, "!=", v, f.name, (c - 1.0) / c))
    return tuple(out)


def literal_matrix(frame: pd.DataFrame, literals: Sequence[Literal]) -> np.ndarray:
    out = np.empty((len(frame), len(literals)), dtype=bool)
    cache: dict[str, np.ndarray] = {}
    for i, lit in enumerate(literals):
        if lit.name not in cache:
            cache[lit.name] = frame[lit.name].to_numpy()
        out[:, i] = lit.evaluate(cache[lit.name])
    return out


def binarize(data: Dataset, cfg: BinarizationConfig = BinarizationConfig()) -> BinarizedDataset:
    """Expand ``data`` into literal indicators.

    Continuous features without explicit thresholds are cut at the empirical
    quantiles of ``data``; duplicate cut points are dropped.
    """
    if len(data) == 0:
        raise DataError("cannot binarize an empty dataset")
    feats = []
    for f in data.features:
        if f.kind == "continuous" and f.thresholds is None:
            vals = data.frame[f.name].to_numpy(dtype=float)
            f = replace(f, thresholds=quantile_thresholds(vals, cfg.num_quantiles, f.low, f.high))
        feats.append(f)
    feats = tuple(feats)
    lits = make_literals(feats, cfg.include_negations)
    return BinarizedDataset(literal_matrix(data.frame, lits), lits, feats, data, "data")


def binarize_like(template: BinarizedDataset, frame: pd.DataFrame | Dataset, sample_kind: str = "data") -> BinarizedDataset:
    """Binarize new rows with the literal set of ``template``."""
    origin = frame
    if isinstance(frame, Dataset):
        frame = frame.frame
    return BinarizedDataset(literal_matrix(frame, template.literals), template.literals, template.features, origin, sample_kind)


def default_reference_count(m: int, d: int, factor: float = 2.0, cap: int = 500_000) -> int:
    return int(max(1, min(cap, math.ceil(factor * m * d))))


def sample_frame(features: Sequence[FeatureMeta], count: int, rng: np.random.Generator) -> pd.DataFrame:
    cols = {}
    for f in features:
        if f.kind == "continuous":
            if f.low is None or f.high is None or not (np.isfinite(f.low) and np.isfinite(f.high)):
                raise DataError(f"feature {f.name!r} has no finite range to sample from")
            cols[f.name] = rng.uniform(f.low, f.high, size=count)
        elif f.kind == "binary":
            cols[f.name] = rng.integers(0, 2, size=count)
        else:
            cats = np.asarray(f.categories, dtype=object)
            cols[f.name] = cats[rng.integers(0, len(cats), size=count)].astype(str)
    return pd.DataFrame(cols)


def sample_reference(
    data: Dataset | BinarizedDataset,
    count: int,
    seed: int | np.random.Generator | None = None,
    cfg: BinarizationConfig = BinarizationConfig(),
) -> BinarizedDataset:
    """Draw ``count`` rows uniformly over the covariate box and binarize them.

    Passing a BinarizedDataset reuses its literal set; a raw Dataset is
    binarized with ``cfg`` first.
    """
    if count <= 0:
        raise DataError("reference sample count must be positive")
    template = data if isinstance(data, BinarizedDataset) else binarize(data, cfg)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    frame = sample_frame(template.features, count, rng)
    return binarize_like(template, frame, "reference")
