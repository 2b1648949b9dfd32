"""Two-stage overlap characterization: support rules, then propensity-overlap rules.

1. Learn a rule set for the alpha-minimum-volume support of the data.
2. Inside that support, fit a base estimator and label rows whose groups
   all have estimated propensity >= eps.
3. Learn a rule set covering beta of the labeled rows. The overlap region
   is the intersection of the two rule sets.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from .data import (
    BinarizationConfig,
    BinarizedDataset,
    Dataset,
    DataError,
    FeatureMeta,
    binarize,
    default_reference_count,
    literal_matrix,
    sample_reference,
)
from .estimators import (
    OverlapLabels,
    Policy,
    PropensityModel,
    fit_propensity,
    overlap_labels,
    policy_overlap_labels,
)
from .rules import Literal, RuleSet, format_rules
from .solver import NPProblem, SearchConfig, fit_np_rules

log = logging.getLogger(__name__)

IN_OVERLAP = "in_overlap"
SUPPORT_ONLY = "in_support_only"
OUT_OF_SUPPORT = "out_of_support"


class ShortfallError(RuntimeError):
    """The rounded rule set misses its coverage target."""


class DegenerateError(ValueError):
    """The overlap classification problem has an empty class."""


@dataclass(frozen=True)
class OverRuleConfig:
    alpha: float = 0.98
    beta: float = 0.9
    eps: float = 0.1
    support_form: str = "CNF"
    overlap_form: str = "DNF"
    support_lambda0: float = 1e-2
    support_lambda1: float = 1e-3
    overlap_lambda0: float = 1e-2
    overlap_lambda1: float = 1e-3
    base: str = "logistic"
    l2_strength: float = 1.0
    knn_k: int = 8
    knn_threshold: str = "inverse_k"  # or "fixed": use eps as given
    cbb_alpha: float | None = None  # defaults to alpha
    num_quantiles: int = 10
    reference_count: int | None = None
    reference_factor: float = 2.0
    reference_cap: int = 500_000
    seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        for name in ("support_form", "overlap_form"):
            if getattr(self, name) not in ("DNF", "CNF"):
                raise ValueError(f"{name} must be DNF or CNF")
        if self.base not in ("logistic", "knn", "cbb"):
            raise ValueError(f"unknown base estimator {self.base!r}")
        if self.knn_threshold not in ("inverse_k", "fixed"):
            raise ValueError("knn_threshold must be 'inverse_k' or 'fixed'")
        if isinstance(self.search, Mapping):
            object.__setattr__(self, "search", SearchConfig(**self.search))

    @property
    def label_eps(self) -> float:
        if self.base == "knn" and self.knn_threshold == "inverse_k":
            return 1.0 / self.knn_k
        return self.eps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["search"] = asdict(self.search)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "OverRuleConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "search" in d and isinstance(d["search"], Mapping):
            d["search"] = SearchConfig(**d["search"])
        return cls(**d)


# --- metrics -------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    balanced_accuracy: float
    fpr: float
    fnr: float
    literal_count: int = 0
    coverage_fraction: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(predicted, truth, rules: Sequence[RuleSet] = ()) -> Metrics:
    """Balanced accuracy, FPR and FNR of ``predicted`` against ``truth``.

    Rates whose denominator is empty are NaN; balanced accuracy is NaN
    unless both classes occur in ``truth``.
    """
    p = np.asarray(predicted, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError("predicted and truth differ in length")
    tp = int((p & t).sum())
    fn = int((~p & t).sum())
    fp = int((p & ~t).sum())
    tn = int((~p & ~t).sum())
    fnr = fn / (fn + tp) if fn + tp else float("nan")
    fpr = fp / (fp + tn) if fp + tn else float("nan")
    bacc = ((1 - fnr) + (1 - fpr)) / 2 if fn + tp and fp + tn else float("nan")
    lits = sum(r.literal_count for r in rules)
    return Metrics(bacc, fpr, fnr, lits, float(p.mean()) if p.size else float("nan"))


# --- model ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OverRuleModel:
    support: RuleSet
    overlap: RuleSet
    literals: tuple[Literal, ...]
    features: tuple[FeatureMeta, ...]
    config: OverRuleConfig
    base: PropensityModel | None = None
    fit_metrics: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.config.label_eps

    def binarize(self, rows) -> BinarizedDataset:
        frame = coerce_frame(self.features, rows)
        return BinarizedDataset(literal_matrix(frame, self.literals), self.literals, self.features, frame)

    def rules_text(self, data=None) -> str:
        bd = self.binarize(data) if data is not None else None
        return "\n\n".join([
            format_rules(self.support, bd, "Support rules", "S"),
            format_rules(self.overlap, bd, "Overlap rules", "O"),
        ])

    def to_dict(self) -> dict:
        return {
            "support": self.support.to_dict(),
            "overlap": self.overlap.to_dict(),
            "literals": [lit.to_dict() for lit in self.literals],
            "features": [f.to_dict() for f in self.features],
            "config": self.config.to_dict(),
            "base": self.base.to_dict() if self.base else None,
            "fit_metrics": _jsonable(self.fit_metrics),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "OverRuleModel":
        return cls(
            support=RuleSet.from_dict(d["support"]),
            overlap=RuleSet.from_dict(d["overlap"]),
            literals=tuple(Literal.from_dict(x) for x in d["literals"]),
            features=tuple(FeatureMeta.from_dict(f) for f in d["features"]),
            config=OverRuleConfig.from_dict(d["config"]),
            base=PropensityModel.from_dict(d["base"]) if d.get("base") else None,
            fit_metrics=dict(d.get("fit_metrics", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=_json_default))


def load_model(path) -> OverRuleModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    return OverRuleModel.from_dict(json.loads(path.read_text()))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o, key=str)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=_json_default))


def coerce_frame(features: Sequence[FeatureMeta], rows) -> pd.DataFrame:
    """Typed feature columns for evaluation; no range or category checks."""
    frame = rows.frame if isinstance(rows, Dataset) else rows
    cols = {}
    for f in features:
        if f.name not in frame.columns:
            raise DataError(f"missing column {f.name!r}")
        raw = frame[f.name]
        if f.kind == "continuous":
            cols[f.name] = pd.to_numeric(raw, errors="raise").to_numpy(dtype=float)
        elif f.kind == "binary":
            cols[f.name] = pd.to_numeric(raw, errors="raise").to_numpy().astype(int)
        else:
            cols[f.name] = raw.astype(str).to_numpy()
    return pd.DataFrame(cols)


# --- fitting -------------------------------------------------------------


def _reference_count(cfg: OverRuleConfig, m: int, d: int) -> int:
    if cfg.reference_count is not None:
        return int(cfg.reference_count)
    return default_reference_count(m, d, cfg.reference_factor, cfg.reference_cap)


def fit_support(data: Dataset, cfg: OverRuleConfig = OverRuleConfig(), bd: BinarizedDataset | None = None) -> tuple[RuleSet, BinarizedDataset]:
    """Learn the support rule set; returns it with the binarized data."""
    if len(data) == 0:
        raise DataError("cannot fit support on an empty dataset")
    bd = bd if bd is not None else binarize(data, BinarizationConfig(cfg.num_quantiles))
    count = _reference_count(cfg, len(data), len(data.features))
    ref = sample_reference(bd, count, seed=cfg.seed)
    problem = NPProblem(bd, ref, cfg.alpha, cfg.support_lambda0, cfg.support_lambda1, cfg.support_form)
    rule = fit_np_rules(problem, cfg.search)
    rule.provenance["reference_count"] = count
    if rule.provenance.get("coverage_shortfall"):
        p = rule.provenance
        raise ShortfallError(f"support rules cover {p['covered_positives']} rows, {p['required_positives']} required")
    return rule, bd


def base_labels(model: PropensityModel, rows, cfg: OverRuleConfig, policy: Policy | None = None) -> OverlapLabels:
    if policy is not None:
        return policy_overlap_labels(model, rows, policy, cfg.label_eps)
    return overlap_labels(model, rows, cfg.label_eps)


def _fit_base(data: Dataset, cfg: OverRuleConfig) -> PropensityModel:
    if cfg.base == "logistic":
        return fit_propensity(data, "logistic", l2_strength=cfg.l2_strength)
    if cfg.base == "knn":
        return fit_propensity(data, "knn", k=cfg.knn_k)
    return fit_propensity(data, "cbb", alpha=cfg.cbb_alpha if cfg.cbb_alpha is not None else cfg.alpha)


def fit_overlap(
    data: Dataset,
    support: RuleSet,
    cfg: OverRuleConfig = OverRuleConfig(),
    policy: Policy | None = None,
    bd: BinarizedDataset | None = None,
) -> OverRuleModel:
    """Fit the base estimator inside the support and learn overlap rules."""
    bd = bd if bd is not None else binarize(data, BinarizationConfig(cfg.num_quantiles))
    in_s = support.evaluate(bd)
    if not in_s.any():
        raise DegenerateError("no rows inside the support rules; lower alpha")
    sub = data.subset(in_s)
    base = _fit_base(sub, cfg)
    labels = base_labels(base, sub, cfg, policy.subset(in_s) if policy is not None else None).labels
    bd_s = bd.subset(in_s)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        which = "inside" if n_neg == 0 else "outside"
        raise DegenerateError(
            f"every supported row is {which} the estimated overlap (eps={cfg.label_eps:g}); "
            "adjust eps or alpha so both classes are present"
        )
    problem = NPProblem(
        bd_s.subset(labels), bd_s.subset(~labels), cfg.beta,
        cfg.overlap_lambda0, cfg.overlap_lambda1, cfg.overlap_form,
    )
    overlap = fit_np_rules(problem, cfg.search)
    if overlap.provenance.get("coverage_shortfall"):
        p = overlap.provenance
        raise ShortfallError(f"overlap rules cover {p['covered_positives']} labeled rows, {p['required_positives']} required")
    in_b = overlap.evaluate(bd_s)
    m = evaluate(in_b, labels, (support, overlap))
    if not (m.balanced_accuracy >= 0.5):
        log.warning("overlap rules score balanced accuracy %.3f against base labels, below the all-true floor", m.balanced_accuracy)
    fit_metrics = {
        "n_rows": len(data),
        "n_support": int(in_s.sum()),
        "n_base_overlap": n_pos,
        "n_base_nonoverlap": n_neg,
        "train_vs_base": m.to_dict(),
        "sanity_floor_ok": bool(m.balanced_accuracy >= 0.5),
        "support_provenance": support.provenance,
        "overlap_provenance": overlap.provenance,
    }
    return OverRuleModel(support, overlap, bd.literals, bd.features, cfg, base, fit_metrics)


def fit(data: Dataset, cfg: OverRuleConfig = OverRuleConfig(), policy: Policy | None = None) -> OverRuleModel:
    support, bd = fit_support(data, cfg)
    return fit_overlap(data, support, cfg, policy, bd)


# --- prediction ----------------------------------------------------------


def _unknown_category_rows(features: Sequence[FeatureMeta], frame: pd.DataFrame) -> np.ndarray:
    bad = np.zeros(len(frame), dtype=bool)
    for f in features:
        if f.kind == "categorical" and f.categories is not None:
            bad |= ~np.isin(frame[f.name].astype(str).to_numpy(), np.asarray(f.categories, dtype=object))
    return bad


def predict(model: OverRuleModel, rows) -> np.ndarray:
    """Per-row label: in_overlap, in_support_only or out_of_support."""
    frame = coerce_frame(model.features, rows)
    bd = BinarizedDataset(literal_matrix(frame, model.literals), model.literals, model.features, frame)
    in_s = model.support.evaluate(bd)
    unknown = _unknown_category_rows(model.features, frame)
    if unknown.any():
        log.warning("%d rows have unseen categories; marked out of support", int(unknown.sum()))
        in_s &= ~unknown
    in_o = in_s & model.overlap.evaluate(bd)
    out = np.full(len(frame), OUT_OF_SUPPORT, dtype=object)
    out[in_s] = SUPPORT_ONLY
    out[in_o] = IN_OVERLAP
    return out


def in_overlap(model: OverRuleModel, rows) -> np.ndarray:
    return predict(model, rows) == IN_OVERLAP


# --- model selection -----------------------------------------------------


def _folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def cross_validate(
    data: Dataset,
    cfg: OverRuleConfig = OverRuleConfig(),
    folds: int = 5,
    truth=None,
    policy: Policy | None = None,
) -> pd.DataFrame:
    """K-fold scores of the overlap region on held-out rows.

    Without ``truth`` the held-out reference labels are the fold model's
    base-estimator labels (zero outside its support), so the score measures
    how well the rules summarize the estimator.
    """
    n = len(data)
    if folds < 2 or folds > n:
        raise ValueError("folds must lie in [2, number of rows]")
    rows = []
    for i, test in enumerate(_folds(n, folds, cfg.seed)):
        train = np.setdiff1d(np.arange(n), test)
        pol_tr = policy.subset(train) if policy is not None else None
        model = fit(data.subset(train), replace(cfg, seed=cfg.seed + i), pol_tr)
        held = data.subset(test)
        pred = in_overlap(model, held)
        if truth is not None:
            ref = np.asarray(truth, dtype=bool)[test]
        else:
            pol_te = policy.subset(test) if policy is not None else None
            in_s = model.support.evaluate(model.binarize(held))
            ref = base_labels(model.base, held, cfg, pol_te).labels & in_s
        m = evaluate(pred, ref, (model.support, model.overlap))
        rows.append({"fold": i, **m.to_dict()})
    return pd.DataFrame(rows)


def select_hyperparameters(
    data: Dataset,
    cfg: OverRuleConfig = OverRuleConfig(),
    lambda0_grid: Sequence[float] = (1e-3, 1e-2, 1e-1),
    lambda1_grid: Sequence[float] = (1e-4, 1e-3, 1e-2),
    folds: int = 5,
    truth=None,
    tolerance: float = 0.01,
) -> tuple[OverRuleConfig, pd.DataFrame]:
    """Grid over the overlap-rule regularizers.

    Among settings whose mean balanced accuracy is within ``tolerance`` of
    the best, picks the one with the fewest literals.
    """
    results = []
    for l0, l1 in itertools.product(lambda0_grid, lambda1_grid):
        c = replace(cfg, overlap_lambda0=l0, overlap_lambda1=l1)
        cv = cross_validate(data, c, folds, truth)
        results.append({
            "overlap_lambda0": l0,
            "overlap_lambda1": l1,
            "balanced_accuracy": float(cv.balanced_accuracy.mean()),
            "literal_count": float(cv.literal_count.mean()),
        })
    table = pd.DataFrame(results)
    best = table.balanced_accuracy.max()
    ok = table[table.balanced_accuracy >= best - tolerance].sort_values(
        ["literal_count", "balanced_accuracy"], ascending=[True, False], kind="stable")
    pick = ok.iloc[0]
    return replace(cfg, overlap_lambda0=float(pick.overlap_lambda0), overlap_lambda1=float(pick.overlap_lambda1)), table
