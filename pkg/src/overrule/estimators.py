"""Base overlap estimators and the pseudo-labels they induce.

Three base estimators are provided: a multinomial logistic propensity
model, a k-nearest-neighbour propensity model and per-group marginal
bounding boxes. Labels are 1 where every relevant group's estimated
propensity is at least ``eps`` (or, for boxes, inside every group's box).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .data import DataError, Dataset, FeatureMeta, _norm_group

log = logging.getLogger(__name__)

KIND_NAMES = ("logistic", "knn", "cbb")


class EstimatorError(ValueError):
    pass


# --- design matrix -------------------------------------------------------


@dataclass(frozen=True)
class Encoder:
    """One-hot encodes categoricals and standardizes with training statistics."""

    features: tuple[FeatureMeta, ...]
    mean: np.ndarray
    scale: np.ndarray

    @staticmethod
    def raw(features: Sequence[FeatureMeta], frame: pd.DataFrame) -> np.ndarray:
        blocks = []
        for f in features:
            col = frame[f.name].to_numpy()
            if f.kind == "categorical":
                cats = np.asarray(f.categories, dtype=object)
                blocks.append((col.astype(str)[:, None] == cats[None, :]).astype(float))
            else:
                blocks.append(col.astype(float)[:, None])
        if not blocks:
            return np.zeros((len(frame), 0))
        return np.hstack(blocks)

    @classmethod
    def fit(cls, features: Sequence[FeatureMeta], frame: pd.DataFrame) -> "Encoder":
        X = cls.raw(features, frame)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale <= 1e-12] = 1.0
        return cls(tuple(features), mean, scale)

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        return (self.raw(self.features, frame) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


def _frame(rows) -> pd.DataFrame:
    if isinstance(rows, Dataset):
        return rows.frame
    if isinstance(rows, pd.DataFrame):
        return rows
    raise TypeError(f"expected a Dataset or DataFrame, got {type(rows).__name__}")


def _group_index(groups, group_set: Sequence) -> np.ndarray:
    lookup = {g: i for i, g in enumerate(group_set)}
    try:
        return np.array([lookup[g] for g in groups.tolist()], dtype=int)
    except KeyError as e:
        raise EstimatorError(f"group {e.args[0]!r} not in group set {list(group_set)}") from None


def _check_groups(data: Dataset, groups=None, group_set=None, min_rows: int = 1):
    groups = data.groups if groups is None else np.asarray(groups)
    if groups is None:
        raise EstimatorError("dataset has no group column")
    if len(groups) != len(data):
        raise EstimatorError("group vector length differs from the number of rows")
    group_set = tuple(group_set or data.group_set or sorted(set(groups.tolist())))
    if len(group_set) < 2:
        raise EstimatorError("need at least two groups")
    idx = _group_index(groups, group_set)
    counts = np.bincount(idx, minlength=len(group_set))
    small = [g for g, c in zip(group_set, counts) if c < min_rows]
    if small:
        raise EstimatorError(f"groups {small} have fewer than {min_rows} rows")
    return idx, group_set


# --- models --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """A fitted group-membership model.

    ``params`` holds kind-specific arrays: ``W``/``b`` for logistic,
    ``X``/``y``/``k`` for knn and per-group ``boxes`` for cbb.
    """

    kind: str
    group_set: tuple
    features: tuple[FeatureMeta, ...]
    params: dict = field(repr=False)
    encoder: Encoder | None = field(default=None, repr=False)
    converged: bool = True

    def __post_init__(self):
        if self.kind not in KIND_NAMES:
            raise EstimatorError(f"unknown estimator kind {self.kind!r}")

    @property
    def k(self) -> int | None:
        return int(self.params["k"]) if self.kind == "knn" else None

    def predict_proba(self, rows) -> np.ndarray:
        """Rows x groups matrix of estimated propensities."""
        if self.kind == "cbb":
            raise EstimatorError("bounding-box models give memberships, not probabilities")
        X = self.encoder.transform(_frame(rows))
        if self.kind == "logistic":
            return softmax(X @ self.params["W"] + self.params["b"], axis=1)
        return _knn_proba(self.params["X"], self.params["y"], X, self.k, len(self.group_set))

    def in_boxes(self, rows) -> np.ndarray:
        """Rows x groups membership in each group's box (cbb only)."""
        if self.kind != "cbb":
            raise EstimatorError("in_boxes is defined for cbb models only")
        frame = _frame(rows)
        out = np.ones((len(frame), len(self.group_set)), dtype=bool)
        for g, box in enumerate(self.params["boxes"]):
            for name, (lo, hi) in box.items():
                v = frame[name].to_numpy(dtype=float)
                out[:, g] &= (v >= lo) & (v <= hi)
        return out

    def describe(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "groups": list(self.group_set), "converged": self.converged}
        if self.kind == "knn":
            d["k"] = self.k
        if self.kind == "logistic":
            d["l2"] = self.params.get("l2")
        if self.kind == "cbb":
            d["alpha"] = self.params.get("alpha")
        return d

    def to_dict(self) -> dict:
        p: dict[str, Any] = {}
        for key, v in self.params.items():
            if isinstance(v, np.ndarray):
                p[key] = v.tolist()
            elif key == "boxes":
                p[key] = [{n: list(b) for n, b in box.items()} for box in v]
            else:
                p[key] = v
        return {
            "kind": self.kind,
            "group_set": list(self.group_set),
            "features": [f.to_dict() for f in self.features],
            "params": p,
            "encoder": self.encoder.to_dict() if self.encoder else None,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PropensityModel":
        feats = tuple(FeatureMeta.from_dict(f) for f in d["features"])
        params = dict(d["params"])
        for key in ("W", "b", "X"):
            if key in params:
                params[key] = np.asarray(params[key], dtype=float)
        if "y" in params:
            params["y"] = np.asarray(params["y"], dtype=int)
        if "boxes" in params:
            params["boxes"] = [{n: tuple(b) for n, b in box.items()} for box in params["boxes"]]
        enc = None
        if d.get("encoder"):
            enc = Encoder(feats, np.asarray(d["encoder"]["mean"]), np.asarray(d["encoder"]["scale"]))
        return cls(d["kind"], tuple(d["group_set"]), feats, params, enc, bool(d.get("converged", True)))


def fit_logistic(
    data: Dataset,
    groups=None,
    l2_strength: float = 1.0,
    max_iter: int = 1000,
    gtol: float = 1e-6,
) -> PropensityModel:
    """Multinomial logistic regression on standardized, one-hot encoded features.

    Minimizes (sum of log-losses + l2/2 ||W||^2) / n with L-BFGS; the
    intercept is not penalized. ``l2_strength = 1`` matches an inverse
    regularization strength C = 1.
    """
    if l2_strength < 0:
        raise EstimatorError("l2_strength must be nonnegative")
    y, group_set = _check_groups(data, groups, min_rows=2)
    enc = Encoder.fit(data.features, data.frame)
    X = enc.transform(data.frame)
    n, d = X.shape
    G = len(group_set)
    Y = np.eye(G)[y]

    def f(theta):
        W = theta[: d * G].reshape(d, G)
        b = theta[d * G:]
        Z = X @ W + b
        lp = log_softmax(Z, axis=1)
        loss = -(Y * lp).sum() + 0.5 * l2_strength * (W * W).sum()
        R = np.exp(lp) - Y
        gW = X.T @ R + l2_strength * W
        gb = R.sum(axis=0)
        return loss / n, np.concatenate([gW.ravel(), gb]) / n

    res = minimize(f, np.zeros(d * G + G), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 0.0})
    grad_norm = float(np.abs(res.jac).max()) if res.jac.size else 0.0
    converged = grad_norm <= gtol or bool(res.success)
    if not converged:
        log.warning("logistic fit stopped after %d iterations with gradient %.2e", res.nit, grad_norm)
    W = res.x[: d * G].reshape(d, G)
    b = res.x[d * G:]
    params = {"W": W, "b": b, "l2": l2_strength, "iterations": int(res.nit)}
    return PropensityModel("logistic", group_set, data.features, params, enc, converged)


def fit_knn(data: Dataset, groups=None, k: int = 8) -> PropensityModel:
    """k-nearest-neighbour propensities with Euclidean distance on standardized features."""
    y, group_set = _check_groups(data, groups)
    if k < 1:
        raise EstimatorError("k must be at least 1")
    if k > len(data):
        raise EstimatorError(f"k = {k} exceeds the number of training rows ({len(data)})")
    enc = Encoder.fit(data.features, data.frame)
    params = {"X": enc.transform(data.frame), "y": y, "k": int(k)}
    return PropensityModel("knn", group_set, data.features, params, enc)


def _knn_proba(Xtr: np.ndarray, ytr: np.ndarray, Xq: np.ndarray, k: int, G: int, chunk: int = 2048) -> np.ndarray:
    out = np.empty((Xq.shape[0], G))
    sq_tr = (Xtr * Xtr).sum(axis=1)
    for s in range(0, Xq.shape[0], chunk):
        q = Xq[s: s + chunk]
        d2 = sq_tr[None, :] - 2.0 * q @ Xtr.T + (q * q).sum(axis=1)[:, None]
        # round away float noise so equal distances tie, then stable sort = row-index order
        d2 = np.round(np.maximum(d2, 0.0), 10)
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        counts = np.zeros((q.shape[0], G))
        np.add.at(counts, (np.repeat(np.arange(q.shape[0]), k), ytr[nn].ravel()), 1.0)
        out[s: s + chunk] = counts / k
    return out


def fit_cbb(data: Dataset, groups=None, alpha: float = 0.9) -> PropensityModel:
    """Per-group boxes spanning the [(1-a)/2, (1+a)/2] marginal quantiles of continuous features.

    Categorical and binary features keep their full category set, so they
    never exclude a row.
    """
    if not 0 < alpha <= 1:
        raise EstimatorError("alpha must lie in (0, 1]")
    y, group_set = _check_groups(data, groups)
    lo_q, hi_q = (1 - alpha) / 2, (1 + alpha) / 2
    boxes = []
    for g in range(len(group_set)):
        rows = data.frame[y == g]
        box = {}
        for f in data.features:
            if f.kind == "continuous":
                v = rows[f.name].to_numpy(dtype=float)
                box[f.name] = (float(np.quantile(v, lo_q)), float(np.quantile(v, hi_q)))
        boxes.append(box)
    return PropensityModel("cbb", group_set, data.features, {"boxes": boxes, "alpha": alpha})


def fit_propensity(data: Dataset, kind: str, groups=None, **kw) -> PropensityModel:
    if kind == "logistic":
        return fit_logistic(data, groups, **kw)
    if kind == "knn":
        return fit_knn(data, groups, **kw)
    if kind == "cbb":
        return fit_cbb(data, groups, **kw)
    raise EstimatorError(f"unknown estimator kind {kind!r}")


# --- labels --------------------------------------------------------------


@dataclass(frozen=True)
class OverlapLabels:
    labels: np.ndarray
    eps: float | None
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise EstimatorError(f"eps must lie in (0, 1), got {eps}")


def overlap_labels(model: PropensityModel, rows, eps: float = 0.1) -> OverlapLabels:
    """1 where every group has estimated propensity >= eps (cbb: inside every group box)."""
    _check_eps(eps)
    if model.kind == "cbb":
        lab = model.in_boxes(rows).all(axis=1)
        return OverlapLabels(lab, None, model.describe())
    P = model.predict_proba(rows)
    if eps >= 1.0 / len(model.group_set):
        log.warning("eps = %g >= 1/|T|; almost every label will be 0", eps)
    return OverlapLabels((P >= eps).all(axis=1), eps, model.describe())


# --- policies ------------------------------------------------------------


@dataclass(frozen=True)
class PolicyRule:
    """``when`` is a list of (feature, op, value) conditions, all of which must hold."""

    when: tuple[tuple[str, str, Any], ...]
    treatments: frozenset

    def matches(self, frame: pd.DataFrame) -> np.ndarray:
        out = np.ones(len(frame), dtype=bool)
        for name, op, value in self.when:
            col = frame[name].to_numpy()
            if op in ("<=", "<", ">", ">="):
                col = col.astype(float)
                value = float(value)
            elif isinstance(value, (int, float)) and col.dtype.kind in "iuf":
                pass
            else:
                col, value = col.astype(str), str(value)
            if op == "<=":
                out &= col <= value
            elif op == "<":
                out &= col < value
            elif op == ">":
                out &= col > value
            elif op == ">=":
                out &= col >= value
            elif op == "==":
                out &= col == value
            elif op == "!=":
                out &= col != value
            else:
                raise EstimatorError(f"unknown policy operator {op!r}")
        return out


@dataclass(frozen=True)
class Policy:
    """The set of treatments a target policy may take on each row.

    Either ``allowed`` (one set per row, e.g. from a CSV column) or a list
    of ``rules`` evaluated in order, first match wins, with ``default``
    used when none match.
    """

    allowed: tuple[frozenset, ...] | None = None
    rules: tuple[PolicyRule, ...] = ()
    default: frozenset | None = None

    @classmethod
    def from_column(cls, values: Sequence, sep: str = "|") -> "Policy":
        sets = []
        for v in values:
            items = [s.strip() for s in str(v).split(sep)] if not isinstance(v, (set, frozenset, list, tuple)) else list(v)
            sets.append(frozenset(_norm_group(s) for s in items if str(s) != ""))
        return cls(allowed=tuple(sets))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Policy":
        rules = tuple(
            PolicyRule(tuple(tuple(c) for c in r["when"]), frozenset(_norm_group(t) for t in r["treatments"]))
            for r in d.get("rules", [])
        )
        default = d.get("default")
        return cls(rules=rules, default=None if default is None else frozenset(_norm_group(t) for t in default))

    @classmethod
    def load(cls, path) -> "Policy":
        path = Path(path)
        if not path.exists():
            raise DataError(f"policy file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    @classmethod
    def full(cls, group_set: Sequence) -> "Policy":
        return cls(default=frozenset(group_set))

    def allowed_sets(self, rows) -> list[frozenset]:
        frame = _frame(rows)
        if self.allowed is not None:
            if len(self.allowed) != len(frame):
                raise EstimatorError("policy column length differs from the number of rows")
            return list(self.allowed)
        out: list[frozenset | None] = [None] * len(frame)
        for rule in self.rules:
            hit = rule.matches(frame)
            for i in np.flatnonzero(hit):
                if out[i] is None:
                    out[i] = rule.treatments
        return [s if s is not None else (self.default or frozenset()) for s in out]

    def subset(self, mask) -> "Policy":
        if self.allowed is None:
            return self
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Policy(allowed=tuple(self.allowed[i] for i in idx))


def policy_overlap_labels(model: PropensityModel, rows, policy: Policy, eps: float = 0.1) -> OverlapLabels:
    """1 where every treatment the policy may take has estimated propensity >= eps."""
    _check_eps(eps)
    sets = policy.allowed_sets(rows)
    G = len(model.group_set)
    lookup = {g: i for i, g in enumerate(model.group_set)}
    mask = np.zeros((len(sets), G), dtype=bool)
    for i, s in enumerate(sets):
        if not s:
            raise EstimatorError(f"row {i}: policy allows no treatment")
        try:
            mask[i, [lookup[t] for t in s]] = True
        except KeyError as e:
            raise EstimatorError(f"row {i}: treatment {e.args[0]!r} not in group set {list(model.group_set)}") from None
    if model.kind == "cbb":
        ok = model.in_boxes(rows)
    else:
        ok = model.predict_proba(rows) >= eps
    lab = (ok | ~mask).all(axis=1)
    return OverlapLabels(lab, None if model.kind == "cbb" else eps, {**model.describe(), "policy": True})
