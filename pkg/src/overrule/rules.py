"""Literals, conjunctions and DNF/CNF rule sets.

A :class:`RuleSet` in CNF form is stored as the DNF of its exclusion clauses
plus a negation flag, so ``CNF(E)`` covers a row iff ``DNF(E)`` does not.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

OPS = ("<=", ">", "==", "!=")
_OP_RANK = {op: i for i, op in enumerate(OPS)}


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    """A single condition on one feature, e.g. ``age <= 30`` or ``sex == F``.

    ``fraction`` is the share of the feature's domain (range length or
    category count) that satisfies the condition; it is not part of the
    literal's identity.
    """

    feature: int
    op: str
    value: Any
    name: str = field(default="", compare=False)
    fraction: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        if self.op not in _OP_RANK:
            raise RuleError(f"unknown operator {self.op!r}")
        if not (np.isnan(self.fraction) or -1e-12 <= self.fraction <= 1 + 1e-12):
            raise RuleError(f"fraction {self.fraction} outside [0, 1]")

    @property
    def sort_key(self) -> tuple:
        return (self.feature, _OP_RANK[self.op], self.value)

    def evaluate(self, values) -> np.ndarray:
        values = np.asarray(values)
        if self.op == "<=":
            return values <= self.value
        if self.op == ">":
            return values > self.value
        if self.op == "==":
            return values == self.value
        return values != self.value

    def __str__(self) -> str:
        name = self.name or f"x{self.feature}"
        if self.op == "<=":
            return f"{name} <= {_fmt(self.value)}"
        if self.op == ">":
            return f"{name} > {_fmt(self.value)}"
        if self.op == "!=":
            return f"¬{name} = {_fmt(self.value)}"
        # integer values only arise from binary features; categories are strings
        if isinstance(self.value, (int, np.integer)) and not isinstance(self.value, bool):
            return name if self.value == 1 else f"¬{name}"
        return f"{name} = {_fmt(self.value)}"

    def to_dict(self) -> dict:
        return {
            "feature": int(self.feature),
            "name": self.name,
            "op": self.op,
            "value": _plain(self.value),
            "fraction": float(self.fraction),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Literal":
        return cls(int(d["feature"]), d["op"], d["value"], d.get("name", ""), float(d.get("fraction", "nan")))


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    return str(v)


def _canonicalize(literals: Iterable[Literal]) -> tuple[Literal, ...]:
    by_feature: dict[int, list[Literal]] = {}
    for lit in literals:
        by_feature.setdefault(lit.feature, []).append(lit)
    out: list[Literal] = []
    for feat in sorted(by_feature):
        lits = by_feature[feat]
        ops = {lit.op for lit in lits}
        if ops & {"<=", ">"} and ops & {"==", "!="}:
            raise RuleError(f"mixed interval and set literals on feature {feat}")
        if ops & {"<=", ">"}:
            upper = [lit for lit in lits if lit.op == "<="]
            lower = [lit for lit in lits if lit.op == ">"]
            hi = min(upper, key=lambda lit: lit.value) if upper else None
            lo = max(lower, key=lambda lit: lit.value) if lower else None
            if hi is not None and lo is not None and lo.value >= hi.value:
                raise RuleError(f"contradictory literals {lo} and {hi}")
            out.extend(lit for lit in (hi, lo) if lit is not None)
        else:
            eq = {lit.value: lit for lit in lits if lit.op == "=="}
            neq = {lit.value: lit for lit in lits if lit.op == "!="}
            if len(eq) > 1:
                raise RuleError(f"contradictory literals {list(eq.values())}")
            if eq:
                (v, lit), = eq.items()
                if v in neq:
                    raise RuleError(f"contradictory literals {lit} and {neq[v]}")
                out.append(lit)
            else:
                out.extend(neq.values())
    return tuple(sorted(out, key=lambda lit: lit.sort_key))


@dataclass(frozen=True, init=False)
class Conjunction:
    """AND of literals, canonically sorted.

    Literals on the same continuous feature are merged into one interval;
    contradictory combinations raise :class:`RuleError`. The empty
    conjunction is the all-true clause.
    """

    literals: tuple[Literal, ...]

    def __init__(self, literals: Iterable[Literal] = ()):
        object.__setattr__(self, "literals", _canonicalize(literals))

    @property
    def degree(self) -> int:
        return len(self.literals)

    @property
    def is_all_true(self) -> bool:
        return not self.literals

    @property
    def sort_key(self) -> tuple:
        return (self.degree, tuple(lit.sort_key for lit in self.literals))

    @property
    def features(self) -> frozenset[int]:
        return frozenset(lit.feature for lit in self.literals)

    def extend(self, literal: Literal) -> "Conjunction":
        return Conjunction(self.literals + (literal,))

    def evaluate(self, data) -> np.ndarray:
        """Coverage over a binarized dataset or a raw DataFrame."""
        if hasattr(data, "literal_index"):
            return _eval_binarized(self, data.literal_matrix, data.literal_index)
        if isinstance(data, pd.DataFrame):
            out = np.ones(len(data), dtype=bool)
            for lit in self.literals:
                out &= lit.evaluate(data[lit.name].to_numpy())
            return out
        raise TypeError(f"cannot evaluate a conjunction on {type(data).__name__}")

    def __str__(self) -> str:
        if self.is_all_true:
            return "TRUE"
        return " and ".join(str(lit) for lit in self.literals)

    def to_list(self) -> list[dict]:
        return [lit.to_dict() for lit in self.literals]

    @classmethod
    def from_list(cls, items: Sequence[Mapping]) -> "Conjunction":
        return cls(Literal.from_dict(d) for d in items)


ALL_TRUE = Conjunction()


def _eval_binarized(c: Conjunction, matrix: np.ndarray, index: Mapping[Literal, int]) -> np.ndarray:
    out = np.ones(matrix.shape[0], dtype=bool)
    for lit in c.literals:
        try:
            col = index[lit]
        except KeyError:
            raise RuleError(f"literal {lit} is not in the row's literal universe") from None
        out &= matrix[:, col].astype(bool)
    return out


def eval_conjunction(c: Conjunction, row, universe) -> bool:
    """Evaluate ``c`` on one binarized row.

    ``universe`` is either a sequence of literals aligned with ``row`` or a
    mapping from literal to column position.
    """
    if not isinstance(universe, Mapping):
        universe = {lit: i for i, lit in enumerate(universe)}
    row = np.asarray(row).reshape(1, -1)
    return bool(_eval_binarized(c, row, universe)[0])


@dataclass(frozen=True)
class RuleSet:
    form: str
    clauses: tuple[Conjunction, ...] = ()
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.form not in ("DNF", "CNF"):
            raise RuleError(f"form must be DNF or CNF, got {self.form!r}")
        clauses = tuple(self.clauses)
        if any(c.is_all_true for c in clauses):
            clauses = (ALL_TRUE,)
        # dedupe, keep canonical order so equal rules compare equal
        clauses = tuple(sorted(set(clauses), key=lambda c: c.sort_key))
        object.__setattr__(self, "clauses", clauses)

    @property
    def is_trivial(self) -> bool:
        return not self.clauses or self.clauses == (ALL_TRUE,)

    @property
    def literal_count(self) -> int:
        return sum(c.degree for c in self.clauses)

    def covers_exclusions(self, data) -> np.ndarray:
        """OR over stored clauses (the exclusion rule for CNF)."""
        out = np.zeros(_n_rows(data), dtype=bool)
        for c in self.clauses:
            out |= c.evaluate(data)
        return out

    def evaluate(self, data) -> np.ndarray:
        hit = self.covers_exclusions(data)
        return ~hit if self.form == "CNF" else hit

    def negated(self) -> "RuleSet":
        return RuleSet("DNF" if self.form == "CNF" else "CNF", self.clauses, dict(self.provenance))

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "clauses": [c.to_list() for c in self.clauses],
            "provenance": _jsonable(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RuleSet":
        return cls(d["form"], tuple(Conjunction.from_list(c) for c in d["clauses"]), dict(d.get("provenance", {})))


def _n_rows(data) -> int:
    if hasattr(data, "literal_matrix"):
        return data.literal_matrix.shape[0]
    return len(data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def eval_ruleset(r: RuleSet, row, universe) -> bool:
    if not isinstance(universe, Mapping):
        universe = {lit: i for i, lit in enumerate(universe)}
    row = np.asarray(row).reshape(1, -1)
    hit = any(_eval_binarized(c, row, universe)[0] for c in r.clauses)
    return (not hit) if r.form == "CNF" else hit


def exact_clause_volume(c: Conjunction, features: Sequence | None = None) -> float:
    """Normalized volume of a clause under the uniform reference measure.

    Product over features of the fraction of the feature's domain allowed by
    the clause. ``features`` is accepted for validation only.
    """
    if features is not None:
        for lit in c.literals:
            if not 0 <= lit.feature < len(features):
                raise RuleError(f"literal {lit} refers to unknown feature {lit.feature}")
    by_feature: dict[int, list[Literal]] = {}
    for lit in c.literals:
        by_feature.setdefault(lit.feature, []).append(lit)
    vol = 1.0
    for lits in by_feature.values():
        if any(np.isnan(lit.fraction) for lit in lits):
            raise RuleError("literal without a domain fraction")
        ops = [lit.op for lit in lits]
        if "<=" in ops or ">" in ops:
            # interval: P(x <= hi) - P(x <= lo)
            hi = next((lit.fraction for lit in lits if lit.op == "<="), 1.0)
            lo = next((1.0 - lit.fraction for lit in lits if lit.op == ">"), 0.0)
            vol *= max(hi - lo, 0.0)
        elif "==" in ops:
            vol *= lits[0].fraction
        else:
            vol *= max(1.0 - sum(1.0 - lit.fraction for lit in lits), 0.0)
    return vol


def complexity(r: RuleSet, lambda0: float, lambda1: float) -> float:
    if lambda0 < 0 or lambda1 < 0:
        raise RuleError("regularization weights must be nonnegative")
    if r.is_trivial:
        return 0.0
    return len(r.clauses) * lambda0 + lambda1 * r.literal_count


def format_rules(r: RuleSet, data=None, title: str = "Rules", prefix: str = "R") -> str:
    """Human-readable listing, one clause per line with coverage on ``data``."""
    lines = [title]
    if r.form == "CNF":
        if not r.clauses:
            lines.append("  (all rows; no exclusions)")
            return "\n".join(lines)
        lines.append("  NONE OF:")
    elif not r.clauses:
        lines.append("  (no rows; empty rule)")
        return "\n".join(lines)
    for i, c in enumerate(r.clauses, 1):
        cov = ""
        if data is not None and _n_rows(data):
            cov = f" ({100.0 * c.evaluate(data).mean():.1f}%)"
        joiner = "" if i == 1 or r.form == "CNF" else "OR "
        lines.append(f"  {joiner}Rule {prefix}.{i}{cov}: {c}")
    return "\n".join(lines)
