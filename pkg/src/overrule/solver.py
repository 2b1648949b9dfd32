"""Coverage-constrained minimum-volume rule learning by column generation.

DNF problem (the rule ``C`` must cover at least ``alpha`` of the positives)::

    min  sum_k c_k r_k,   c_k = |U ∩ k| / |U| + lambda0 + lambda1 p_k
    s.t. xi_i + sum_k a_ik r_k >= 1      i in positives     (dual mu_i)
         sum_i xi_i <= (1 - alpha) m                        (dual nu)
         r, xi >= 0

CNF problem: the negated rule must cover ``alpha`` of the positives, so we
learn an exclusion DNF ``E`` that covers as much of the negatives as
possible while covering at most ``floor((1 - alpha) m)`` positives::

    min  sum_i xi_i / |U| + sum_k lambda_k r_k
    s.t. xi_i + sum_k a_ik r_k >= 1      i in negatives     (dual mu_i)
         sum_k |I ∩ k| r_k <= (1 - alpha) m                 (dual nu)

In both cases the reduced cost of a column is
``lambda_k + theta * |other ∩ k| - sum_i mu_i a_ik`` with ``theta = 1/|U|``
for DNF and ``theta = nu`` for CNF, which is what the beam search prices.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import highspy

from .data import BinarizedDataset
from .rules import ALL_TRUE, Conjunction, Literal, RuleSet, complexity

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class NPProblem:
    positives: BinarizedDataset
    negatives: BinarizedDataset
    coverage_target: float
    lambda0: float = 0.0
    lambda1: float = 0.0
    form: str = "DNF"

    def __post_init__(self):
        if len(self.positives) == 0 or len(self.negatives) == 0:
            raise ValueError("both the positive and the negative set must be non-empty")
        if tuple(self.positives.literals) != tuple(self.negatives.literals):
            raise ValueError("positives and negatives must share one literal universe")
        if not 0 < self.coverage_target <= 1:
            raise ValueError("coverage_target must lie in (0, 1]")
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.form not in ("DNF", "CNF"):
            raise ValueError(f"form must be DNF or CNF, got {self.form!r}")

    @property
    def required(self) -> int:
        """Positives the final rule must cover."""
        return ceil_tol(self.coverage_target * len(self.positives))


@dataclass(frozen=True)
class SearchConfig:
    beam_width: int = 10
    columns_per_iter: int | None = None
    max_cg_iterations: int = 30
    max_degree: int | None = None
    lp_tolerance: float = 1e-7
    rc_tolerance: float = 1e-6
    max_lp_rows: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.beam_width < 1 or self.max_cg_iterations < 1:
            raise ValueError("beam_width and max_cg_iterations must be >= 1")
        if self.columns_per_iter is not None and self.columns_per_iter < 1:
            raise ValueError("columns_per_iter must be >= 1")

    @property
    def k(self) -> int:
        return self.columns_per_iter or self.beam_width


def ceil_tol(x: float) -> int:
    return int(math.ceil(x - 1e-9))


def floor_tol(x: float) -> int:
    return int(math.floor(x + 1e-9))


def default_max_degree(lambda1: float) -> int:
    from .theory import max_degree

    return max_degree(lambda1) if 0 < lambda1 <= 1 else 5


# ---------------------------------------------------------------------------
# problem instance in LP coordinates


@dataclass
class _Side:
    """Unique rows of one sample set with multiplicities."""

    X: np.ndarray  # unique rows x literals, bool
    w: np.ndarray  # multiplicities
    total: float

    @classmethod
    def build(cls, matrix: np.ndarray) -> "_Side":
        if matrix.shape[1] == 0:
            return cls(np.ones((1, 0), dtype=bool), np.array([float(matrix.shape[0])]), float(matrix.shape[0]))
        packed = np.packbits(matrix, axis=1)
        _, first, counts = np.unique(packed, axis=0, return_index=True, return_counts=True)
        order = np.argsort(first)
        return cls(matrix[first[order]], counts[order].astype(float), float(matrix.shape[0]))


@dataclass
class Instance:
    """A problem mapped onto LP roles.

    ``cover`` holds the rows that get one covering constraint each (the
    positives for DNF, the negatives for CNF); ``other`` is the set whose
    coverage enters linearly (objective for DNF, budget for CNF).
    """

    problem: NPProblem
    literals: tuple[Literal, ...]
    cover: _Side
    other: _Side
    m: float  # number of positives
    budget: float  # DNF: slack budget (1-alpha)m; CNF: floor((1-alpha)m)

    @property
    def form(self) -> str:
        return self.problem.form

    def coverage(self, c: Conjunction) -> tuple[np.ndarray, np.ndarray]:
        return _cov(c, self.cover.X, self.index), _cov(c, self.other.X, self.index)

    @cached_property
    def index(self) -> dict[Literal, int]:
        return {lit: i for i, lit in enumerate(self.literals)}


def _cov(c: Conjunction, X: np.ndarray, index) -> np.ndarray:
    out = np.ones(X.shape[0], dtype=bool)
    for lit in c.literals:
        out &= X[:, index[lit]]
    return out


def make_instance(problem: NPProblem, cfg: SearchConfig) -> Instance:
    pos = problem.positives.literal_matrix.astype(bool)
    neg = problem.negatives.literal_matrix.astype(bool)
    cover, other = (pos, neg) if problem.form == "DNF" else (neg, pos)
    if cover.shape[0] > cfg.max_lp_rows:
        log.warning(
            "subsampling %d of %d covering rows for the LP (max_lp_rows)", cfg.max_lp_rows, cover.shape[0]
        )
        rng = np.random.default_rng(cfg.seed)
        cover = cover[np.sort(rng.choice(cover.shape[0], cfg.max_lp_rows, replace=False))]
    cover_side, other_side = _Side.build(cover), _Side.build(other)
    m = cover_side.total if problem.form == "DNF" else other_side.total
    slack = (1.0 - problem.coverage_target) * m
    budget = slack if problem.form == "DNF" else float(floor_tol(slack))
    return Instance(problem, tuple(problem.positives.literals), cover_side, other_side, m, budget)


# ---------------------------------------------------------------------------
# column pool and restricted LP


@dataclass
class Column:
    conj: Conjunction
    a_cover: np.ndarray
    a_other: np.ndarray
    lam: float
    other_count: float

    @property
    def degree(self) -> int:
        return self.conj.degree


def make_column(inst: Instance, c: Conjunction) -> Column:
    a_cover, a_other = inst.coverage(c)
    p = inst.problem
    lam = 0.0 if c.is_all_true else p.lambda0 + p.lambda1 * c.degree
    return Column(c, a_cover, a_other, lam, float(inst.other.w @ a_other))


def column_cost(inst: Instance, col: Column) -> float:
    """Objective coefficient of ``r_k``."""
    if inst.form == "DNF":
        return col.other_count / inst.other.total + col.lam
    return col.lam


@dataclass
class LPState:
    pool: list[Column]
    r: np.ndarray
    xi: np.ndarray
    mu: np.ndarray
    nu: float
    objective: float
    theta: float
    rc: np.ndarray = field(default_factory=lambda: np.zeros(0))


def initial_pool(inst: Instance) -> list[Column]:
    cols = [make_column(inst, ALL_TRUE)]
    cols += [make_column(inst, Conjunction([lit])) for lit in inst.literals]
    return cols


class RestrictedMaster:
    """Restricted LP over a growing column pool, warm-started between solves."""

    def __init__(self, inst: Instance, tol: float = 1e-7):
        self.inst = inst
        self.pool: list[Column] = []
        n = inst.cover.X.shape[0]
        h = highspy.Highs()
        h.silent()
        h.setOptionValue("primal_feasibility_tolerance", tol)
        h.setOptionValue("dual_feasibility_tolerance", tol)
        inf = highspy.kHighsInf
        # covering rows  xi_i + sum_k a_ik r_k >= 1,  then the budget row
        h.addRows(n, np.ones(n), np.full(n, inf), 0, np.array([], dtype=np.int32), np.array([], dtype=np.int32), np.array([]))
        h.addRow(-inf, inst.budget, 0, np.array([], dtype=np.int32), np.array([]))
        if inst.form == "DNF":
            xi_cost = np.zeros(n)
            idx = np.column_stack([np.arange(n), np.full(n, n)]).ravel().astype(np.int32)
            val = np.column_stack([np.ones(n), inst.cover.w]).ravel()
            starts = np.arange(0, 2 * n, 2, dtype=np.int32)
        else:
            xi_cost = inst.cover.w / inst.cover.total
            idx = np.arange(n, dtype=np.int32)
            val = np.ones(n)
            starts = np.arange(n, dtype=np.int32)
        h.addCols(n, xi_cost, np.zeros(n), np.full(n, inf), len(idx), starts, idx, val)
        self.h = h
        self.n = n

    def add(self, columns: Sequence[Column]) -> "RestrictedMaster":
        if not columns:
            return self
        inst = self.inst
        starts, idx, val, cost = [], [], [], []
        nnz = 0
        for col in columns:
            rows = np.flatnonzero(col.a_cover)
            coef = np.ones(rows.size)
            if inst.form == "CNF" and col.other_count:
                rows = np.append(rows, self.n)
                coef = np.append(coef, col.other_count)
            starts.append(nnz)
            idx.append(rows)
            val.append(coef)
            cost.append(column_cost(inst, col))
            nnz += rows.size
        k = len(columns)
        self.h.addCols(
            k,
            np.array(cost),
            np.zeros(k),
            np.full(k, highspy.kHighsInf),
            nnz,
            np.array(starts, dtype=np.int32),
            np.concatenate(idx).astype(np.int32),
            np.concatenate(val),
        )
        self.pool.extend(columns)
        return self

    def solve(self) -> LPState:
        if not self.pool:
            raise SolverError("restricted LP needs a non-empty column pool")
        h = self.h
        h.run()
        status = h.getModelStatus()
        if status != highspy.HighsModelStatus.kOptimal:
            raise SolverError(
                f"restricted LP failed ({h.modelStatusToString(status)}); pool size {len(self.pool)}, rows {self.n}"
            )
        sol = h.getSolution()
        x = np.asarray(sol.col_value)
        y = np.asarray(sol.row_dual)
        n = self.n
        mu = np.clip(y[:n], 0.0, None)
        nu = max(-float(y[n]), 0.0)
        inst = self.inst
        theta = 1.0 / inst.other.total if inst.form == "DNF" else nu
        rc = np.array([reduced_cost(col, mu, theta) for col in self.pool])
        obj = h.getInfo().objective_function_value
        return LPState(list(self.pool), x[n:], x[:n], mu, nu, float(obj), theta, rc)


def solve_restricted_lp(pool: Sequence[Column], inst: Instance, tol: float = 1e-7) -> LPState:
    """Solve the LP relaxation over ``pool`` and return primal and dual values."""
    return RestrictedMaster(inst, tol).add(pool).solve()


def reduced_cost(col: Column, mu: np.ndarray, theta: float) -> float:
    return col.lam + theta * col.other_count - float(mu @ col.a_cover)


# ---------------------------------------------------------------------------
# pricing


def _extendable(conj: Conjunction, lits: Sequence[Literal]) -> np.ndarray:
    """Mask of literals that may extend ``conj`` to a strictly higher degree."""
    mask = np.ones(len(lits), dtype=bool)
    if conj.is_all_true:
        return mask
    own = {lit.feature: lit for lit in conj.literals}
    ops_by_feature: dict[int, set] = {}
    for lit in conj.literals:
        ops_by_feature.setdefault(lit.feature, set()).add(lit.op)
    for i, lit in enumerate(lits):
        f = lit.feature
        if f not in own:
            continue
        ops = ops_by_feature[f]
        if lit.op == ">" and ops == {"<="}:
            hi = next(x.value for x in conj.literals if x.feature == f and x.op == "<=")
            mask[i] = lit.value < hi
        elif lit.op == "<=" and ops == {">"}:
            lo = next(x.value for x in conj.literals if x.feature == f and x.op == ">")
            mask[i] = lit.value > lo
        else:
            mask[i] = False
    return mask


def price_columns(state: LPState, inst: Instance, cfg: SearchConfig) -> list[Conjunction]:
    """Beam search for conjunctions with negative reduced cost.

    Candidates are ranked by reduced cost (ties: degree, literal order); a
    beam member is only extended if its optimistic bound
    ``lambda0 + lambda1 (p + 1) - sum mu over its coverage`` is below
    ``-tol``. Returns up to ``cfg.k`` new conjunctions, most negative first.
    """
    p = inst.problem
    tol = cfg.rc_tolerance
    lits = inst.literals
    L = len(lits)
    if L == 0:
        return []
    maxdeg = cfg.max_degree or default_max_degree(p.lambda1)
    Xc = inst.cover.X.astype(float)
    Xo = inst.other.X.astype(float)
    mu, theta = state.mu, state.theta
    pooled = {col.conj for col in state.pool}
    found: dict[Conjunction, float] = {}

    # beam members: (conj, cover mask, other mask)
    beam: list[tuple[Conjunction, np.ndarray, np.ndarray]] = [
        (ALL_TRUE, np.ones(Xc.shape[0], dtype=bool), np.ones(Xo.shape[0], dtype=bool))
    ]
    for depth in range(1, maxdeg + 1):
        if not beam:
            break
        Vc = np.column_stack([b[1] for b in beam]).astype(float)
        Vo = np.column_stack([b[2] for b in beam]).astype(float)
        gain = Xc.T @ (mu[:, None] * Vc)  # L x beam
        ocount = Xo.T @ (inst.other.w[:, None] * Vo)
        cands: dict[Conjunction, tuple[float, float, int, int]] = {}
        for b, (conj, _, _) in enumerate(beam):
            allowed = _extendable(conj, lits)
            for j in np.flatnonzero(allowed):
                try:
                    new = conj.extend(lits[j])
                except ValueError:
                    continue
                if new.degree != depth or new in cands:
                    continue
                lam = p.lambda0 + p.lambda1 * new.degree
                rc = lam + theta * ocount[j, b] - gain[j, b]
                bound = p.lambda0 + p.lambda1 * (new.degree + 1) - gain[j, b]
                cands[new] = (rc, bound, b, j)
        if not cands:
            break
        ranked = sorted(cands.items(), key=lambda kv: (kv[1][0], kv[0].sort_key))
        for conj, (rc, *_rest) in ranked:
            if rc < -tol and conj not in pooled and conj not in found:
                found[conj] = rc
        keep = [conj for conj, (_, bound, _, _) in ranked if bound < -tol][: cfg.beam_width]
        beam = [(conj, *inst.coverage(conj)) for conj in keep]
    best = sorted(found.items(), key=lambda kv: (kv[1], kv[0].sort_key))
    return [conj for conj, _ in best[: cfg.k]]


# ---------------------------------------------------------------------------
# rounding


def _covered_weight(cols: Sequence[Column], w: np.ndarray, side: str = "cover") -> float:
    if not cols:
        return 0.0
    mask = np.zeros_like(getattr(cols[0], f"a_{side}"))
    for col in cols:
        mask |= getattr(col, f"a_{side}")
    return float(w @ mask)


def _tiekey(col: Column) -> tuple:
    return col.conj.sort_key


def _greedy_cover(
    inst: Instance, cols: Sequence[Column], target: float, marginal: bool = False
) -> tuple[list[Column], bool]:
    """Partial weighted set cover: cheapest cost per newly covered positive.

    New coverage is credited only up to the positives still needed. With
    ``marginal`` a column's cost is the negative volume it adds to the
    current union (plus its complexity) instead of its full Hamming cost.
    """
    w = inst.cover.w
    if not cols:
        return [], target > 0
    A = np.array([col.a_cover for col in cols])
    cost = np.array([column_cost(inst, col) for col in cols])
    lam = np.array([col.lam for col in cols])
    Ao = np.array([col.a_other for col in cols]) if marginal else None
    wo = inst.other.w / inst.other.total
    covered = np.zeros(A.shape[1], dtype=bool)
    covered_o = np.zeros(inst.other.X.shape[0], dtype=bool)
    chosen: list[int] = []
    while float(w @ covered) < target - 1e-9:
        need = target - float(w @ covered)
        new = np.minimum((A & ~covered) @ w, need)
        open_ = np.flatnonzero(new > 0)
        if open_.size == 0:
            break
        c = ((Ao[open_] & ~covered_o) @ wo + lam[open_]) if marginal else cost[open_]
        ratio = c / new[open_]
        best = min(open_[np.flatnonzero(ratio <= ratio.min() + 1e-15)], key=lambda k: _tiekey(cols[k]))
        chosen.append(int(best))
        covered |= A[best]
        if marginal:
            covered_o |= Ao[best]
    shortfall = float(w @ covered) < target - 1e-9
    # drop clauses that are no longer needed, most expensive first
    for k in sorted(chosen, key=lambda k: (-cost[k], _tiekey(cols[k]))):
        rest = [j for j in chosen if j != k]
        mask = A[rest].any(axis=0) if rest else np.zeros(A.shape[1], dtype=bool)
        if float(w @ mask) >= min(target, float(w @ covered)) - 1e-9:
            chosen = rest
            covered = mask
    return [cols[k] for k in chosen], shortfall


def _greedy_exclusion(inst: Instance, cols: Sequence[Column]) -> list[Column]:
    """Budgeted maximum coverage of negatives for the CNF exclusion rule.

    Clauses covering no positives come first (by net gain); the rest are
    ranked by net gain per positive spent, subject to the Hamming budget.
    """
    w, N = inst.cover.w, inst.cover.total
    cols = [col for col in cols if col.other_count <= inst.budget + 1e-9]
    if not cols:
        return []
    A = np.array([col.a_cover for col in cols])
    lam = np.array([col.lam for col in cols])
    spend = np.array([col.other_count for col in cols])
    covered = np.zeros(A.shape[1], dtype=bool)
    used = 0.0
    chosen: list[int] = []
    available = np.ones(len(cols), dtype=bool)
    while True:
        gain = ((A & ~covered) @ w) / N - lam
        ok = available & (gain > 1e-12) & (spend <= inst.budget - used + 1e-9)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            break
        free = idx[spend[idx] == 0]
        if free.size:
            score, pool = gain[free], free
        else:
            score, pool = gain[idx] / spend[idx], idx
        best = min(pool[np.flatnonzero(score >= score.max() - 1e-15)], key=lambda k: _tiekey(cols[k]))
        chosen.append(int(best))
        available[best] = False
        covered |= A[best]
        used += spend[best]
    # remove clauses whose unique coverage no longer pays for their complexity
    changed = True
    while changed:
        changed = False
        for k in sorted(chosen, key=lambda k: (-lam[k], _tiekey(cols[k]))):
            rest = [j for j in chosen if j != k]
            others = A[rest].any(axis=0) if rest else np.zeros(A.shape[1], dtype=bool)
            unique = float(w @ (A[k] & ~others)) / N
            if unique <= lam[k] + 1e-12:
                chosen = rest
                changed = True
                break
    return [cols[k] for k in chosen]


@dataclass
class Rounded:
    columns: list[Column]
    objective: float
    relaxed_objective: float
    shortfall: bool


def _score(inst: Instance, cols: list[Column], shortfall: bool = False) -> Rounded:
    p = inst.problem
    rule = RuleSet("DNF", tuple(col.conj for col in cols))
    R = complexity(rule, p.lambda0, p.lambda1)
    if inst.form == "DNF":
        vol = _covered_weight(cols, inst.other.w, "other") / inst.other.total
        relaxed = sum(column_cost(inst, col) for col in cols)
    else:
        vol = 1.0 - _covered_weight(cols, inst.cover.w) / inst.cover.total
        relaxed = vol + sum(col.lam for col in cols)
    return Rounded(cols, vol + R, relaxed, shortfall)


def round_greedy(state: LPState, inst: Instance) -> Rounded:
    """Integer rule from the final column pool.

    Several greedy candidates are formed (whole pool and LP-support columns,
    each with Hamming and marginal costs; single columns; the trivial
    rule) and the lowest true objective is kept.
    """
    pool = state.pool
    support = [col for col, r in zip(pool, state.r) if r > 1e-9]
    cands: list[Rounded] = []
    if inst.form == "DNF":
        target = ceil_tol(inst.problem.coverage_target * inst.cover.total)
        for subset in (pool, support):
            for marginal in (False, True):
                cols, short = _greedy_cover(inst, subset, target, marginal)
                cands.append(_score(inst, cols, short))
        singles = [col for col in pool if float(inst.cover.w @ col.a_cover) >= target - 1e-9]
        cands += [_score(inst, [col]) for col in singles]
    else:
        for subset in (pool, support):
            cands.append(_score(inst, _greedy_exclusion(inst, subset)))
        cands.append(_score(inst, []))
    feasible = [c for c in cands if not c.shortfall] or cands
    return min(
        feasible,
        key=lambda c: (c.objective, sum(col.degree for col in c.columns), len(c.columns)),
    )


# ---------------------------------------------------------------------------
# driver


@dataclass
class CGResult:
    instance: Instance
    state: LPState
    history: list[float]
    iterations: int
    converged: bool

    @property
    def pool(self) -> list[Conjunction]:
        return [col.conj for col in self.state.pool]


def run_column_generation(problem: NPProblem, cfg: SearchConfig = SearchConfig()) -> CGResult:
    inst = make_instance(problem, cfg)
    master = RestrictedMaster(inst, cfg.lp_tolerance).add(initial_pool(inst))
    history: list[float] = []
    converged = False
    it = 0
    while True:
        state = master.solve()
        history.append(state.objective)
        it += 1
        if it > cfg.max_cg_iterations:
            break
        new = price_columns(state, inst, cfg)
        log.debug("CG iteration %d: objective %.6g, %d new columns", it, state.objective, len(new))
        if not new:
            converged = True
            break
        master.add([make_column(inst, c) for c in new])
    return CGResult(inst, state, history, it, converged)


def fit_np_rules(problem: NPProblem, cfg: SearchConfig = SearchConfig()) -> RuleSet:
    """Learn a rule covering ``coverage_target`` of the positives at minimum
    negative coverage plus complexity.

    For ``form == "CNF"`` the returned rule is the negation of the learned
    exclusion DNF.
    """
    cg = run_column_generation(problem, cfg)
    rounded = round_greedy(cg.state, cg.instance)
    rule = RuleSet(problem.form, tuple(col.conj for col in rounded.columns))
    pos_cov = rule.evaluate(problem.positives)
    neg_cov = rule.evaluate(problem.negatives)
    required = problem.required
    if rounded.shortfall:
        log.warning("rule covers %d positives, %d required", int(pos_cov.sum()), required)
    prov = {
        "form": problem.form,
        "objective": rounded.objective,
        "relaxed_objective": rounded.relaxed_objective,
        "lp_objective": cg.state.objective,
        "lp_history": list(cg.history),
        "iterations": cg.iterations,
        "converged": cg.converged,
        "pool_size": len(cg.state.pool),
        "min_pool_reduced_cost": float(cg.state.rc.min()),
        "coverage": float(pos_cov.mean()),
        "covered_positives": int(pos_cov.sum()),
        "required_positives": required,
        "negative_coverage": float(neg_cov.mean()),
        "coverage_shortfall": bool(rounded.shortfall),
        "lambda0": problem.lambda0,
        "lambda1": problem.lambda1,
        "coverage_target": problem.coverage_target,
    }
    return RuleSet(problem.form, rule.clauses, prov)
