"""Synthetic exclusion-recovery benchmark.

Binary data with ``n_rare`` rare and ``n_common`` common features; rows
where both features of ``excluded_pair`` equal 1 are removed, and a CNF
support fit should learn the inclusion clause ``(c_i = 0 or c_j = 0)``.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .data import Dataset, FeatureMeta, binarize, dataset_from_frame, sample_reference
from .rules import Conjunction, Literal, RuleError, RuleSet
from .solver import NPProblem, SearchConfig, run_column_generation, round_greedy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 10_000
    n_rare: int = 10
    n_common: int = 12
    p_rare: float = 0.01
    p_common: float = 0.5
    excluded_pair: tuple[int, int] = (10, 11)  # zero-based common indices -> c11, c12
    seed: int = 0

    def __post_init__(self):
        i, j = self.excluded_pair
        if not (0 <= i < self.n_common and 0 <= j < self.n_common and i != j):
            raise ValueError("excluded_pair must index two distinct common features")
        for p in (self.p_rare, self.p_common):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def feature_names(self) -> list[str]:
        return [f"r{i + 1}" for i in range(self.n_rare)] + [f"c{i + 1}" for i in range(self.n_common)]

    @property
    def excluded_names(self) -> tuple[str, str]:
        i, j = self.excluded_pair
        return f"c{i + 1}", f"c{j + 1}"


def gen_synthetic(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    rare = rng.random((cfg.n_samples, cfg.n_rare)) < cfg.p_rare
    common = rng.random((cfg.n_samples, cfg.n_common)) < cfg.p_common
    X = np.hstack([rare, common]).astype(int)
    i, j = cfg.excluded_pair
    keep = ~(common[:, i] & common[:, j])
    df = pd.DataFrame(X[keep], columns=cfg.feature_names)
    return dataset_from_frame(df, [FeatureMeta(n, "binary") for n in cfg.feature_names])


def target_clause(cfg: SynthConfig, data: Dataset) -> Conjunction:
    """The exclusion ``c_i = 1 and c_j = 1`` whose negation is the planted inclusion rule."""
    names = data.feature_names
    a, b = cfg.excluded_names
    return Conjunction([
        Literal(names.index(a), "==", 1, a, 0.5),
        Literal(names.index(b), "==", 1, b, 0.5),
    ])


def check_recovery(support: RuleSet, target: Conjunction, implication: bool = False) -> bool:
    """Whether a CNF support contains the inclusion clause ``NOT target``.

    CNF clauses are stored as exclusion conjunctions, so exact equivalence
    means one stored conjunction equals ``target``. With ``implication`` a
    stored conjunction that contains ``target``'s literals as a subset also
    counts (its inclusion clause is at least as strong).
    """
    if support.form != "CNF":
        raise RuleError("recovery is defined for CNF support rules")
    want = set(target.literals)
    for c in support.clauses:
        have = set(c.literals)
        if have == want or (implication and have and have <= want):
            return True
    return False


@dataclass(frozen=True)
class RecoveryResult:
    alpha: float
    lambda0: float
    lambda1: float
    beam_width: int
    seed: int
    recovered: bool
    in_lp: bool
    n_rules: int
    n_perfect: int
    mean_length: float
    seconds: float


def run_recovery(
    synth: SynthConfig,
    alpha: float,
    lambda0: float,
    lambda1: float,
    search: SearchConfig,
    reference_count: int = 5_000,
) -> RecoveryResult:
    """Fit a CNF support on one synthetic draw and score the planted exclusion."""
    t0 = time.perf_counter()
    data = gen_synthetic(synth)
    bd = binarize(data)
    ref = sample_reference(bd, reference_count, seed=synth.seed + 7919)
    problem = NPProblem(bd, ref, alpha, lambda0, lambda1, "CNF")
    cg = run_column_generation(problem, search)
    rounded = round_greedy(cg.state, cg.instance)
    rule = RuleSet("CNF", tuple(col.conj for col in rounded.columns))
    target = target_clause(synth, data)
    n_perfect = sum(1 for c in rule.clauses if not c.evaluate(bd).any() and c.evaluate(ref).any())
    lengths = [c.degree for c in rule.clauses]
    return RecoveryResult(
        alpha=alpha,
        lambda0=lambda0,
        lambda1=lambda1,
        beam_width=search.beam_width,
        seed=synth.seed,
        recovered=check_recovery(rule, target),
        in_lp=target in set(cg.pool),
        n_rules=len(rule.clauses),
        n_perfect=n_perfect,
        mean_length=float(np.mean(lengths)) if lengths else 0.0,
        seconds=time.perf_counter() - t0,
    )


# benchmark search budget: recovery is decided within the first few CG rounds
BENCH_SEARCH = SearchConfig(max_cg_iterations=10)
BENCH_REFERENCE = 5_000

DEFAULT_GRID = {
    "alpha": (0.95, 0.96, 0.97, 0.98, 0.99),
    "lambda0": (0.0, 1e-6, 1e-4, 1e-2),
    "lambda1": (1e-6, 1e-4, 1e-2),
    "beam_width": (10, 15, 20, 25, 30),
    "seed": (0, 1, 2),
}


def grid_cells(grid: dict) -> Iterable[dict]:
    keys = ["alpha", "lambda0", "lambda1", "beam_width", "seed"]
    for values in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, values))


def _run_cell(cell: dict, synth: SynthConfig, search: SearchConfig, reference_count: int) -> RecoveryResult:
    return run_recovery(
        replace(synth, seed=int(cell["seed"])),
        cell["alpha"],
        cell["lambda0"],
        cell["lambda1"],
        replace(search, beam_width=int(cell["beam_width"])),
        reference_count,
    )


def synth_bench(
    grid: dict | None = None,
    synth: SynthConfig = SynthConfig(),
    search: SearchConfig = BENCH_SEARCH,
    reference_count: int = BENCH_REFERENCE,
    jobs: int = 1,
) -> pd.DataFrame:
    """Run every grid cell; one row per (alpha, lambda0, lambda1, B, seed)."""
    grid = {**DEFAULT_GRID, **(grid or {})}
    cells = list(grid_cells(grid))
    if jobs > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(delayed(_run_cell)(c, synth, search, reference_count) for c in cells)
    else:
        results = [_run_cell(c, synth, search, reference_count) for c in cells]
    return pd.DataFrame([asdict(r) for r in results])


def summarize(bench: pd.DataFrame) -> pd.DataFrame:
    """Average over seeds, in the layout of a Rec / #R / #PR / Length table."""
    keys = ["alpha", "lambda0", "lambda1", "beam_width"]
    g = bench.groupby(keys, as_index=False)
    return g.agg(
        Rec=("recovered", "mean"),
        LP=("in_lp", "mean"),
        R=("n_rules", "mean"),
        PR=("n_perfect", "mean"),
        Length=("mean_length", "mean"),
    )
