"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The lines are collected in ``RESULTS`` and printed in the terminal summary
(see conftest.py). Criteria 1 and 2 share one benchmark sweep of 108 fits,
roughly 10 to 15 minutes on one CPU. Run alone with
``pytest tests/test_acceptance.py -v``.
"""
import itertools

import numpy as np
import pandas as pd
import pytest

from overrule.data import binarize, sample_reference
from overrule.datasets import iris_overlap
from overrule.estimators import Policy, fit_knn, fit_logistic, overlap_labels, policy_overlap_labels
from overrule.pipeline import IN_OVERLAP, OverRuleConfig, fit, predict
from overrule.rules import RuleSet, exact_clause_volume
from overrule.solver import SearchConfig, fit_np_rules, run_column_generation
from overrule.synth import SynthConfig, gen_synthetic, synth_bench
from overrule.theory import candidate_bound_log, epsilon_bound, max_degree
from tests.test_estimators import grouped
from tests.test_rules import _random_conjunction
from tests.test_solver import brute_force_optimum, problem_from, tiny_instances, true_objective
from tests.test_theory import plug_in_candidates, plug_in_epsilon

RESULTS: list[str] = []


def report(name: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


GRID = {
    "alpha": (0.97, 0.98, 0.99),
    "lambda0": (0.0, 1e-6, 1e-4),
    "lambda1": (1e-6, 1e-4),
    "beam_width": (10, 15),
    "seed": (0, 1, 2),
}


@pytest.fixture(scope="module")
def bench():
    return synth_bench(GRID)


def test_criterion_1_exclusion_recovery(bench):
    b15 = bench[bench.beam_width == 15]
    per_cell = b15.groupby(["alpha", "lambda0", "lambda1"]).recovered.sum()
    worst = b15.groupby(["alpha", "lambda0", "lambda1"]).seconds.sum().max()
    ok = bool((per_cell == 3).all()) and worst <= 600
    report("1 synthetic recovery (B=15)",
           ok, f"{int((per_cell == 3).sum())}/{len(per_cell)} cells at 3/3, slowest cell {worst:.0f}s")


def test_criterion_2_beam_width(bench):
    rec = bench.groupby("beam_width").recovered.mean()
    ok = rec[10] < rec[15] and rec[10] <= 0.3 and rec[15] >= 0.7
    report("2 beam-width effect", ok, f"Rec B=10 {rec[10]:.2f}, B=15 {rec[15]:.2f}")


def test_criterion_3_removal_rate():
    rates = [1 - len(gen_synthetic(SynthConfig(seed=s))) / 10_000 for s in range(5)]
    ok = all(abs(r - 0.25) <= 0.02 for r in rates)
    report("3 removal rate", ok, "removed " + ", ".join(f"{r:.3f}" for r in rates))


def test_criterion_4_jobs():
    RESULTS.append("SKIP  4 jobs reproduction: public LaLonde/PSID files not reachable here; "
                   "replaced by criterion 7 (run scripts/jobs.py where they are)")
    pytest.skip("jobs data not available offline; criterion 7 replaces it")


def test_criterion_5_iris():
    data, setosa = iris_overlap()
    cfg = OverRuleConfig(alpha=0.9, eps=0.1, base="knn", knn_k=8)
    model = fit(data, cfg)
    excluded = float((predict(model, setosa) != IN_OVERLAP).mean())
    p = model.overlap.provenance
    beta_need = int(np.ceil(cfg.beta * model.fit_metrics["n_base_overlap"]))
    ok = excluded >= 0.9 and p["covered_positives"] >= beta_need
    report("5 iris", ok, f"setosa excluded {excluded:.2f}, overlap covers {p['covered_positives']}"
                         f" of {model.fit_metrics['n_base_overlap']} base points (need {beta_need})")


def test_criterion_6_theory():
    checks = [max_degree(0.01) == 7]
    ms = [10, 100, 10_000, 10**6]
    checks.append(all(epsilon_bound(a, 7, 0.01, 0.05) > epsilon_bound(b, 7, 0.01, 0.05) for a, b in zip(ms, ms[1:])))
    ds = [1, 2, 10, 100]
    checks.append(all(epsilon_bound(1000, a, 0.01, 0.05) < epsilon_bound(1000, b, 0.01, 0.05) for a, b in zip(ds, ds[1:])))
    worst = 0.0
    for m, d, lam, delta in itertools.product((50, 10_000), (1, 7, 40), (1.0, 0.1, 0.01), (0.05, 0.5)):
        ref = float(plug_in_epsilon(m, d, lam, delta))
        worst = max(worst, abs(epsilon_bound(m, d, lam, delta) - ref) / ref)
        ref = float(plug_in_candidates(d, lam))
        worst = max(worst, abs(candidate_bound_log(d, lam) - ref) / ref)
    checks.append(worst <= 1e-10)
    report("6 theory arithmetic", all(checks), f"max_degree(0.01)={max_degree(0.01)}, worst rel error {worst:.1e}")


def test_criterion_7a_oracle():
    ratios, covered = [], True
    for prob in tiny_instances():
        rule = fit_np_rules(prob, SearchConfig(max_degree=2))
        covered &= bool(rule.evaluate(prob.positives).sum() >= prob.required)
        opt = brute_force_optimum(prob)
        ratios.append(true_objective(rule, prob) / opt if opt > 0 else 1.0)
    ok = covered and max(ratios) <= 1.2 + 1e-9
    report("7a solver oracle", ok, f"20 instances, worst ratio {max(ratios):.3f}, coverage met: {covered}")


def test_criterion_7b_dual_feasibility():
    rng = np.random.default_rng(11)
    worst = 0.0
    for form in ("DNF", "CNF"):
        for _ in range(3):
            pos = rng.integers(0, 2, (80, 6))
            pos[:, 0] |= pos[:, 1]
            prob = problem_from(pos, rng.integers(0, 2, (400, 6)), 0.9, 0.002, 0.002, form)
            cg = run_column_generation(prob, SearchConfig(beam_width=8))
            if cg.converged:
                worst = min(worst, float(cg.state.rc.min()))
            else:
                worst = -np.inf
    report("7b dual feasibility", worst >= -1e-6, f"min reduced cost at termination {worst:.1e}")


def test_criterion_7c_volume(mixed_bd):
    rng = np.random.default_rng(0)
    n = 100_000
    ref = sample_reference(mixed_bd, n, seed=1)
    worst = 0.0
    for _ in range(100):
        c = _random_conjunction(mixed_bd, rng)
        v = exact_clause_volume(c, mixed_bd.features)
        sd = np.sqrt(v * (1 - v) / n)
        z = abs(c.evaluate(ref).mean() - v) / sd if sd > 0 else 0.0
        worst = max(worst, z)
    report("7c clause volume vs Monte Carlo", worst <= 4, f"100 conjunctions, worst {worst:.2f} sigma")


def test_criterion_7d_de_morgan(mixed_bd):
    rng = np.random.default_rng(2)
    rows = mixed_bd.subset(rng.integers(0, len(mixed_bd), 1000))
    ok = True
    for _ in range(50):
        clauses = tuple(_random_conjunction(mixed_bd, rng) for _ in range(rng.integers(0, 4)))
        ok &= np.array_equal(RuleSet("CNF", clauses).evaluate(rows), ~RuleSet("DNF", clauses).evaluate(rows))
    report("7d De Morgan", bool(ok), "50 rule sets on 1000 rows")


@pytest.fixture(scope="module")
def three_group():
    rng = np.random.default_rng(7)
    n = 300
    X = pd.DataFrame({"x": rng.normal(size=n), "z": rng.normal(size=n)})
    logits = np.column_stack([X.x, -X.x, 0.5 * X.z])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    t = np.array([rng.choice(3, p=row) for row in p])
    d = grouped(X, t)
    return d, (fit_logistic(d), fit_knn(d, k=10))


def test_criterion_7e_eps_monotone(three_group):
    d, models = three_group
    eps = np.linspace(0.01, 0.33, 33)
    ok = all(np.all(overlap_labels(m, d, b).labels <= overlap_labels(m, d, a).labels)
             for m in models for a, b in zip(eps, eps[1:]))
    report("7e label monotonicity in eps", ok, "logistic and kNN, 33 eps values")


def test_criterion_7f_policy_reduction(three_group):
    d, models = three_group
    ok = True
    for m in models:
        for e in (0.05, 0.1, 0.2):
            std = overlap_labels(m, d, e).labels
            ok &= np.array_equal(policy_overlap_labels(m, d, Policy.full(m.group_set), e).labels, std)
    report("7f full policy equals standard labels", bool(ok), "bit-exact, logistic and kNN")


def test_criterion_7g_determinism():
    rng = np.random.default_rng(4)
    prob = problem_from(rng.integers(0, 2, (60, 5)), rng.integers(0, 2, (300, 5)), 0.9, 0.001, 0.001, "CNF")
    a, b = fit_np_rules(prob, SearchConfig()), fit_np_rules(prob, SearchConfig())
    data, _ = iris_overlap()
    cfg = OverRuleConfig(alpha=0.9, base="knn", knn_k=8, reference_count=2000)
    m1, m2 = fit(data, cfg), fit(data, cfg)
    ok = a == b and m1.support == m2.support and m1.overlap == m2.overlap
    report("7g determinism", ok, "repeat solver and pipeline fits give identical rules")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
