import itertools
import logging

import numpy as np
import pandas as pd
import pytest

from overrule.data import FeatureMeta, binarize, dataset_from_frame
from overrule.estimators import Policy
from overrule.pipeline import (
    IN_OVERLAP,
    OUT_OF_SUPPORT,
    SUPPORT_ONLY,
    DegenerateError,
    OverRuleConfig,
    cross_validate,
    evaluate,
    fit,
    fit_overlap,
    fit_support,
    load_model,
    predict,
    select_hyperparameters,
)
from overrule.rules import ALL_TRUE, Conjunction, Literal
from overrule.solver import SearchConfig


def test_evaluate_examples():
    t = np.array([1, 0, 1, 0], bool)
    m = evaluate(t, t)
    assert (m.balanced_accuracy, m.fpr, m.fnr) == (1.0, 0.0, 0.0)
    m = evaluate(~t, t)
    assert (m.balanced_accuracy, m.fpr, m.fnr) == (0.0, 1.0, 1.0)
    m = evaluate(np.ones(4, bool), t)
    assert (m.balanced_accuracy, m.fpr, m.fnr) == (0.5, 1.0, 0.0)
    m = evaluate(t, np.ones(4, bool))
    assert np.isnan(m.balanced_accuracy) and np.isnan(m.fpr)


def cube(d, reps):
    X = np.array(list(itertools.product([0, 1], repeat=d)) * reps)
    names = [f"b{j}" for j in range(d)]
    return dataset_from_frame(pd.DataFrame(X, columns=names), [FeatureMeta(n, "binary") for n in names])


@pytest.mark.parametrize("form", ["CNF", "DNF"])
def test_support_uniform_data_is_trivial(form):
    data = cube(3, 20)
    cfg = OverRuleConfig(alpha=0.95, support_form=form, support_lambda0=0.2, reference_count=4000)
    rule, bd = fit_support(data, cfg)
    assert rule.evaluate(bd).all()
    assert rule.clauses == (() if form == "CNF" else (ALL_TRUE,))


@pytest.mark.parametrize("form", ["CNF", "DNF"])
def test_support_half_space(form):
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(200, int), rng.integers(0, 2, 200)])
    data = dataset_from_frame(pd.DataFrame(X, columns=["a", "b"]), [FeatureMeta("a", "binary"), FeatureMeta("b", "binary")])
    cfg = OverRuleConfig(alpha=0.95, support_form=form, support_lambda0=0.01, support_lambda1=0.001, reference_count=5000)
    rule, bd = fit_support(data, cfg)
    want = Conjunction([Literal(0, "==", 1)]) if form == "DNF" else Conjunction([Literal(0, "==", 0)])
    assert rule.clauses == (want,)
    assert abs(rule.provenance["negative_coverage"] - 0.5) < 0.03


@pytest.fixture(scope="module")
def one_d():
    rng = np.random.default_rng(1)
    n = 600
    t = rng.integers(0, 2, n)
    x = rng.normal(2.0 * t, 1.0)
    data = dataset_from_frame(pd.DataFrame({"x": x, "t": t}), [FeatureMeta("x", "continuous")], "t")
    cfg = OverRuleConfig(alpha=0.98, beta=0.9, eps=0.1, overlap_lambda0=0.01, overlap_lambda1=0.001,
                         num_quantiles=20, reference_count=3000)
    return data, cfg, fit(data, cfg)


def test_one_d_overlap_interval(one_d):
    data, cfg, model = one_d
    # true propensity logit is 2x - 2, so both groups have >= 0.1 on [1 - log 9 / 2, 1 + log 9 / 2]
    half = np.log(9) / 2
    x = data.frame.x.to_numpy()
    inside = model.overlap.evaluate(model.binarize(data))
    assert inside[np.abs(x - 1.0) < 0.5].all()
    assert not inside[np.abs(x - 1.0) > half + 0.6].any()
    p = model.overlap.provenance
    assert p["covered_positives"] >= p["required_positives"]
    assert all(lit.name == "x" for c in model.overlap.clauses for lit in c.literals)


def test_predict_semantics(one_d):
    data, cfg, model = one_d
    lab = predict(model, data)
    bd = model.binarize(data)
    s = model.support.evaluate(bd)
    o = model.overlap.evaluate(bd)
    assert np.array_equal(lab == OUT_OF_SUPPORT, ~s)
    assert np.array_equal(lab == IN_OVERLAP, s & o)
    assert set(lab) <= {IN_OVERLAP, SUPPORT_ONLY, OUT_OF_SUPPORT}


def test_sanity_floor(one_d):
    _, _, model = one_d
    assert model.fit_metrics["train_vs_base"]["balanced_accuracy"] >= 0.5
    assert model.fit_metrics["sanity_floor_ok"]


def test_beta_one_covers_all_labeled():
    rng = np.random.default_rng(2)
    n = 300
    t = rng.integers(0, 2, n)
    x = rng.normal(1.5 * t, 1.0)
    data = dataset_from_frame(pd.DataFrame({"x": x, "t": t}), [FeatureMeta("x", "continuous")], "t")
    cfg = OverRuleConfig(alpha=0.95, beta=1.0, reference_count=2000)
    support, bd = fit_support(data, cfg)
    model = fit_overlap(data, support, cfg, bd=bd)
    from overrule.pipeline import base_labels

    in_s = support.evaluate(bd)
    lab = base_labels(model.base, data.subset(in_s), cfg).labels
    pred = predict(model, data.subset(in_s))
    assert np.all(pred[lab] == IN_OVERLAP)


def test_degenerate_all_overlap():
    rng = np.random.default_rng(3)
    data = dataset_from_frame(pd.DataFrame({"x": rng.normal(size=200), "t": rng.integers(0, 2, 200)}),
                              [FeatureMeta("x", "continuous")], "t")
    cfg = OverRuleConfig(alpha=0.95, eps=0.01, reference_count=1000)
    support, bd = fit_support(data, cfg)
    with pytest.raises(DegenerateError, match="eps"):
        fit_overlap(data, support, cfg, bd=bd)


def test_unknown_category_out_of_support(caplog):
    rng = np.random.default_rng(4)
    n = 300
    t = rng.integers(0, 2, n)
    df = pd.DataFrame({"x": rng.normal(2.5 * t, 1.0), "c": rng.choice(["a", "b"], n), "t": t})
    data = dataset_from_frame(df, [FeatureMeta("x", "continuous"), FeatureMeta("c", "categorical")], "t")
    model = fit(data, OverRuleConfig(alpha=0.95, reference_count=2000))
    rows = pd.DataFrame({"x": [1.2, 1.2], "c": ["a", "zzz"]})
    with caplog.at_level(logging.WARNING):
        lab = predict(model, rows)
    assert lab[1] == OUT_OF_SUPPORT
    assert "unseen categories" in caplog.text


def test_save_load_roundtrip(one_d, tmp_path):
    data, _, model = one_d
    model.save(tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.support == model.support and back.overlap == model.overlap
    assert np.array_equal(predict(back, data), predict(model, data))


def test_config_validation():
    with pytest.raises(ValueError):
        OverRuleConfig(alpha=0)
    with pytest.raises(ValueError):
        OverRuleConfig(eps=1.5)
    with pytest.raises(ValueError):
        OverRuleConfig.from_dict({"alpah": 0.9})
    c = OverRuleConfig.from_dict({"alpha": 0.9, "search": {"beam_width": 7}})
    assert c.search.beam_width == 7
    assert OverRuleConfig(base="knn", knn_k=8).label_eps == 0.125
    assert OverRuleConfig(base="knn", knn_k=8, knn_threshold="fixed", eps=0.2).label_eps == 0.2


def test_cross_validate_and_selection(one_d):
    data, cfg, _ = one_d
    cv = cross_validate(data, cfg, folds=3)
    assert len(cv) == 3
    assert (cv.balanced_accuracy >= 0.5).all()
    picked, table = select_hyperparameters(data, cfg, (0.01, 0.1), (0.001,), folds=3)
    assert len(table) == 2
    best = table.balanced_accuracy.max()
    row = table[(table.overlap_lambda0 == picked.overlap_lambda0)].iloc[0]
    assert row.balanced_accuracy >= best - 0.01
    assert row.literal_count == table[table.balanced_accuracy >= best - 0.01].literal_count.min()


def test_policy_pipeline():
    rng = np.random.default_rng(5)
    n = 800
    x = rng.uniform(0, 10, n)
    z = rng.uniform(0, 1, n)
    # four treatments; treatment 3 is rare for x < 5
    logits = np.column_stack([np.zeros(n), 0.2 * x, np.ones(n) * 0.5, np.where(x < 5, -4.0, 0.5)])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    t = np.array([rng.choice(4, p=row) for row in p])
    data = dataset_from_frame(pd.DataFrame({"x": x, "z": z, "t": t}),
                              [FeatureMeta("x", "continuous"), FeatureMeta("z", "continuous")], "t")
    # guideline: prescribe treatment 3 when z > 0.5, otherwise treatment 0
    policy = Policy.from_column(["3" if v > 0.5 else "0" for v in z])
    cfg = OverRuleConfig(alpha=0.95, beta=0.9, eps=0.1, reference_count=3000)
    model = fit(data, cfg, policy)
    pos = model.fit_metrics["n_base_overlap"]
    assert 0 < pos < model.fit_metrics["n_support"]
    assert model.overlap.clauses
    # rows needing treatment 3 where it is rare should mostly fall outside the overlap rules
    lab = predict(model, data)
    bad = (z > 0.5) & (x < 4)
    assert (lab[bad] != IN_OVERLAP).mean() > 0.8
