import json

import numpy as np
import pandas as pd
import pytest

from overrule import datasets
from overrule.cli import EXIT_CONFIG, EXIT_DATA, main

IRIS = ["--data", str(datasets.path("iris_versicolor_virginica.csv")),
        "--schema", str(datasets.path("iris_schema.json"))]
FAST = ["--base", "knn", "--knn-k", "8", "--alpha", "0.9", "--eps", "0.1", "--reference-count", "1500"]


@pytest.fixture(scope="module")
def iris_fit(tmp_path_factory):
    out = tmp_path_factory.mktemp("iris")
    assert main(["fit", *IRIS, *FAST, "--output", str(out)]) == 0
    return out


def test_fit_outputs(iris_fit):
    for name in ("model.json", "rules.txt", "metrics.csv", "theory.json"):
        assert (iris_fit / name).exists()
    text = (iris_fit / "rules.txt").read_text()
    assert "%" in text
    theory = json.loads((iris_fit / "theory.json").read_text())
    assert {"support", "overlap"} <= set(theory)
    metrics = pd.read_csv(iris_fit / "metrics.csv")
    assert metrics.n_rows[0] == 100


def test_predict_and_evaluate(iris_fit, tmp_path):
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(iris_fit / "model.json"),
                 "--data", str(datasets.path("iris_setosa.csv")), "--output", str(pred)]) == 0
    regions = pd.read_csv(pred).region
    assert len(regions) == 50 and (regions != "in_overlap").mean() >= 0.9
    ev = tmp_path / "ev.csv"
    assert main(["evaluate", "--model", str(iris_fit / "model.json"),
                 "--data", str(datasets.path("iris_versicolor_virginica.csv")), "--output", str(ev)]) == 0
    m = pd.read_csv(ev)
    assert m.against[0] == "base_estimator" and m.balanced_accuracy[0] >= 0.5


def test_evaluate_truth_column(iris_fit, tmp_path):
    df = pd.read_csv(datasets.path("iris_versicolor_virginica.csv"))
    df["truth"] = (df.petal_length > 4.7).astype(int)
    src = tmp_path / "rows.csv"
    df.to_csv(src, index=False)
    out = tmp_path / "ev.csv"
    assert main(["evaluate", "--model", str(iris_fit / "model.json"), "--data", str(src),
                 "--truth-column", "truth", "--output", str(out)]) == 0
    assert pd.read_csv(out).against[0] == "truth"
    assert main(["evaluate", "--model", str(iris_fit / "model.json"), "--data", str(src),
                 "--truth-column", "nope", "--output", str(out)]) == EXIT_DATA


def test_missing_schema_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["fit", "--data", str(datasets.path("iris.csv")), "--schema", str(missing), "--output", str(tmp_path)])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("overrule: error") and str(missing) in err


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.5, "base": "knn", "knn_k": 8, "reference_count": 1000,
                               "search": {"max_cg_iterations": 5}}))
    out = tmp_path / "o"
    assert main(["fit", *IRIS, "--config", str(cfg), "--alpha", "0.9", "--output", str(out)]) == 0
    conf = json.loads((out / "model.json").read_text())["config"]
    assert conf["alpha"] == 0.9 and conf["base"] == "knn" and conf["search"]["max_cg_iterations"] == 5


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpah": 0.9}))
    assert main(["fit", *IRIS, "--config", str(cfg), "--output", str(tmp_path)]) == EXIT_CONFIG
    assert "error CONFIG" in capsys.readouterr().err
    assert main(["fit", *IRIS, "--alpha", "2", "--output", str(tmp_path)]) == EXIT_CONFIG


def test_synth_bench_single_cell(tmp_path):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"synth": {"n_samples": 1500}}))
    out = tmp_path / "bench"
    code = main(["synth-bench", "--config", str(cfg), "--alphas", "0.98", "--lambda0s", "0.0001",
                 "--lambda1s", "0.0001", "--beam-widths", "15", "--seeds", "0",
                 "--reference-count", "1000", "--max-cg-iterations", "3", "--output", str(out)])
    assert code == 0
    assert len(pd.read_csv(out / "bench.csv")) == 1
    assert len(pd.read_csv(out / "summary.csv")) == 1


def test_policy_column_fit(tmp_path):
    rng = np.random.default_rng(0)
    n = 400
    x = rng.uniform(0, 10, n)
    t = (rng.random(n) < 1 / (1 + np.exp(-(x - 5)))).astype(int)
    pol = np.where(x > 5, "1", "0|1")
    pd.DataFrame({"x": x, "t": t, "guideline": pol}).to_csv(tmp_path / "d.csv", index=False)
    schema = {"features": [{"name": "x", "kind": "continuous"}], "group_column": "t",
              "policy_column": "guideline"}
    (tmp_path / "s.json").write_text(json.dumps(schema))
    out = tmp_path / "o"
    code = main(["fit", "--data", str(tmp_path / "d.csv"), "--schema", str(tmp_path / "s.json"),
                 "--alpha", "0.95", "--reference-count", "1500", "--output", str(out)])
    assert code == 0
    assert json.loads((out / "model.json").read_text())["overlap"]["clauses"]
