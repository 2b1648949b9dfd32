"""Jobs benchmark: NSW experimental sample plus PSID controls.

Groups are NSW treated versus everyone else (NSW controls and PSID). The
experimental indicator E (row came from the NSW trial) is the reference
overlap label. Needs network access to the public NBER files.

    python scripts/jobs.py --output results/jobs
"""
import argparse
import io
import urllib.request
from pathlib import Path

import pandas as pd

from overrule.data import FeatureMeta, dataset_from_frame
from overrule.pipeline import IN_OVERLAP, OverRuleConfig, cross_validate, evaluate, fit, predict, select_hyperparameters

BASE = "https://users.nber.org/~rdehejia/data/"
FILES = {"nsw_treated": "nswre74_treated.txt", "nsw_control": "nswre74_control.txt", "psid": "psid_controls.txt"}
COLUMNS = ["treat", "age", "educ", "black", "hisp", "married", "nodegree", "re74", "re75", "re78"]
FEATURES = [
    FeatureMeta("age", "continuous"), FeatureMeta("educ", "continuous"),
    FeatureMeta("black", "binary"), FeatureMeta("hisp", "binary"),
    FeatureMeta("married", "binary"), FeatureMeta("nodegree", "binary"),
    FeatureMeta("re74", "continuous"), FeatureMeta("re75", "continuous"),
]


def fetch(name: str) -> pd.DataFrame:
    with urllib.request.urlopen(BASE + FILES[name], timeout=30) as r:
        text = r.read().decode()
    return pd.read_csv(io.StringIO(text), sep=r"\s+", header=None, names=COLUMNS)


def load_jobs() -> pd.DataFrame:
    parts = []
    for name in FILES:
        df = fetch(name)
        df["E"] = int(name != "psid")
        parts.append(df)
    return pd.concat(parts, ignore_index=True)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--output", default="results/jobs")
    ap.add_argument("--folds", type=int, default=5)
    args = ap.parse_args()
    out = Path(args.output)

    try:
        df = load_jobs()
    except OSError as e:
        raise SystemExit(f"cannot fetch the jobs files from {BASE}: {e}")
    out.mkdir(parents=True, exist_ok=True)
    data = dataset_from_frame(df[[f.name for f in FEATURES] + ["treat"]], [f for f in FEATURES], "treat")
    truth = df["E"].to_numpy() == 1
    base = OverRuleConfig(alpha=0.98, beta=0.9, eps=0.1, base="logistic")
    cfg, table = select_hyperparameters(data, base, (1e-3, 1e-2, 1e-1), (1e-4, 1e-3, 1e-2), folds=args.folds)
    table.to_csv(out / "selection.csv", index=False)
    cv = cross_validate(data, cfg, folds=args.folds, truth=truth)
    cv.to_csv(out / "cv.csv", index=False)
    model = fit(data, cfg)
    m = evaluate(predict(model, data) == IN_OVERLAP, truth, (model.support, model.overlap))
    print(model.rules_text(data))
    print(f"\nCV balanced accuracy vs E: {cv.balanced_accuracy.mean():.3f} +/- {cv.balanced_accuracy.std():.3f}")
    print(f"full fit: balanced accuracy {m.balanced_accuracy:.3f}, literals {m.literal_count}")
