"""Fit on versicolor/virginica and check where the setosa rows land."""
import pandas as pd

from overrule.datasets import iris_overlap
from overrule.pipeline import IN_OVERLAP, OverRuleConfig, fit, predict

if __name__ == "__main__":
    data, setosa = iris_overlap()
    cfg = OverRuleConfig(alpha=0.9, eps=0.1, base="knn", knn_k=8)
    model = fit(data, cfg)
    print(model.rules_text(data))
    regions = pd.Series(predict(model, setosa))
    print("\nsetosa regions:", regions.value_counts().to_dict())
    print(f"setosa outside overlap: {(regions != IN_OVERLAP).mean():.0%}")
    p = model.overlap.provenance
    print(f"base overlap points covered: {p['covered_positives']} of {model.fit_metrics['n_base_overlap']}")
