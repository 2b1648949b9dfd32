"""Interpretable Boolean-rule descriptions of support and overlap regions."""
from .data import (
    BinarizationConfig,
    BinarizedDataset,
    Dataset,
    DataError,
    FeatureMeta,
    Schema,
    binarize,
    load_csv,
    sample_reference,
)
from .estimators import Policy, PropensityModel, fit_cbb, fit_knn, fit_logistic, overlap_labels, policy_overlap_labels
from .pipeline import OverRuleConfig, OverRuleModel, evaluate, fit, fit_overlap, fit_support, load_model, predict
from .rules import ALL_TRUE, Conjunction, Literal, RuleSet, complexity, exact_clause_volume
from .solver import NPProblem, SearchConfig, fit_np_rules
from .theory import epsilon_bound, max_degree, theory_report

__version__ = "0.1.0"
