import numpy as np
import pandas as pd
import pytest
from hypothesis import settings

from overrule.data import FeatureMeta, binarize, dataset_from_frame

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def binary_dataset(matrix, names=None, groups=None):
    matrix = np.asarray(matrix, dtype=int)
    names = names or [f"b{j}" for j in range(matrix.shape[1])]
    df = pd.DataFrame(matrix, columns=names)
    gcol = None
    if groups is not None:
        df["g"] = list(groups)
        gcol = "g"
    return dataset_from_frame(df, [FeatureMeta(n, "binary") for n in names], gcol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mixed_frame(rng):
    n = 400
    return pd.DataFrame({
        "age": rng.uniform(0, 100, n),
        "sex": rng.choice(["F", "M"], n),
        "color": rng.choice(["a", "b", "c", "d"], n),
        "flag": rng.integers(0, 2, n),
    })


@pytest.fixture
def mixed_features():
    return [
        FeatureMeta("age", "continuous"),
        FeatureMeta("sex", "categorical"),
        FeatureMeta("color", "categorical"),
        FeatureMeta("flag", "binary"),
    ]


@pytest.fixture
def mixed_bd(mixed_frame, mixed_features):
    return binarize(dataset_from_frame(mixed_frame, mixed_features))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
