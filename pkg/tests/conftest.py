import sys

import numpy as np
import pytest

from surveycast.ingest import ColumnMeta, Dataset, classify_dataset


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    # acceptance tests print one visible line per criterion
    if rep.when == "call" and item.module.__name__ == "test_acceptance":
        status = "PASS" if rep.passed else "FAIL"
        sys.stderr.write(f"\nACCEPTANCE {item.name}: {status}\n")
        sys.stderr.flush()


def random_raw_dataset(rng: np.random.Generator, n_rows: int = 40, n_cols: int = 12) -> Dataset:
    """Small random survey-shaped dataset with mixed kinds and missing cells."""
    prefixes = ["m", "f", "k", "p", "hv", "t", "cm"]
    values = np.empty((n_rows, n_cols))
    metas = []
    for j in range(n_cols):
        code = f"{rng.choice(prefixes)}{rng.integers(1, 6)}q{j}"
        flavor = rng.integers(0, 4)
        if flavor == 0:  # continuous
            col = np.round(rng.normal(10, 3, n_rows), 6)
            question = ""
        elif flavor == 1:  # ordinal
            col = rng.integers(0, rng.integers(3, 9), n_rows).astype(float)
            question = "How many times did this happen?"
        elif flavor == 2:  # binary
            col = rng.integers(0, 2, n_rows).astype(float)
            question = ""
        else:  # categorical
            col = rng.integers(1, rng.integers(3, 7), n_rows).astype(float)
            question = "Which one best describes it?"
        # inject missing: blanks plus -1/-2/-9 codes
        miss = rng.random(n_rows) < rng.uniform(0.0, 0.3)
        kinds = rng.choice([np.nan, -1.0, -2.0, -9.0], size=n_rows)
        col = np.where(miss, kinds, col)
        values[:, j] = col
        codes = {int(v) for v in col[np.isfinite(col)] if v < 0 and v == int(v)}
        metas.append(ColumnMeta(code=code, question=question, missing_codes=frozenset(codes)))
    ds = Dataset([f"r{i}" for i in range(n_rows)], metas, values)
    return classify_dataset(ds)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
