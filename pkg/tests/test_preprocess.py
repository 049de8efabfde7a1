import numpy as np
import pytest

from surveycast.ingest import ColumnMeta, Dataset, Kind, ORDERED_KINDS
from surveycast.preprocess import (
    add_composite_homelessness,
    encode_like,
    filter_high_missing,
    filter_low_variance,
    impute_mean_with_flags,
    inverse_transform_outcome_square,
    one_hot_encode,
    preprocess_pipeline,
    transform_features,
    transform_outcome_square,
)
from conftest import random_raw_dataset


def make_ds(columns):
    """columns: list of (code, kind, values, missing_codes)."""
    metas, cols = [], []
    for code, kind, vals, codes in columns:
        metas.append(ColumnMeta(code=code, kind=kind, missing_codes=frozenset(codes)))
        cols.append(np.asarray(vals, dtype=float))
    n = len(cols[0])
    return Dataset([f"r{i}" for i in range(n)], metas, np.column_stack(cols))


class TestFilters:
    def test_constant_column_dropped(self):
        ds = make_ds([("a", Kind.ORDINAL, [3, 3, 3], []), ("b", Kind.BINARY, [0, 1, 0], [])])
        out = filter_low_variance(ds)
        assert out.codes() == ["b"]

    def test_variance_boundary(self):
        # var([0,1,0,1]) = 0.25 >= 0.05 -> kept
        ds = make_ds([("a", Kind.BINARY, [0, 1, 0, 1], [])])
        assert filter_low_variance(ds).n_cols == 1

    def test_variance_uses_observed_cells_only(self):
        ds = make_ds([("a", Kind.ORDINAL, [5, 5, -1, 9], [-1])])
        # observed [5, 5, 9]: var > 0.05 -> kept even though -1 inflates raw variance
        assert filter_low_variance(ds).n_cols == 1

    def test_all_missing_column_dropped_by_variance_filter(self):
        ds = make_ds([("a", Kind.ORDINAL, [np.nan, np.nan], []), ("b", Kind.ORDINAL, [0, 9], [])])
        assert filter_low_variance(ds).codes() == ["b"]

    def test_missingness_strict_inequality(self):
        nine_missing = [np.nan] * 9 + [1.0]
        eight_missing = [np.nan] * 8 + [1.0, 2.0]
        ds = make_ds([("drop", Kind.ORDINAL, nine_missing, []), ("keep", Kind.ORDINAL, eight_missing, [])])
        out = filter_high_missing(ds, 0.8)
        assert out.codes() == ["keep"]

    def test_all_missing_dropped(self):
        ds = make_ds([("a", Kind.ORDINAL, [np.nan] * 4, [])])
        assert filter_high_missing(ds).n_cols == 0

    def test_idempotence(self, rng):
        for _ in range(20):
            ds = random_raw_dataset(rng, n_rows=30, n_cols=8)
            once = filter_low_variance(ds)
            twice = filter_low_variance(once)
            assert once.codes() == twice.codes()
            once_m = filter_high_missing(ds)
            twice_m = filter_high_missing(once_m)
            assert once_m.codes() == twice_m.codes()


class TestImpute:
    def test_blank_mean_imputation_with_allzero_flags(self):
        ds = make_ds([("m1a", Kind.ORDINAL, [1, 2, np.nan], [])])
        out = impute_mean_with_flags(ds)
        np.testing.assert_allclose(out.values[:, 0], [1, 2, 1.5])
        assert out.codes() == ["m1a", "m1a__refused", "m1a__dontknow"]
        np.testing.assert_array_equal(out.values[:, 1], [0, 0, 0])
        np.testing.assert_array_equal(out.values[:, 2], [0, 0, 0])

    def test_refused_code_flags(self):
        ds = make_ds([("m1a", Kind.ORDINAL, [1, 2, -1], [-1])])
        out = impute_mean_with_flags(ds)
        np.testing.assert_allclose(out.values[:, 0], [1, 2, 1.5])
        np.testing.assert_array_equal(out.values[:, 1], [0, 0, 1])  # refused
        np.testing.assert_array_equal(out.values[:, 2], [0, 0, 0])

    def test_dont_know_code_flags(self):
        ds = make_ds([("m1a", Kind.ORDINAL, [-2, -2, 4], [-2])])
        out = impute_mean_with_flags(ds)
        np.testing.assert_allclose(out.values[:, 0], [4, 4, 4])
        np.testing.assert_array_equal(out.values[:, 2], [1, 1, 0])  # don't know

    def test_all_missing_imputes_zero(self):
        ds = make_ds([("m1a", Kind.ORDINAL, [np.nan, np.nan], [])])
        out = impute_mean_with_flags(ds)
        np.testing.assert_array_equal(out.values[:, 0], [0, 0])

    def test_train_only_means(self):
        ds = make_ds([("m1a", Kind.ORDINAL, [1, 3, np.nan, 100], [])])
        out = impute_mean_with_flags(ds, train_mask=np.array([True, True, True, False]))
        np.testing.assert_allclose(out.values[2, 0], 2.0)  # mean of train rows {1,3}

    def test_categorical_untouched(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [1, np.nan, 2], [])])
        out = impute_mean_with_flags(ds)
        assert out.n_cols == 1
        assert np.isnan(out.values[1, 0])


class TestOneHot:
    def test_identity_pattern_with_missing_code(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [1, 2, -9], [-9])])
        enc = one_hot_encode(ds)
        assert enc.names() == ["m1a=-9", "m1a=1", "m1a=2"]
        np.testing.assert_array_equal(
            enc.values, np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
        )
        assert np.all(enc.values.sum(axis=1) == 1.0)

    def test_two_level_column(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [5, 5, 5, 7], [])])
        enc = one_hot_encode(ds)
        np.testing.assert_array_equal(enc.values[:, 0], [1, 1, 1, 0])
        np.testing.assert_array_equal(enc.values[:, 1], [0, 0, 0, 1])

    def test_blank_gets_na_category(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [1, np.nan, 2], [])])
        enc = one_hot_encode(ds)
        assert "m1a=NA" in enc.names()
        assert np.all(enc.values.sum(axis=1) == 1.0)

    def test_single_level_all_ones(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [4, 4, 4], [])])
        enc = one_hot_encode(ds)
        np.testing.assert_array_equal(enc.values[:, 0], [1, 1, 1])

    def test_unimputed_ordered_column_rejected(self):
        ds = make_ds([("m1a", Kind.ORDINAL, [1, np.nan], [])])
        with pytest.raises(ValueError, match="impute"):
            one_hot_encode(ds)

    def test_provenance_and_groups(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [1, 2, 1], []), ("m1b", Kind.ORDINAL, [1, 2, 3], [])])
        enc = one_hot_encode(impute_mean_with_flags(ds))
        groups = enc.onehot_groups()
        assert set(groups) == {"m1a"} and len(groups["m1a"]) == 2
        roles = {c.name: c.role for c in enc.columns}
        assert roles["m1b"] == "value"
        assert roles["m1b__refused"] == "flag_refused"
        assert roles["m1b__dontknow"] == "flag_dont_know"
        sources = {c.name: c.source for c in enc.columns}
        assert sources["m1b__refused"] == "m1b"
        assert sources["m1a=1"] == "m1a"

    def test_encode_like_unseen_value(self):
        ds = make_ds([("m1a", Kind.CATEGORICAL, [1, 2, 1], [])])
        enc = one_hot_encode(ds)
        new = make_ds([("m1a", Kind.CATEGORICAL, [2, 7], [])])
        out = encode_like(new, enc)
        np.testing.assert_array_equal(out.values, [[0, 1], [0, 0]])
        assert out.unseen == [("r1", "m1a", 7.0)]


class TestComposites:
    def mapping(self):
        return {
            "positive": [
                {"name": "welfare", "codes": ["m1w", "m5w"]},
                {"name": "kids", "codes": ["m1k"], "kind": "capped", "cap": 3},
                {"name": "race", "codes": [["cm1race=2", "cm1race=3"]], "kind": "indicator", "scale": 3},
            ],
            "negative": [{"name": "help", "codes": ["m1h"]}],
        }

    def encoded(self, w1, w5, kids, race_val, help_):
        ds = make_ds([
            ("m1w", Kind.BINARY, w1, []),
            ("m5w", Kind.BINARY, w5, []),
            ("m1k", Kind.ORDINAL, kids, []),
            ("cm1race", Kind.CATEGORICAL, race_val, []),
            ("m1h", Kind.BINARY, help_, []),
        ])
        return one_hot_encode(impute_mean_with_flags(ds))

    def test_all_zero_ingredients(self):
        enc = self.encoded([0, 0], [0, 0], [0, 0], [1, 1], [0, 0])
        out = add_composite_homelessness(enc, {
            "positive": [{"name": "welfare", "codes": ["m1w", "m5w"]}],
            "negative": [{"name": "help", "codes": ["m1h"]}],
        })
        np.testing.assert_array_equal(out.values[:, -2:], 0.0)

    def test_cap_and_indicator(self):
        enc = self.encoded([0, 0, 0], [0, 0, 0], [5, 1, 0], [2, 1, 3], [1, 0, 0])
        out = add_composite_homelessness(enc, self.mapping())
        pos = out.values[:, -2]
        neg = out.values[:, -1]
        # row 0: kids capped at 3, race=2 -> +3; row 1: kids 1, race=1 -> 0;
        # row 2: race=3 -> +3
        np.testing.assert_allclose(pos, [6.0, 1.0, 3.0])
        np.testing.assert_allclose(neg, [1.0, 0.0, 0.0])

    def test_wave5_triple_weight(self):
        enc = self.encoded([1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0], [1, 1, 2, 3], [0, 0, 0, 0])
        out = add_composite_homelessness(enc, self.mapping())
        # welfare aggregate = (1*a + 3*b) / 4; rows 0/1 differ only in wave
        np.testing.assert_allclose(out.values[0, -2], (1 * 1 + 3 * 0) / 4)
        np.testing.assert_allclose(out.values[1, -2], (1 * 0 + 3 * 1) / 4)

    def test_absent_code_errors(self):
        enc = self.encoded([0], [0], [0], [1], [0])
        with pytest.raises(ValueError, match="nope"):
            add_composite_homelessness(enc, {"positive": [{"name": "x", "codes": ["nope"]}]})

    def test_missing_ingredient_renormalizes_on_raw_dataset(self):
        ds = make_ds([("m1w", Kind.BINARY, [np.nan, 1.0], []), ("m5w", Kind.BINARY, [1.0, 0.0], [])])
        out = add_composite_homelessness(ds, {"positive": [{"name": "w", "codes": ["m1w", "m5w"]}]})
        # row 0: only wave-5 observed -> value 1; row 1: (1*1 + 3*0)/4
        np.testing.assert_allclose(out.values[:, -2], [1.0, 0.25])


class TestTransforms:
    def test_square_values(self):
        ds = make_ds([("m1a", Kind.CONTINUOUS, [1, 2, 3], [])])
        enc = transform_features(one_hot_encode(ds), transforms=("square",))
        raw_sq = np.array([1.0, 4.0, 9.0])
        z = (raw_sq - raw_sq.mean()) / raw_sq.std()
        np.testing.assert_allclose(enc.values[:, -1], z)

    def test_adds_three_columns_per_eligible(self):
        ds = make_ds([
            ("m1a", Kind.CONTINUOUS, [1, 2, 3, 4], []),
            ("m1b", Kind.ORDINAL, [0, 1, 2, 3], []),
            ("m1c", Kind.BINARY, [0, 1, 0, 1], []),
        ])
        base = one_hot_encode(ds)
        enc = transform_features(base)
        assert enc.n_cols == base.n_cols + 3 * 2  # binary ineligible

    def test_normalized_mean_zero_sd_one(self, rng):
        ds = make_ds([("m1a", Kind.CONTINUOUS, rng.normal(5, 2, 50), [])])
        enc = transform_features(one_hot_encode(ds))
        for j in range(1, enc.n_cols):
            assert abs(enc.values[:, j].mean()) < 1e-12
            assert abs(enc.values[:, j].std() - 1) < 1e-12

    def test_nonpositive_shift(self):
        ds = make_ds([("m1a", Kind.CONTINUOUS, [-5, 0, 5], [])])
        enc = transform_features(one_hot_encode(ds), transforms=("log",))
        shifted = np.array([-5.0, 0.0, 5.0]) - (-5.0) + 1.0
        expected = np.log(shifted)
        z = (expected - expected.mean()) / expected.std()
        np.testing.assert_allclose(enc.values[:, -1], z)

    def test_train_mask_normalization(self):
        ds = make_ds([("m1a", Kind.CONTINUOUS, [1, 2, 3, 50], [])])
        train = np.array([True, True, True, False])
        enc = transform_features(one_hot_encode(ds), transforms=("square",), train_mask=train)
        assert abs(enc.values[train, -1].mean()) < 1e-12

    def test_outcome_square_round_trip(self):
        y = np.array([2.0, 3.5])
        fwd = transform_outcome_square(y)
        np.testing.assert_allclose(fwd, [4.0, 12.25])
        np.testing.assert_allclose(inverse_transform_outcome_square(fwd), y, atol=1e-12)

    def test_inverse_clamps_negative(self):
        assert inverse_transform_outcome_square(np.array([-0.3]))[0] == 0.0
        assert inverse_transform_outcome_square(np.array([4.0]))[0] == 2.0


class TestFullChain:
    def test_property_chain_invariants(self, rng):
        for _ in range(30):
            ds = random_raw_dataset(rng, n_rows=50, n_cols=10)
            enc, report = preprocess_pipeline(ds)
            # no missing markers anywhere
            assert np.all(np.isfinite(enc.values))
            # one-hot group row sums exactly 1
            for source, idx in enc.onehot_groups().items():
                np.testing.assert_array_equal(enc.values[:, idx].sum(axis=1), 1.0)
            # column-count identity: every kept cont/ord/binary column contributes
            # itself plus two flags; one-hot sizes add up; composites off here
            kept = report["kept_continuous_ordinal_binary"]
            assert report["final_columns"] == 3 * kept + report["onehot_columns"]

    def test_report_counts(self, rng):
        ds = random_raw_dataset(rng, n_rows=60, n_cols=15)
        enc, report = preprocess_pipeline(ds)
        assert report["input_columns"] == 15
        assert report["after_filters"] <= 15
        assert report["final_columns"] == enc.n_cols
