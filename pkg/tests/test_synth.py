import json

import numpy as np
import pytest

from surveycast.ingest import (
    BINARY_OUTCOMES,
    Kind,
    classify_dataset,
    load_dataset,
    load_outcomes,
)
from surveycast.preprocess import add_composite_homelessness, preprocess_pipeline
from surveycast.synth import DEFAULT_COMPOSITE_MAPPING, SynthConfig, SynthResult, generate, write_synth

SMALL = dict(n_rows=300, n_continuous=25, n_ordinal=10, n_categorical=10, n_planted=4)


class TestGenerate:
    def test_deterministic_given_seed(self):
        a = generate(SynthConfig(**SMALL, seed=5))
        b = generate(SynthConfig(**SMALL, seed=5))
        assert a.data.equals(b.data)
        assert a.outcomes.equals(b.outcomes)
        assert a.splits == b.splits
        c = generate(SynthConfig(**SMALL, seed=6))
        assert not a.data.equals(c.data)

    def test_splits_disjoint_exhaustive(self):
        res = generate(SynthConfig(**SMALL, seed=1))
        ids = [set(v) for v in res.splits.values()]
        assert sum(len(s) for s in ids) == 300
        assert len(ids[0] | ids[1] | ids[2]) == 300

    def test_manifest_features_are_emitted_columns(self):
        res = generate(SynthConfig(**SMALL, seed=2))
        cols = set(res.data.columns)
        for entry in res.manifest["outcomes"].values():
            assert set(entry["planted"]) <= cols

    def test_population_r2_calibration(self):
        # check-sample: the true predictor must explain ~target_r2 of variance
        cfg = SynthConfig(n_rows=100_000, n_continuous=12, n_ordinal=0, n_categorical=0,
                          n_planted=5, target_r2=0.4, blank_rate=0, refused_rate=0,
                          dont_know_rate=0, other_code_rate=0,
                          include_composite_ingredients=False, seed=3)
        res = generate(cfg)
        entry = res.manifest["outcomes"]["grit"]
        cols = {c: res.data[c].to_numpy(dtype=float) for c in entry["planted"]}
        signal = sum(b * cols[c] for b, c in zip(entry["coefficients"], entry["planted"]))
        pair = entry["interaction"]
        signal = signal + pair["gamma"] * cols[pair["codes"][0]] * cols[pair["codes"][1]]
        y = res.outcomes["grit"].to_numpy(dtype=float)
        resid = y - signal
        r2 = 1 - resid.var() / y.var()
        assert 0.37 <= r2 <= 0.43

    def test_noise_only_config(self):
        cfg = SynthConfig(**{**SMALL, "n_planted": 0}, seed=4)
        res = generate(cfg)
        for entry in res.manifest["outcomes"].values():
            assert entry["planted"] == []

    def test_binary_base_rate(self):
        cfg = SynthConfig(n_rows=20_000, n_continuous=10, n_ordinal=0, n_categorical=0,
                          n_planted=3, binary_base_rate=0.15,
                          include_composite_ingredients=False, seed=7)
        res = generate(cfg)
        for name in ("eviction", "layoff", "job_training"):
            rate = res.outcomes[name.replace("material_hardship", "materialHardship")
                                .replace("job_training", "jobTraining")].mean()
            assert abs(rate - 0.15) < 0.02

    def test_missing_rates_near_configured(self):
        cfg = SynthConfig(n_rows=12_000, n_continuous=10, n_ordinal=0, n_categorical=0,
                          n_planted=2, blank_rate=0.05, refused_rate=0.03, dont_know_rate=0.02,
                          include_composite_ingredients=False, seed=8)
        res = generate(cfg)
        col = res.data[res.manifest["outcomes"]["gpa"]["planted"][0]].to_numpy(dtype=float)
        assert abs(np.isnan(col).mean() - 0.05) < 0.01
        assert abs((col == -1.0).mean() - 0.03) < 0.01
        assert abs((col == -2.0).mean() - 0.02) < 0.01

    def test_no_accidental_negative_integer_values(self):
        res = generate(SynthConfig(**SMALL, seed=9))
        for code in res.data.columns[1:]:
            col = res.data[code].to_numpy(dtype=float)
            finite = col[np.isfinite(col)]
            neg_int = finite[(finite < 0) & (finite == np.floor(finite))]
            assert set(neg_int.tolist()) <= {-1.0, -2.0, -9.0}

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(n_rows=5)
        with pytest.raises(ValueError):
            SynthConfig(target_r2=1.5)
        with pytest.raises(ValueError):
            SynthConfig(split_fractions=(0.5, 0.5, 0.5))

    def test_config_round_trip(self):
        cfg = SynthConfig(**SMALL, seed=11)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    res = generate(SynthConfig(**SMALL, seed=12))
    paths = write_synth(res, out)
    return res, paths


class TestWrittenArtifacts:
    def test_ingest_round_trip(self, written):
        res, paths = written
        ds = classify_dataset(load_dataset(paths["data"], paths["metadata"]))
        assert ds.n_rows == 300
        assert ds.n_cols == res.data.shape[1] - 1
        kinds = {c.code: c.kind for c in ds.columns}
        # classification recovers the generator's intent for ingredient columns
        assert kinds["m1welf"] is Kind.BINARY
        assert kinds["m1numkids"] is Kind.ORDINAL
        assert kinds["cm1race"] is Kind.CATEGORICAL

    def test_outcomes_files(self, written):
        res, paths = written
        ds = classify_dataset(load_dataset(paths["data"], paths["metadata"]))
        public = load_outcomes(paths["outcomes"], ds.row_ids)
        truth = load_outcomes(paths["truth_outcomes"], ds.row_ids)
        np.testing.assert_array_equal(public.observed, res.observed)
        assert truth.observed.all()
        name = "eviction"
        np.testing.assert_array_equal(
            public.values[name][public.observed], truth.values[name][public.observed])

    def test_composite_mapping_applies_to_encoded(self, written):
        res, paths = written
        ds = classify_dataset(load_dataset(paths["data"], paths["metadata"]))
        mapping = json.loads(paths["composite_mapping"].read_text())
        enc, report = preprocess_pipeline(ds, train_mask=res.observed, composite_mapping=mapping)
        assert report["composite_columns"] == 2
        assert "composite_positive" in enc.names()

    def test_same_seed_byte_identical_files(self, tmp_path):
        a = write_synth(generate(SynthConfig(**SMALL, seed=13)), tmp_path / "a")
        b = write_synth(generate(SynthConfig(**SMALL, seed=13)), tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()
