"""Synthetic survey-shaped data with planted signal.

Generates the same CSV formats the ingest stage consumes: variable codes
with respondent prefixes and wave digits, negative missing codes, mixed
column kinds, six outcomes with a train/leaderboard/holdout partition,
plus a ground-truth manifest naming the planted features.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import (
    BINARY_OUTCOMES,
    CONTINUOUS_OUTCOMES,
    ID_COLUMN,
    OUTCOME_CSV_COLUMNS,
    OUTCOME_NAMES,
)

log = logging.getLogger(__name__)

# composite-ingredient columns emitted with fixed codes; the default
# mapping below references them (race via its one-hot indicators)
INGREDIENT_COLUMNS = (
    ("m1welf", "binary", "Mother receives welfare?"),
    ("m5welf", "binary", "Mother receives welfare?"),
    ("m1pubhous", "binary", "Mother resides in public housing?"),
    ("m5pubhous", "binary", "Mother resides in public housing?"),
    ("m1livedad", "binary", "Mother lives with father?"),
    ("m5livedad", "binary", "Mother lives with father?"),
    ("cm1race", "race", "Mother's race"),
    ("m1numkids", "ordinal", "How many children live in the household?"),
    ("m1helpavail", "binary", "Family or friends willing to help?"),
    ("m5helpavail", "binary", "Family or friends willing to help?"),
    ("m1nbhood5yr", "binary", "Lived in neighborhood more than 5 years?"),
    ("m1moves1styr", "ordinal", "Number of moves in first year after birth"),
)

DEFAULT_COMPOSITE_MAPPING = {
    "positive": [
        {"name": "welfare", "codes": ["m1welf", "m5welf"]},
        {"name": "public_housing", "codes": ["m1pubhous", "m5pubhous"]},
        {"name": "lives_with_father", "codes": ["m1livedad", "m5livedad"]},
        {"name": "race_black_or_hispanic", "codes": [["cm1race=2", "cm1race=3"]],
         "kind": "indicator", "scale": 3},
        {"name": "number_of_children", "codes": ["m1numkids"], "kind": "capped", "cap": 3},
    ],
    "negative": [
        {"name": "help_available", "codes": ["m1helpavail", "m5helpavail"]},
        {"name": "long_time_neighborhood", "codes": ["m1nbhood5yr"]},
        {"name": "first_year_moves", "codes": ["m1moves1styr"]},
    ],
}

_PREFIX_POOL = ("m", "f", "k", "p", "hv", "t")
_ORDINAL_QUESTIONS = (
    "How often does this happen?",
    "How many times in the past year?",
    "Rate your agreement on this scale",
    "Number of days per week",
    "Total count reported",
)
_CATEGORICAL_QUESTIONS = (
    "Which option best describes the situation?",
    "What is this person's relationship to you?",
    "Primary reason given",
)


@dataclass
class SynthConfig:
    """Generator settings; the defaults are the desk-scale shape."""

    n_rows: int = 4242
    n_continuous: int = 600
    n_ordinal: int = 500
    n_categorical: int = 888
    min_categories: int = 2
    max_categories: int = 6
    n_planted: int = 6
    target_r2: float = 0.4
    binary_signal_scale: float = 1.5
    binary_base_rate: float = 0.15
    blank_rate: float = 0.04
    refused_rate: float = 0.02
    dont_know_rate: float = 0.02
    other_code_rate: float = 0.02
    split_fractions: tuple = (0.5, 0.25, 0.25)
    include_composite_ingredients: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 10:
            raise ValueError("n_rows must be >= 10")
        if not 0 < self.target_r2 < 1:
            raise ValueError("target_r2 must be in (0, 1)")
        if self.n_planted < 0:
            raise ValueError("n_planted must be >= 0")
        fr = self.split_fractions
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ValueError("split_fractions must be three positive numbers summing to 1")
        if self.n_planted > 0 and self.n_continuous < max(self.n_planted, 2):
            raise ValueError("need at least max(n_planted, 2) continuous columns to plant signal")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)


@dataclass
class SynthResult:
    data: pd.DataFrame  # id column + feature columns, missing already injected
    questions: dict[str, str]
    outcomes: pd.DataFrame  # truth for every row, submission-shaped
    observed: np.ndarray  # train mask
    splits: dict[str, list[str]]  # split name -> row ids
    manifest: dict
    composite_mapping: dict = field(default_factory=lambda: DEFAULT_COMPOSITE_MAPPING)


def _avoid_negative_integer_codes(v: np.ndarray) -> np.ndarray:
    """Nudge exact negative integers so they cannot read as missing codes."""
    collision = (v < 0) & (v == np.floor(v))
    if collision.any():
        v = v.copy()
        v[collision] += 1e-6
    return v


def _inject_missing(col: np.ndarray, rng, cfg: SynthConfig, categorical: bool) -> np.ndarray:
    u = rng.random(col.size)
    out = col.copy()
    edges = np.cumsum([cfg.blank_rate, cfg.refused_rate, cfg.dont_know_rate,
                       cfg.other_code_rate if categorical else 0.0])
    out[u < edges[0]] = np.nan
    out[(u >= edges[0]) & (u < edges[1])] = -1.0
    out[(u >= edges[1]) & (u < edges[2])] = -2.0
    if categorical:
        out[(u >= edges[2]) & (u < edges[3])] = -9.0
    return out


def _solve_intercept(signal: np.ndarray, base_rate: float) -> float:
    """Bisection on a so that mean(sigmoid(a + signal)) = base_rate."""
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.mean(1 / (1 + np.exp(-np.clip(mid + signal, -30, 30)))) < base_rate:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def generate(cfg: SynthConfig) -> SynthResult:
    """Build one synthetic dataset; fully determined by cfg (incl. seed)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_rows
    row_ids = [str(i + 1) for i in range(n)]

    codes, questions, kinds = [], {}, {}
    true_cols: dict[str, np.ndarray] = {}

    def add(code, question, kind, values):
        codes.append(code)
        questions[code] = question
        kinds[code] = kind
        true_cols[code] = values

    for j in range(cfg.n_continuous):
        code = f"{rng.choice(_PREFIX_POOL)}{rng.integers(1, 6)}c{j:04d}"
        add(code, "", "continuous", _avoid_negative_integer_codes(np.round(rng.normal(size=n), 6)))
    for j in range(cfg.n_ordinal):
        code = f"{rng.choice(_PREFIX_POOL)}{rng.integers(1, 6)}o{j:04d}"
        levels = int(rng.integers(3, 10))
        add(code, str(rng.choice(_ORDINAL_QUESTIONS)), "ordinal",
            rng.integers(0, levels + 1, n).astype(float))
    for j in range(cfg.n_categorical):
        code = f"{rng.choice(_PREFIX_POOL)}{rng.integers(1, 6)}g{j:04d}"
        levels = int(rng.integers(cfg.min_categories, cfg.max_categories + 1))
        add(code, str(rng.choice(_CATEGORICAL_QUESTIONS)), "categorical",
            rng.integers(1, levels + 1, n).astype(float))

    if cfg.include_composite_ingredients:
        for code, kind, question in INGREDIENT_COLUMNS:
            if kind == "binary":
                add(code, question, "binary", rng.integers(0, 2, n).astype(float))
            elif kind == "race":
                race = rng.integers(1, 5, n).astype(float)
                race[:4] = [1.0, 2.0, 3.0, 4.0]  # guarantee all levels appear
                add(code, question, "categorical", race)
            else:
                add(code, question, "ordinal", rng.integers(0, 9, n).astype(float))

    continuous_codes = [c for c in codes if kinds[c] == "continuous"]

    outcome_values: dict[str, np.ndarray] = {}
    manifest: dict = {"seed": cfg.seed, "outcomes": {}}
    for name in OUTCOME_NAMES:
        entry: dict = {"planted": [], "coefficients": [], "interaction": None}
        if cfg.n_planted > 0:
            planted = list(rng.choice(continuous_codes, size=cfg.n_planted, replace=False))
            coefs = rng.uniform(0.6, 1.2, cfg.n_planted) * rng.choice([-1.0, 1.0], cfg.n_planted)
            pair = list(rng.choice(planted, size=2, replace=False))
            gamma = float(rng.uniform(0.4, 0.7))
            signal = sum(c * true_cols[code] for c, code in zip(coefs, planted))
            signal = signal + gamma * true_cols[pair[0]] * true_cols[pair[1]]
            # iid standard-normal features: Var(signal) = sum(beta^2) + gamma^2
            signal_var = float(np.sum(coefs**2) + gamma**2)
            entry.update(planted=planted, coefficients=coefs.tolist(),
                         interaction={"codes": pair, "gamma": gamma})
        else:
            signal = np.zeros(n)
            signal_var = 0.0

        if name in CONTINUOUS_OUTCOMES:
            if signal_var > 0:
                noise_sd = float(np.sqrt(signal_var * (1 - cfg.target_r2) / cfg.target_r2))
            else:
                noise_sd = 1.0
            y = signal + noise_sd * rng.normal(size=n)
            if name == "gpa":  # keep positive for the squared-outcome transform
                y = 2.8 + 0.6 * y / max(np.std(y), 1e-12)
            entry.update(kind="continuous", noise_sd=noise_sd, target_r2=cfg.target_r2,
                         population_r2=signal_var / (signal_var + noise_sd**2) if signal_var else 0.0)
        else:
            scaled = cfg.binary_signal_scale * signal / max(np.sqrt(signal_var), 1e-12) \
                if signal_var > 0 else np.zeros(n)
            intercept = _solve_intercept(scaled, cfg.binary_base_rate)
            prob = 1 / (1 + np.exp(-np.clip(intercept + scaled, -30, 30)))
            y = (rng.random(n) < prob).astype(float)
            entry.update(kind="binary", intercept=intercept, base_rate=cfg.binary_base_rate,
                         empirical_rate=float(y.mean()))
        outcome_values[name] = y
        manifest["outcomes"][name] = entry

    # missing injection happens after outcomes so the planted signal is real
    data = {ID_COLUMN: row_ids}
    protected = {c for c, _, _ in INGREDIENT_COLUMNS}
    for code in codes:
        col = true_cols[code]
        if code not in protected:
            col = _inject_missing(col, rng, cfg, kinds[code] == "categorical")
        data[code] = col
    frame = pd.DataFrame(data)

    perm = rng.permutation(n)
    n_train = int(round(cfg.split_fractions[0] * n))
    n_lead = int(round(cfg.split_fractions[1] * n))
    train_idx = np.sort(perm[:n_train])
    lead_idx = np.sort(perm[n_train:n_train + n_lead])
    hold_idx = np.sort(perm[n_train + n_lead:])
    observed = np.zeros(n, dtype=bool)
    observed[train_idx] = True
    splits = {
        "train": [row_ids[i] for i in train_idx],
        "leaderboard": [row_ids[i] for i in lead_idx],
        "holdout": [row_ids[i] for i in hold_idx],
    }

    outcome_frame = pd.DataFrame({ID_COLUMN: row_ids})
    for name in OUTCOME_NAMES:
        outcome_frame[OUTCOME_CSV_COLUMNS[name]] = outcome_values[name]

    manifest.update(config=cfg.to_dict(), n_rows=n, n_columns=len(codes))
    return SynthResult(data=frame, questions=questions, outcomes=outcome_frame,
                       observed=observed, splits=splits, manifest=manifest)


def write_synth(result: SynthResult, out_dir) -> dict[str, Path]:
    """Write the generator outputs; returns the artifact paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "data": out / "data.csv",
        "metadata": out / "metadata.csv",
        "outcomes": out / "outcomes.csv",
        "truth_outcomes": out / "truth_outcomes.csv",
        "splits": out / "splits.json",
        "manifest": out / "synth_manifest.json",
        "composite_mapping": out / "composite_mapping.json",
    }
    result.data.to_csv(paths["data"], index=False)
    pd.DataFrame(
        {"code": list(result.questions), "question": list(result.questions.values())}
    ).to_csv(paths["metadata"], index=False)

    public = result.outcomes.copy()
    outcome_cols = [c for c in public.columns if c != ID_COLUMN]
    public.loc[~result.observed, outcome_cols] = np.nan
    public.to_csv(paths["outcomes"], index=False)
    result.outcomes.to_csv(paths["truth_outcomes"], index=False)

    paths["splits"].write_text(json.dumps(result.splits, indent=1))
    paths["manifest"].write_text(json.dumps(result.manifest, indent=1))
    paths["composite_mapping"].write_text(json.dumps(result.composite_mapping, indent=1))
    return paths
