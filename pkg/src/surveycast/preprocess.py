"""Feature engineering: filters, imputation with missing-reason flags,
one-hot encoding, composite columns, and per-model feature transforms.

The full chain takes a raw classified :class:`~surveycast.ingest.Dataset`
to a missing-free :class:`EncodedDataset`:

    variance filter -> missingness filter -> mean imputation (+refused /
    don't-know flags) -> one-hot encoding -> composite columns

Feature transforms (log/sqrt/square, z-normalized) are applied separately
by the linear-model path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .ingest import ColumnMeta, Dataset, Kind, ORDERED_KINDS

log = logging.getLogger(__name__)

REFUSED_SUFFIX = "__refused"
DONT_KNOW_SUFFIX = "__dontknow"
REFUSED_CODE = -1.0
DONT_KNOW_CODE = -2.0
NA_LABEL = "NA"

COMPOSITE_POSITIVE = "composite_positive"
COMPOSITE_NEGATIVE = "composite_negative"

TRANSFORM_NAMES = ("log", "sqrt", "square")


@dataclass(frozen=True)
class EncodedColumn:
    """Provenance entry for one encoded column.

    ``role`` is one of value, flag_refused, flag_dont_know, onehot,
    transform, composite; ``detail`` holds the one-hot response label or
    the transform name.
    """

    name: str
    source: str
    role: str
    detail: str = ""
    kind: Kind = Kind.CONTINUOUS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source": self.source,
            "role": self.role,
            "detail": self.detail,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncodedColumn":
        return cls(d["name"], d["source"], d["role"], d.get("detail", ""), Kind(d.get("kind", "continuous")))


class EncodedDataset:
    """Missing-free numeric matrix with provenance back to source codes."""

    def __init__(self, row_ids: list[str], columns: list[EncodedColumn], values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(row_ids), len(columns)):
            raise ValueError(f"values shape {values.shape} vs {len(row_ids)} rows / {len(columns)} columns")
        if not np.all(np.isfinite(values)):
            raise ValueError("encoded dataset must be missing-free and finite")
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate encoded column names")
        self.row_ids = list(row_ids)
        self.columns = list(columns)
        self.values = values
        self.values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def name_index(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.columns)}

    def onehot_groups(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {}
        for i, c in enumerate(self.columns):
            if c.role == "onehot":
                groups.setdefault(c.source, []).append(i)
        return groups

    def select_columns(self, indices) -> "EncodedDataset":
        indices = np.asarray(indices, dtype=int)
        return EncodedDataset(self.row_ids, [self.columns[i] for i in indices], self.values[:, indices].copy())

    def append_columns(self, columns: list[EncodedColumn], values: np.ndarray) -> "EncodedDataset":
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.shape[0] != self.n_rows:
            values = values.T
        return EncodedDataset(self.row_ids, self.columns + columns, np.hstack([self.values, values]))


def filter_low_variance(ds: Dataset, threshold: float = 0.05) -> Dataset:
    """Drop columns whose variance over non-missing cells is below ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    mask = ds.missing_mask()
    keep = []
    for j in range(ds.n_cols):
        obs = ds.values[~mask[:, j], j]
        if obs.size == 0:
            log.warning("column %s has no observed cells; dropped", ds.columns[j].code)
            continue
        if np.var(obs) >= threshold:
            keep.append(j)
    return ds.select_columns(keep)


def filter_high_missing(ds: Dataset, max_frac: float = 0.8) -> Dataset:
    """Drop columns with missing fraction strictly greater than ``max_frac``."""
    if not 0 < max_frac <= 1:
        raise ValueError("max_frac must be in (0, 1]")
    frac = ds.missing_mask().mean(axis=0)
    keep = np.where(frac <= max_frac)[0]
    return ds.select_columns(keep)


def impute_mean_with_flags(ds: Dataset, train_mask: np.ndarray | None = None) -> Dataset:
    """Mean-impute continuous/ordinal/binary columns and append -1/-2 flags.

    Every eligible column gets two indicator columns (refused, don't
    know), present even when all-zero.  Means are computed on training
    rows only when ``train_mask`` is given, and applied everywhere.
    """
    if train_mask is None:
        train_mask = np.ones(ds.n_rows, dtype=bool)
    train_mask = np.asarray(train_mask, dtype=bool)
    missing = ds.missing_mask()

    out_values = [ds.values.copy()]
    flag_metas: list[ColumnMeta] = []
    flag_values: list[np.ndarray] = []
    for j, meta in enumerate(ds.columns):
        if meta.kind not in ORDERED_KINDS:
            continue
        col = ds.values[:, j]
        miss = missing[:, j]
        obs_train = col[train_mask & ~miss]
        if obs_train.size == 0:
            mean = 0.0
            log.warning("column %s has no observed training cells; imputing 0", meta.code)
        else:
            mean = float(np.mean(obs_train))
        out_values[0][miss, j] = mean
        refused = (col == REFUSED_CODE).astype(np.float64)
        dont_know = (col == DONT_KNOW_CODE).astype(np.float64)
        for suffix, vec in ((REFUSED_SUFFIX, refused), (DONT_KNOW_SUFFIX, dont_know)):
            flag_metas.append(
                replace(meta, code=meta.code + suffix, kind=Kind.BINARY, missing_codes=frozenset())
            )
            flag_values.append(vec)

    values = np.hstack([out_values[0]] + ([np.column_stack(flag_values)] if flag_values else []))
    return Dataset(ds.row_ids, ds.columns + flag_metas, values)


def _flag_role(code: str) -> str | None:
    if code.endswith(REFUSED_SUFFIX):
        return "flag_refused"
    if code.endswith(DONT_KNOW_SUFFIX):
        return "flag_dont_know"
    return None


def _category_label(v: float) -> str:
    return NA_LABEL if np.isnan(v) else f"{v:g}"


def one_hot_encode(ds: Dataset) -> EncodedDataset:
    """Expand categorical columns into per-response indicators.

    Every distinct observed response, every distinct missing code, and
    (if any) the blank cell each get an indicator column, so group row
    sums are exactly one.  Non-categorical columns pass through and must
    already be missing-free (run imputation first).
    """
    columns: list[EncodedColumn] = []
    out: list[np.ndarray] = []
    for j, meta in enumerate(ds.columns):
        col = ds.values[:, j]
        if meta.kind is Kind.CATEGORICAL:
            levels = np.unique(col[np.isfinite(col)])
            has_nan = bool(np.isnan(col).any())
            if levels.size + int(has_nan) <= 1:
                log.warning("categorical column %s has a single level; encoding all-ones", meta.code)
            for v in levels:
                columns.append(
                    EncodedColumn(f"{meta.code}={_category_label(v)}", meta.code, "onehot",
                                  detail=_category_label(v), kind=Kind.BINARY)
                )
                out.append((col == v).astype(np.float64))
            if has_nan:
                columns.append(
                    EncodedColumn(f"{meta.code}={NA_LABEL}", meta.code, "onehot",
                                  detail=NA_LABEL, kind=Kind.BINARY)
                )
                out.append(np.isnan(col).astype(np.float64))
        else:
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {meta.code} still has missing cells; impute before encoding")
            role = _flag_role(meta.code)
            if role is not None:
                source = meta.code[: meta.code.rindex("__")]
                columns.append(EncodedColumn(meta.code, source, role, kind=Kind.BINARY))
            else:
                columns.append(EncodedColumn(meta.code, meta.code, "value", kind=meta.kind))
            out.append(col.astype(np.float64))
    return EncodedDataset(ds.row_ids, columns, np.column_stack(out))


def encode_like(ds: Dataset, reference: EncodedDataset) -> EncodedDataset:
    """Encode new rows using a reference encoding's one-hot vocabulary.

    Responses unseen in the reference produce an all-zero group row (the
    sum-to-1 invariant cannot hold for them); each is logged and listed
    in the result's ``unseen`` attribute as (row_id, source, value).
    """
    col_of = {c.code: j for j, c in enumerate(ds.columns)}
    out = np.zeros((ds.n_rows, reference.n_cols))
    unseen: list[tuple[str, str, float]] = []
    covered: dict[str, np.ndarray] = {}
    for i, enc in enumerate(reference.columns):
        if enc.role == "onehot":
            if enc.source not in col_of:
                raise ValueError(f"source column {enc.source} absent from dataset")
            col = ds.values[:, col_of[enc.source]]
            hit = np.isnan(col) if enc.detail == NA_LABEL else (col == float(enc.detail))
            out[:, i] = hit.astype(np.float64)
            covered[enc.source] = covered.get(enc.source, np.zeros(ds.n_rows, bool)) | hit
        else:
            if enc.name not in col_of:
                raise ValueError(f"column {enc.name} absent from dataset")
            out[:, i] = ds.values[:, col_of[enc.name]]
    for source, hit in covered.items():
        for r in np.where(~hit)[0]:
            value = ds.values[r, col_of[source]]
            unseen.append((ds.row_ids[r], source, float(value)))
            log.warning("row %s: unseen response %r for %s; one-hot group left all-zero",
                        ds.row_ids[r], value, source)
    encoded = EncodedDataset(ds.row_ids, list(reference.columns), out)
    encoded.unseen = unseen
    return encoded


# --- composite columns -------------------------------------------------

WAVE5_WEIGHT = 3.0


def _ingredient_value(ds, entries: list, missing_mask) -> np.ndarray:
    """Wave-weighted aggregate of one ingredient's question instances.

    Each entry is a code or a list of codes summed together (e.g. several
    one-hot indicators of one question).  Wave-5 entries weigh 3x earlier
    ones; weights renormalize over the entries observed per row, and rows
    with nothing observed contribute 0.
    """
    from .ingest import parse_wave_respondent

    if isinstance(ds, EncodedDataset):
        index = ds.name_index()
    else:
        index = ds.column_index()
    num = np.zeros(ds.n_rows)
    den = np.zeros(ds.n_rows)
    for entry in entries:
        codes = entry if isinstance(entry, list) else [entry]
        for code in codes:
            if code not in index:
                raise ValueError(f"composite mapping references absent column {code!r}")
        wave, _ = parse_wave_respondent(codes[0].split("=")[0])
        weight = WAVE5_WEIGHT if wave == 5 else 1.0
        value = np.zeros(ds.n_rows)
        observed = np.zeros(ds.n_rows, dtype=bool)
        for code in codes:
            j = index[code]
            cell_ok = np.ones(ds.n_rows, bool) if missing_mask is None else ~missing_mask[:, j]
            value += np.where(cell_ok, ds.values[:, j], 0.0)
            observed |= cell_ok
        num += np.where(observed, weight * value, 0.0)
        den += np.where(observed, weight, 0.0)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _apply_ingredient_kind(v: np.ndarray, ingredient: dict) -> np.ndarray:
    kind = ingredient.get("kind", "value")
    if kind == "value":
        return v
    if kind == "indicator":
        scale = float(ingredient.get("scale", 3.0))
        return np.where(v > 0.5, scale, 0.0)
    if kind == "capped":
        cap = float(ingredient.get("cap", 3.0))
        return np.minimum(v, cap)
    raise ValueError(f"unknown ingredient kind {kind!r}")


def add_composite_homelessness(ds, mapping: dict):
    """Append the two housing-instability composite columns.

    ``mapping`` has "positive" and "negative" ingredient lists; each
    ingredient is {"name", "codes", optional "kind"/"scale"/"cap"}.  The
    positive composite sums risk factors (welfare, public housing, lives
    with father, race indicator scaled to 3, children capped at 3); the
    negative composite sums protective ones.  Works on a raw Dataset or
    an encoded one; the pipeline applies it post-encoding.
    """
    missing_mask = ds.missing_mask() if isinstance(ds, Dataset) else None
    composites = {}
    for side, name in (("positive", COMPOSITE_POSITIVE), ("negative", COMPOSITE_NEGATIVE)):
        total = np.zeros(ds.n_rows)
        for ingredient in mapping.get(side, []):
            v = _ingredient_value(ds, ingredient["codes"], missing_mask)
            total += _apply_ingredient_kind(v, ingredient)
        composites[name] = total

    values = np.column_stack([composites[COMPOSITE_POSITIVE], composites[COMPOSITE_NEGATIVE]])
    if isinstance(ds, EncodedDataset):
        cols = [EncodedColumn(name, "", "composite", kind=Kind.CONTINUOUS)
                for name in (COMPOSITE_POSITIVE, COMPOSITE_NEGATIVE)]
        return ds.append_columns(cols, values)
    metas = [ColumnMeta(code=name, kind=Kind.CONTINUOUS) for name in (COMPOSITE_POSITIVE, COMPOSITE_NEGATIVE)]
    return Dataset(ds.row_ids, ds.columns + metas, np.hstack([ds.values, values]))


# --- transforms ---------------------------------------------------------


def _transform_column(x: np.ndarray, transform: str) -> np.ndarray:
    if transform == "square":
        return x * x
    # log/sqrt need positive inputs; shift columns containing nonpositives
    shifted = x - np.min(x) + 1.0 if np.min(x) <= 0 else x
    return np.log(shifted) if transform == "log" else np.sqrt(shifted)


def transform_features(enc: EncodedDataset, transforms=TRANSFORM_NAMES,
                       train_mask: np.ndarray | None = None) -> EncodedDataset:
    """Append log/sqrt/square copies of continuous and ordinal columns.

    Each appended column is z-normalized using training-row mean/sd;
    columns whose transform has zero training variance are skipped with a
    warning.
    """
    unknown = set(transforms) - set(TRANSFORM_NAMES)
    if unknown:
        raise ValueError(f"unknown transforms {sorted(unknown)}")
    if train_mask is None:
        train_mask = np.ones(enc.n_rows, dtype=bool)
    train_mask = np.asarray(train_mask, dtype=bool)

    eligible = [j for j, c in enumerate(enc.columns)
                if c.role == "value" and c.kind in (Kind.CONTINUOUS, Kind.ORDINAL)]
    new_cols: list[EncodedColumn] = []
    new_vals: list[np.ndarray] = []
    for transform in [t for t in TRANSFORM_NAMES if t in transforms]:
        for j in eligible:
            col = enc.columns[j]
            t = _transform_column(enc.values[:, j], transform)
            mean = t[train_mask].mean()
            sd = t[train_mask].std()
            if sd == 0:
                log.warning("transform %s of %s has zero training variance; skipped", transform, col.name)
                continue
            new_cols.append(EncodedColumn(f"{col.name}__{transform}", col.source, "transform",
                                          detail=transform, kind=col.kind))
            new_vals.append((t - mean) / sd)
    if not new_cols:
        return enc
    return enc.append_columns(new_cols, np.column_stack(new_vals))


def transform_outcome_square(y: np.ndarray) -> np.ndarray:
    """Square a nonnegative-scale outcome (used for the GPA target)."""
    return np.square(np.asarray(y, dtype=np.float64))


def inverse_transform_outcome_square(y_sq: np.ndarray) -> np.ndarray:
    """Invert the squared-outcome transform, clamping negatives to 0 first."""
    return np.sqrt(np.clip(np.asarray(y_sq, dtype=np.float64), 0.0, None))


# --- full chain ----------------------------------------------------------


def preprocess_pipeline(ds: Dataset, train_mask: np.ndarray | None = None,
                        composite_mapping: dict | None = None,
                        variance_threshold: float = 0.05,
                        max_missing_frac: float = 0.8):
    """Run the full feature-engineering chain; returns (encoded, report).

    The report counts columns at each stage (raw input, after both
    filters, after encoding, final with composites).
    """
    report = {"input_columns": ds.n_cols}
    ds = filter_low_variance(ds, variance_threshold)
    ds = filter_high_missing(ds, max_missing_frac)
    report["after_filters"] = ds.n_cols
    kept_ordered = sum(1 for c in ds.columns if c.kind in ORDERED_KINDS)
    report["kept_continuous_ordinal_binary"] = kept_ordered
    report["kept_categorical"] = ds.n_cols - kept_ordered

    ds = impute_mean_with_flags(ds, train_mask)
    enc = one_hot_encode(ds)
    report["after_encoding"] = enc.n_cols
    report["onehot_columns"] = sum(1 for c in enc.columns if c.role == "onehot")
    if composite_mapping:
        enc = add_composite_homelessness(enc, composite_mapping)
        report["composite_columns"] = 2
    else:
        report["composite_columns"] = 0
    report["final_columns"] = enc.n_cols
    if np.isnan(enc.values).any():
        raise AssertionError("missing markers survived preprocessing")
    return enc, report
