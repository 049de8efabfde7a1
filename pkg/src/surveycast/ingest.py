"""Loading and schema classification for survey-style tabular data.

The raw data is a CSV whose header carries variable codes such as
``m5f23k`` or ``hv4l47``: a respondent prefix, a wave digit, and an item
suffix.  Negative integer cell values are survey missing codes (-1
refused, -2 don't know, other negatives unspecified); blank cells are
plain missing.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

OUTCOME_NAMES = ("gpa", "grit", "material_hardship", "eviction", "layoff", "job_training")
CONTINUOUS_OUTCOMES = ("gpa", "grit", "material_hardship")
BINARY_OUTCOMES = ("eviction", "layoff", "job_training")

# Column names used by the submission-shaped outcome CSVs.
OUTCOME_CSV_COLUMNS = {
    "gpa": "gpa",
    "grit": "grit",
    "material_hardship": "materialHardship",
    "eviction": "eviction",
    "layoff": "layoff",
    "job_training": "jobTraining",
}
ID_COLUMN = "challengeID"


class IngestError(ValueError):
    """Malformed input file; message carries row/column location."""


class Kind(str, enum.Enum):
    CONTINUOUS = "continuous"
    ORDINAL = "ordinal"
    CATEGORICAL = "categorical"
    BINARY = "binary"
    UNKNOWN = "unknown"


class Respondent(str, enum.Enum):
    MOTHER = "mother"
    FATHER = "father"
    CHILD = "child"
    PRIMARY_CAREGIVER = "primary_caregiver"
    HOME_VISIT = "home_visit"
    TEACHER = "teacher"
    CONSTRUCTED = "constructed"
    UNKNOWN = "unknown"


ORDERED_KINDS = (Kind.CONTINUOUS, Kind.ORDINAL, Kind.BINARY)


@dataclass(frozen=True)
class ColumnMeta:
    """Per-variable schema entry."""

    code: str
    question: str = ""
    kind: Kind = Kind.UNKNOWN
    wave: int | None = None
    respondent: Respondent = Respondent.UNKNOWN
    missing_codes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if any(c >= 0 for c in self.missing_codes):
            raise ValueError(f"column {self.code}: missing codes must be negative integers")

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "question": self.question,
            "kind": self.kind.value,
            "wave": self.wave,
            "respondent": self.respondent.value,
            "missing_codes": sorted(self.missing_codes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMeta":
        return cls(
            code=d["code"],
            question=d.get("question", ""),
            kind=Kind(d.get("kind", "unknown")),
            wave=d.get("wave"),
            respondent=Respondent(d.get("respondent", "unknown")),
            missing_codes=frozenset(d.get("missing_codes", ())),
        )


class Dataset:
    """Row-aligned numeric matrix plus per-column metadata.

    ``values`` keeps raw cell contents (so downstream encoding can see
    which missing code occurred); blank cells are NaN.  A cell counts as
    missing iff it is NaN or equals one of its column's missing codes.
    The matrix is frozen after construction and safe to share.
    """

    def __init__(self, row_ids: list[str], columns: list[ColumnMeta], values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d matrix")
        if values.shape[0] != len(row_ids):
            raise ValueError(f"{values.shape[0]} rows of values vs {len(row_ids)} row ids")
        if values.shape[1] != len(columns):
            raise ValueError(f"{values.shape[1]} columns of values vs {len(columns)} metas")
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

    def codes(self) -> list[str]:
        return [c.code for c in self.columns]

    def column_index(self) -> dict[str, int]:
        return {c.code: i for i, c in enumerate(self.columns)}

    def missing_mask(self) -> np.ndarray:
        """Boolean matrix, True where a cell is missing (blank or coded)."""
        mask = np.isnan(self.values)
        for j, col in enumerate(self.columns):
            if col.missing_codes:
                mask[:, j] |= np.isin(self.values[:, j], sorted(col.missing_codes))
        return mask

    def select_columns(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.row_ids, [self.columns[i] for i in indices], self.values[:, indices].copy())

    def with_columns(self, columns: list[ColumnMeta]) -> "Dataset":
        return Dataset(self.row_ids, columns, self.values)


def _detect_missing_codes(col: np.ndarray) -> frozenset[int]:
    finite = col[np.isfinite(col)]
    neg = finite[(finite < 0) & (finite == np.floor(finite))]
    return frozenset(int(v) for v in np.unique(neg))


def load_metadata(meta_path) -> dict[str, str]:
    """Read code→question mapping from a JSON object or a 2-column CSV."""
    meta_path = Path(meta_path)
    if meta_path.suffix.lower() == ".json":
        with open(meta_path) as fh:
            data = json.load(fh)
        return {str(k): str(v) for k, v in data.items()}
    df = pd.read_csv(meta_path, dtype=str, keep_default_na=False)
    if df.shape[1] < 2:
        raise IngestError(f"{meta_path}: metadata CSV needs code and question columns")
    return dict(zip(df.iloc[:, 0], df.iloc[:, 1]))


def load_dataset(data_path, meta_path=None) -> Dataset:
    """Load a raw data CSV (id column + one column per variable code).

    Column kinds start out Unknown; run :func:`classify_dataset` next.
    Negative integer values observed in a column are recorded as that
    column's missing codes.
    """
    data_path = Path(data_path)
    try:
        raw = pd.read_csv(data_path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{data_path}: empty data file") from None
    except pd.errors.ParserError as exc:
        raise IngestError(f"{data_path}: {exc}") from None
    if raw.shape[1] < 2:
        raise IngestError(f"{data_path}: need an id column plus at least one variable column")

    questions = load_metadata(meta_path) if meta_path is not None else {}
    row_ids = raw.iloc[:, 0].tolist()
    codes = [str(c) for c in raw.columns[1:]]

    values = np.empty((len(row_ids), len(codes)), dtype=np.float64)
    for j, code in enumerate(codes):
        col = raw.iloc[:, j + 1].to_numpy()
        col = np.where(col == "", "nan", col)
        try:
            values[:, j] = col.astype(np.float64)
        except ValueError:
            bad = next(i for i, v in enumerate(col) if not _is_floatable(v))
            raise IngestError(
                f"{data_path}: non-numeric value {col[bad]!r} at data row {bad + 1}, column {code!r}"
            ) from None

    missing = len(set(codes) - set(questions)) if questions else 0
    if questions and missing:
        log.warning("metadata missing question text for %d of %d columns", missing, len(codes))

    columns = []
    for j, code in enumerate(codes):
        columns.append(
            ColumnMeta(
                code=code,
                question=questions.get(code, ""),
                missing_codes=_detect_missing_codes(values[:, j]),
            )
        )
    return Dataset(row_ids, columns, values)


def _is_floatable(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# SI keyword heuristic for ordered responses, matched on word boundaries,
# case-insensitive; "#" is a literal token.
_HOW = re.compile(r"\bhow\b", re.IGNORECASE)
_HOW_QUALIFIER = re.compile(r"\b(?:is|many|often|much|long)\b", re.IGNORECASE)
_ORDERED_KEYWORD = re.compile(
    r"\b(?:rate|frequency|number|level|highest|amount|days|total|scale|times)\b|#",
    re.IGNORECASE,
)


def question_indicates_ordered(question: str) -> bool:
    if _ORDERED_KEYWORD.search(question):
        return True
    return bool(_HOW.search(question)) and bool(_HOW_QUALIFIER.search(question))


def classify_column_kind(meta: ColumnMeta, column_values: np.ndarray) -> Kind:
    """Assign continuous/ordinal/binary/categorical from values and question text.

    Precedence: exactly two distinct non-missing values → Binary; more
    than 15 → Continuous; an ordered-response keyword match → Ordinal;
    otherwise Categorical.
    """
    col = np.asarray(column_values, dtype=np.float64)
    finite = col[np.isfinite(col)]
    if meta.missing_codes:
        finite = finite[~np.isin(finite, sorted(meta.missing_codes))]
    n_unique = np.unique(finite).size
    if n_unique == 2:
        return Kind.BINARY
    if n_unique > 15:
        return Kind.CONTINUOUS
    if question_indicates_ordered(meta.question):
        return Kind.ORDINAL
    return Kind.CATEGORICAL


_CONSTRUCTED_PREFIX = "c"
_RESPONDENT_PREFIXES = (
    ("hv", Respondent.HOME_VISIT),
    ("m", Respondent.MOTHER),
    ("f", Respondent.FATHER),
    ("k", Respondent.CHILD),
    ("p", Respondent.PRIMARY_CAREGIVER),
    ("t", Respondent.TEACHER),
)


def _match_prefix(code: str) -> tuple[str, Respondent] | None:
    for prefix, resp in _RESPONDENT_PREFIXES:
        if code.startswith(prefix):
            return prefix, resp
    return None


def parse_wave_respondent(code: str) -> tuple[int | None, Respondent]:
    """Parse (wave, respondent) from a variable code; never raises.

    Codes starting with ``c`` + a respondent prefix (cm, cf, chv, ...) are
    constructed variables.  The wave is the first digit after the prefix,
    None when absent or outside 1-5.  Unrecognized prefixes yield
    (None, Unknown).
    """
    s = code.strip().lower()
    if not s:
        return None, Respondent.UNKNOWN
    respondent = None
    rest = s
    if s.startswith(_CONSTRUCTED_PREFIX):
        inner = _match_prefix(s[1:])
        if inner is not None:
            respondent = Respondent.CONSTRUCTED
            rest = s[1 + len(inner[0]):]
    if respondent is None:
        direct = _match_prefix(s)
        if direct is None:
            return None, Respondent.UNKNOWN
        respondent = direct[1]
        rest = s[len(direct[0]):]
    digits = re.search(r"\d", rest)
    wave = int(digits.group()) if digits else None
    if wave is not None and not 1 <= wave <= 5:
        wave = None
    return wave, respondent


def classify_dataset(ds: Dataset, overrides: dict[str, Kind] | None = None) -> Dataset:
    """Fill in kind/wave/respondent for every column.

    ``overrides`` (code → kind) replaces the heuristic classification for
    listed columns, standing in for the manual review the heuristic rule
    set cannot cover.
    """
    overrides = overrides or {}
    unknown_overrides = set(overrides) - set(ds.codes())
    if unknown_overrides:
        log.warning("kind overrides for absent columns ignored: %s", sorted(unknown_overrides)[:5])
    columns = []
    for j, meta in enumerate(ds.columns):
        kind = overrides.get(meta.code) or classify_column_kind(meta, ds.values[:, j])
        if isinstance(kind, str):
            kind = Kind(kind)
        wave, respondent = parse_wave_respondent(meta.code)
        columns.append(replace(meta, kind=kind, wave=wave, respondent=respondent))
    return ds.with_columns(columns)


def load_kind_overrides(path) -> dict[str, Kind]:
    """Read a code→kind override file (JSON object)."""
    with open(path) as fh:
        data = json.load(fh)
    return {code: Kind(kind) for code, kind in data.items()}


class OutcomeSet:
    """The six prediction targets with a shared observed-row mask."""

    def __init__(self, values: dict[str, np.ndarray], observed: np.ndarray):
        if set(values) != set(OUTCOME_NAMES):
            raise ValueError(f"outcomes must be exactly {OUTCOME_NAMES}")
        self.observed = np.asarray(observed, dtype=bool)
        self.values = {}
        n = self.observed.size
        for name in OUTCOME_NAMES:
            v = np.asarray(values[name], dtype=np.float64)
            if v.shape != (n,):
                raise ValueError(f"outcome {name}: length {v.size} vs mask length {n}")
            obs = v[self.observed]
            if name in BINARY_OUTCOMES:
                if not np.all(np.isin(obs, (0.0, 1.0))):
                    raise ValueError(f"outcome {name}: observed values must be 0/1")
            elif not np.all(np.isfinite(obs)):
                raise ValueError(f"outcome {name}: observed values must be finite")
            self.values[name] = v

    @staticmethod
    def kind_of(name: str) -> str:
        return "binary" if name in BINARY_OUTCOMES else "continuous"

    def observed_values(self, name: str) -> np.ndarray:
        return self.values[name][self.observed]


def load_outcomes(path, row_ids: list[str]) -> OutcomeSet:
    """Read an outcome CSV (submission-shaped header); blank rows are unobserved."""
    df = pd.read_csv(path, dtype={ID_COLUMN: str})
    missing_cols = [c for c in [ID_COLUMN, *OUTCOME_CSV_COLUMNS.values()] if c not in df.columns]
    if missing_cols:
        raise IngestError(f"{path}: outcome file missing columns {missing_cols}")
    df = df.set_index(ID_COLUMN).reindex([str(r) for r in row_ids])

    matrix = df[[OUTCOME_CSV_COLUMNS[name] for name in OUTCOME_NAMES]].to_numpy(dtype=np.float64)
    present = np.isfinite(matrix)
    partial = present.any(axis=1) & ~present.all(axis=1)
    if partial.any():
        raise IngestError(f"{path}: rows with partially observed outcomes at positions {np.where(partial)[0][:5]}")
    observed = present.all(axis=1)
    values = {name: matrix[:, i] for i, name in enumerate(OUTCOME_NAMES)}
    for name in OUTCOME_NAMES:
        values[name] = np.where(observed, values[name], np.nan)
    return OutcomeSet(values, observed)


def save_dataset_npz(ds: Dataset, path) -> None:
    np.savez_compressed(
        path,
        values=ds.values,
        row_ids=np.asarray(ds.row_ids, dtype=str),
        columns_json=np.asarray(json.dumps([c.to_dict() for c in ds.columns])),
    )


def load_dataset_npz(path) -> Dataset:
    with np.load(path, allow_pickle=False) as archive:
        values = archive["values"]
        row_ids = [str(r) for r in archive["row_ids"]]
        columns = [ColumnMeta.from_dict(d) for d in json.loads(str(archive["columns_json"]))]
    return Dataset(row_ids, columns, values)


def write_dataset_csv(ds: Dataset, path) -> None:
    """Write the raw CSV form (full float precision, blanks for NaN)."""
    df = pd.DataFrame(ds.values, columns=ds.codes())
    df.insert(0, ID_COLUMN, ds.row_ids)
    df.to_csv(path, index=False)
