"""Typed in-memory representation of analysis data and CSV ingestion.

Outcomes are one of four kinds (continuous, binary, count, survival),
treatments are label vectors with an explicit reference level, and a
Dataset bundles covariates, outcome, treatment, and optional matched-group
ids.  All containers are immutable after construction and safe to share.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

OUTCOME_KINDS = ("continuous", "binary", "count", "survival")


class DataError(ValueError):
    """Raised for malformed input data; message names the offending row/column."""


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"{name} must be a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise DataError(f"{name} contains a non-finite value at row {bad}")
    return arr


@dataclass(frozen=True)
class Outcome:
    """Typed outcome vector.

    kind is one of OUTCOME_KINDS.  For non-survival kinds `values` holds the
    responses; for survival, `time` holds strictly positive observed times and
    `status` holds event indicators (1 = event observed, 0 = censored).
    """

    kind: str
    values: np.ndarray | None = None
    time: np.ndarray | None = None
    status: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise DataError(f"unknown outcome kind {self.kind!r}")
        if self.kind == "survival":
            t = _as_float_vector(self.time, "time")
            s = _as_float_vector(self.status, "status")
            if t.shape != s.shape:
                raise DataError("time and status must have equal length")
            if np.any(t <= 0):
                bad = int(np.flatnonzero(t <= 0)[0])
                raise DataError(f"non-positive survival time at row {bad}")
            if not np.all(np.isin(s, (0.0, 1.0))):
                bad = int(np.flatnonzero(~np.isin(s, (0.0, 1.0)))[0])
                raise DataError(f"status value outside {{0,1}} at row {bad}")
            object.__setattr__(self, "time", t)
            object.__setattr__(self, "status", s)
        else:
            v = _as_float_vector(self.values, "outcome")
            if self.kind == "binary" and not np.all(np.isin(v, (0.0, 1.0))):
                bad = int(np.flatnonzero(~np.isin(v, (0.0, 1.0)))[0])
                raise DataError(f"binary outcome value outside {{0,1}} at row {bad}")
            if self.kind == "count":
                if np.any(v < 0) or np.any(v != np.round(v)):
                    bad = int(np.flatnonzero((v < 0) | (v != np.round(v)))[0])
                    raise DataError(f"count outcome must be a non-negative integer at row {bad}")
            object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return len(self.time) if self.kind == "survival" else len(self.values)

    @classmethod
    def continuous(cls, values) -> "Outcome":
        return cls("continuous", values=values)

    @classmethod
    def binary(cls, values) -> "Outcome":
        return cls("binary", values=values)

    @classmethod
    def count(cls, values) -> "Outcome":
        return cls("count", values=values)

    @classmethod
    def survival(cls, time, status) -> "Outcome":
        return cls("survival", time=time, status=status)

    def take(self, idx) -> "Outcome":
        """Row subset in the given order (used by resampling)."""
        if self.kind == "survival":
            return Outcome.survival(self.time[idx], self.status[idx])
        return Outcome(self.kind, values=self.values[idx])


def _sorted_levels(labels: np.ndarray) -> list:
    uniq = set(labels.tolist())
    kinds = {type(u) for u in uniq}
    if len(kinds) > 1:
        raise DataError("treatment labels mix types; use all-string or all-integer labels")
    return sorted(uniq)


@dataclass(frozen=True)
class TreatmentVector:
    """Observed treatment labels with ordered levels and a reference level.

    Levels sort ascending (numeric for integer labels, lexicographic for
    strings); the default reference is the first level in sort order.
    """

    labels: np.ndarray
    levels: list
    reference: object

    def __post_init__(self):
        if len(self.levels) < 2:
            raise DataError("treatment must have at least 2 levels")
        if self.reference not in self.levels:
            raise DataError(f"reference level {self.reference!r} not among levels {self.levels}")
        if not set(self.labels.tolist()) <= set(self.levels):
            raise DataError("treatment labels outside declared levels")

    @classmethod
    def from_labels(cls, labels, reference=None) -> "TreatmentVector":
        arr = np.asarray(labels, dtype=object)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError("treatment labels must be a nonempty vector")
        # integers arriving as floats (e.g. via CSV) are normalized to int
        norm = []
        for v in arr.tolist():
            if isinstance(v, float) and v == int(v):
                v = int(v)
            norm.append(v)
        arr = np.asarray(norm, dtype=object)
        levels = _sorted_levels(arr)
        if reference is None:
            reference = levels[0]
        elif reference not in levels:
            raise DataError(f"reference level {reference!r} not present in the data")
        return cls(labels=arr, levels=levels, reference=reference)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def with_reference(self, reference) -> "TreatmentVector":
        return TreatmentVector.from_labels(self.labels, reference=reference)

    def indicator(self, level) -> np.ndarray:
        return np.asarray([lab == level for lab in self.labels.tolist()], dtype=bool)

    def take(self, idx) -> "TreatmentVector":
        return TreatmentVector(labels=self.labels[idx], levels=self.levels, reference=self.reference)


@dataclass(frozen=True)
class CodedBinaryTreatment:
    """+1/-1 coding of a two-level treatment: +1 = non-reference, -1 = reference."""

    t: np.ndarray
    positive_level: object
    reference_level: object

    def decode(self) -> np.ndarray:
        return np.where(self.t > 0, self.positive_level, self.reference_level)


def code_binary(trt: TreatmentVector) -> CodedBinaryTreatment:
    """Code a two-level treatment as -1 (reference) / +1 (the other level)."""
    if trt.n_levels != 2:
        raise DataError(
            f"code_binary needs exactly 2 treatment levels, got {trt.n_levels}; "
            "use the multi-category design path"
        )
    other = [lv for lv in trt.levels if lv != trt.reference][0]
    t = np.where(trt.indicator(other), 1, -1).astype(np.int64)
    return CodedBinaryTreatment(t=t, positive_level=other, reference_level=trt.reference)


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix (no intercept column), outcome, treatment, match groups."""

    x: np.ndarray
    outcome: Outcome
    trt: TreatmentVector
    match_id: np.ndarray | None = None
    larger_outcome_better: bool = True
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise DataError("x must be a 2-d matrix")
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"non-finite covariate at row {bad[0]}, column {bad[1]}")
        n = x.shape[0]
        if self.outcome.n != n or self.trt.n != n:
            raise DataError(
                f"row counts differ: x has {n}, outcome has {self.outcome.n}, trt has {self.trt.n}"
            )
        if self.match_id is not None:
            mid = np.asarray(self.match_id, dtype=object)
            if len(mid) != n:
                raise DataError(f"match_id has {len(mid)} rows, expected {n}")
            object.__setattr__(self, "match_id", mid)
        names = list(self.covariate_names) or [f"x{j + 1}" for j in range(x.shape[1])]
        if len(names) != x.shape[1]:
            raise DataError("covariate_names length does not match number of columns")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "Dataset":
        """Row subset/reorder preserving all metadata (used by resampling)."""
        idx = np.asarray(idx)
        return Dataset(
            x=self.x[idx],
            outcome=self.outcome.take(idx),
            trt=self.trt.take(idx),
            match_id=None if self.match_id is None else self.match_id[idx],
            larger_outcome_better=self.larger_outcome_better,
            covariate_names=self.covariate_names,
        )


def _parse_cell(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"non-numeric value {raw!r} at row {row}, column {col!r}") from None


def load_dataset(path, schema: dict) -> Dataset:
    """Read a headered CSV into a Dataset using a column-role schema.

    schema keys:
      outcome        -- {"value": col} or {"time": col, "status": col}
      outcome_type   -- 'continuous' (default), 'binary', 'count'; implied
                        'survival' when time/status given
      treatment      -- treatment column name
      reference      -- optional reference treatment level
      match_id       -- optional match-group column name
      covariates     -- optional ordered list of covariate columns
                        (default: all remaining columns)
      larger_outcome_better -- optional bool, default True
    """
    known = {"outcome", "outcome_type", "treatment", "reference", "match_id",
             "covariates", "larger_outcome_better"}
    unknown = set(schema) - known
    if unknown:
        raise DataError(f"unknown schema keys: {sorted(unknown)}")
    if "outcome" not in schema or "treatment" not in schema:
        raise DataError("schema must name 'outcome' and 'treatment' columns")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV file") from None
        rows = [r for r in reader if r]

    if not rows:
        raise DataError("CSV has a header but no data rows")
    colidx = {name: i for i, name in enumerate(header)}

    def col(name: str) -> list[str]:
        if name not in colidx:
            raise DataError(f"missing column {name!r}")
        j = colidx[name]
        out = []
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise DataError(f"row {i} has {len(r)} fields, expected {len(header)}")
            out.append(r[j])
        return out

    out_spec = schema["outcome"]
    if "time" in out_spec and "status" in out_spec:
        time = [_parse_cell(v, i, out_spec["time"]) for i, v in enumerate(col(out_spec["time"]))]
        status = [_parse_cell(v, i, out_spec["status"]) for i, v in enumerate(col(out_spec["status"]))]
        outcome = Outcome.survival(time, status)
        used = {out_spec["time"], out_spec["status"]}
    elif "value" in out_spec:
        kind = schema.get("outcome_type", "continuous")
        vals = [_parse_cell(v, i, out_spec["value"]) for i, v in enumerate(col(out_spec["value"]))]
        outcome = Outcome(kind, values=vals)
        used = {out_spec["value"]}
    else:
        raise DataError("schema['outcome'] must give 'value' or 'time'+'status'")

    trt_col = schema["treatment"]
    raw_trt = col(trt_col)
    # numeric-looking labels become integers, otherwise strings are kept
    def _label(v: str):
        try:
            f = float(v)
        except ValueError:
            return v
        if f != int(f):
            raise DataError(f"non-integer numeric treatment label {v!r}")
        return int(f)

    trt = TreatmentVector.from_labels([_label(v) for v in raw_trt],
                                      reference=schema.get("reference"))
    used.add(trt_col)

    match_id = None
    if schema.get("match_id"):
        match_id = np.asarray(col(schema["match_id"]), dtype=object)
        used.add(schema["match_id"])

    cov_names = schema.get("covariates")
    if cov_names is None:
        cov_names = [c for c in header if c not in used]
    if not cov_names:
        raise DataError("no covariate columns")
    xcols = []
    for name in cov_names:
        xcols.append([_parse_cell(v, i, name) for i, v in enumerate(col(name))])
    x = np.asarray(xcols, dtype=float).T

    return Dataset(
        x=x, outcome=outcome, trt=trt, match_id=match_id,
        larger_outcome_better=bool(schema.get("larger_outcome_better", True)),
        covariate_names=list(cov_names),
    )


def write_dataset(ds: Dataset, path) -> None:
    """Write a Dataset back to CSV (columns: outcome, treatment, match_id, covariates)."""
    header = []
    cols = []
    if ds.outcome.kind == "survival":
        header += ["time", "status"]
        cols += [ds.outcome.time, ds.outcome.status]
    else:
        header.append("y")
        cols.append(ds.outcome.values)
    header.append("trt")
    cols.append(ds.trt.labels)
    if ds.match_id is not None:
        header.append("match_id")
        cols.append(ds.match_id)
    header += ds.covariate_names
    cols += [ds.x[:, j] for j in range(ds.p)]

    def fmt(v) -> str:
        if isinstance(v, float) or isinstance(v, np.floating):
            return repr(float(v))
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            writer.writerow([fmt(c[i]) for c in cols])


def dataset_schema(ds: Dataset) -> dict:
    """Schema dict that load_dataset would need to re-read write_dataset output."""
    if ds.outcome.kind == "survival":
        outcome = {"time": "time", "status": "status"}
    else:
        outcome = {"value": "y"}
    schema = {
        "outcome": outcome,
        "outcome_type": ds.outcome.kind,
        "treatment": "trt",
        "reference": ds.trt.reference,
        "covariates": list(ds.covariate_names),
        "larger_outcome_better": ds.larger_outcome_better,
    }
    if ds.outcome.kind == "survival":
        schema.pop("outcome_type")
    if ds.match_id is not None:
        schema["match_id"] = "match_id"
    return schema
