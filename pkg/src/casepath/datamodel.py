"""Case-record schema, percentile/one-hot feature transforms, and panel IO.

The unit of data is a student-by-cohort-year record. Numeric features are
converted to within-cohort-year midrank percentiles before any modeling;
categoricals are one-hot expanded so downstream trees only ever need
numeric <=/> comparisons.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

LABEL_GRAD = "Grad4yr"
LABEL_ATRISK = "NoGrad4yr"
OUTCOME_LABELS = (LABEL_GRAD, LABEL_ATRISK)

COHORT_YEARS = (1, 2, 3, 4)

KIND_NUMERIC = "numeric"
KIND_CATEGORICAL = "categorical"

EFFECT_PLUS = "plus"
EFFECT_MINUS = "minus"
EFFECT_MIXED = "mixed"

STATIC_BLOCKS = ("A", "B")
PANEL_BLOCKS = ("C", "D", "E")

MISSING_POLICIES = ("median_indicator", "median_only")


class SchemaError(ValueError):
    """A schema definition or schema-conformance problem."""


class PanelFormatError(ValueError):
    """A malformed panel file or malformed record."""


@dataclass(frozen=True)
class FeatureSpec:
    """One predictor: its name, type, block, domain, and expected direction."""

    name: str
    kind: str
    block: str
    categories: tuple[str, ...] = ()
    expected_effect: str = EFFECT_MIXED

    def __post_init__(self) -> None:
        if self.kind not in (KIND_NUMERIC, KIND_CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.block not in STATIC_BLOCKS + PANEL_BLOCKS:
            raise SchemaError(f"unknown block {self.block!r} for {self.name!r}")
        if self.expected_effect not in (EFFECT_PLUS, EFFECT_MINUS, EFFECT_MIXED):
            raise SchemaError(f"unknown expected_effect {self.expected_effect!r}")
        if self.kind == KIND_CATEGORICAL and len(self.categories) < 2:
            raise SchemaError(f"categorical feature {self.name!r} needs >= 2 categories")
        if self.kind == KIND_NUMERIC and self.categories:
            raise SchemaError(f"numeric feature {self.name!r} cannot list categories")

    @property
    def is_static(self) -> bool:
        return self.block in STATIC_BLOCKS


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature definitions; order fixes all derived column orders."""

    entries: tuple[FeatureSpec, ...]

    def __post_init__(self) -> None:
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> FeatureSpec:
        for e in self.entries:
            if e.name == name:
                return e
        raise SchemaError(f"unknown feature {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    def static_names(self) -> list[str]:
        return [e.name for e in self.entries if e.is_static]

    def panel_names(self) -> list[str]:
        return [e.name for e in self.entries if not e.is_static]

    def to_dict(self) -> dict:
        return {
            "entries": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "block": e.block,
                    "categories": list(e.categories),
                    "expected_effect": e.expected_effect,
                }
                for e in self.entries
            ]
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureSchema":
        try:
            raw_entries = payload["entries"]
        except (KeyError, TypeError):
            raise SchemaError("schema file must be an object with an 'entries' list")
        entries = []
        for raw in raw_entries:
            entries.append(
                FeatureSpec(
                    name=raw["name"],
                    kind=raw["kind"],
                    block=raw["block"],
                    categories=tuple(raw.get("categories", ())),
                    expected_effect=raw.get("expected_effect", EFFECT_MIXED),
                )
            )
        return cls(entries=tuple(entries))

    @classmethod
    def from_json_file(cls, path: str) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def default_schema() -> FeatureSchema:
    """The stock predictor set: five blocks of demographic, pre-college,
    academic-progress, financial, and institutional variables."""
    n, c = KIND_NUMERIC, KIND_CATEGORICAL
    entries = (
        # A. Demographic & background (static)
        FeatureSpec("gender", c, "A", ("Female", "Male", "Other"), EFFECT_MIXED),
        FeatureSpec("scholar_ethnicity", c, "A", ("Hispanic or Latino", "Not Hispanic or Latino"), EFFECT_MIXED),
        FeatureSpec("scholar_race", c, "A", ("Asian", "Black or African American", "White", "Multiracial", "Other"), EFFECT_MIXED),
        FeatureSpec("citizenship", c, "A", ("US Citizen", "Permanent Resident", "Other"), EFFECT_PLUS),
        FeatureSpec("has_children", c, "A", ("No", "Yes"), EFFECT_MINUS),
        FeatureSpec("numberotherdependents", n, "A", (), EFFECT_MINUS),
        # B. Pre-college academic profile (static)
        FeatureSpec("highschoolgpa_pct", n, "B", (), EFFECT_PLUS),
        FeatureSpec("readeracademicscore", n, "B", (), EFFECT_PLUS),
        FeatureSpec("readertotalscore", n, "B", (), EFFECT_PLUS),
        FeatureSpec("finalacademicscore", n, "B", (), EFFECT_PLUS),
        FeatureSpec("finaltotalscore", n, "B", (), EFFECT_PLUS),
        # C. Academic progress (panel)
        FeatureSpec("gpacumulativecurrent", n, "C", (), EFFECT_PLUS),
        FeatureSpec("hoursattempted", n, "C", (), EFFECT_PLUS),
        FeatureSpec("hourscompleted", n, "C", (), EFFECT_PLUS),
        FeatureSpec("creditsTowardsdegree", n, "C", (), EFFECT_PLUS),
        FeatureSpec("totalcreditsneeded", n, "C", (), EFFECT_MINUS),
        FeatureSpec("enrollment", c, "C", ("Full Time", "Not Enrolled", "Part Time"), EFFECT_PLUS),
        FeatureSpec("changed_enrollment_type", c, "C", ("No", "Yes"), EFFECT_MINUS),
        # D. Financial circumstances (panel)
        FeatureSpec("costofattendance", n, "D", (), EFFECT_MINUS),
        FeatureSpec("efcamount", n, "D", (), EFFECT_PLUS),
        FeatureSpec("grantaid", n, "D", (), EFFECT_PLUS),
        FeatureSpec("loanamountoffered", n, "D", (), EFFECT_MIXED),
        FeatureSpec("loanamountaccepted", n, "D", (), EFFECT_MIXED),
        FeatureSpec("totalloandebt", n, "D", (), EFFECT_MINUS),
        # E. Institutional context (panel)
        FeatureSpec("collegesector", c, "E", ("Public", "Private Nonprofit", "Private For-Profit"), EFFECT_MIXED),
        FeatureSpec("collegetype", c, "E", ("2-yr", "4-yr", "Mixed"), EFFECT_MIXED),
        FeatureSpec("areaofstudy", c, "E", ("STEM", "Business", "Health", "Liberal Arts", "Education", "Other"), EFFECT_MIXED),
        FeatureSpec("persistrategyoy_any", c, "E", ("No", "Yes"), EFFECT_PLUS),
        FeatureSpec("persistrategyoy_ft2ft", c, "E", ("No", "Yes"), EFFECT_PLUS),
    )
    return FeatureSchema(entries=entries)


@dataclass(frozen=True)
class StudentRecord:
    """One student in one cohort year. Missing values are None."""

    student_id: str
    cohort_year: int
    static_fields: dict
    panel_fields: dict
    outcome: Optional[str] = None

    def value(self, name: str, schema: FeatureSchema):
        spec = schema.get(name)
        return self.static_fields.get(name) if spec.is_static else self.panel_fields.get(name)


def validate_record(record: StudentRecord, schema: FeatureSchema, where: str = "") -> None:
    ctx = f" ({where})" if where else ""
    if record.cohort_year not in COHORT_YEARS:
        raise PanelFormatError(f"cohort_year {record.cohort_year!r} outside 1..4{ctx}")
    if record.outcome is not None and record.outcome not in OUTCOME_LABELS:
        raise PanelFormatError(f"outcome {record.outcome!r} not in {OUTCOME_LABELS}{ctx}")
    for fields, static in ((record.static_fields, True), (record.panel_fields, False)):
        for name, value in fields.items():
            if name not in schema:
                raise SchemaError(f"field {name!r} not in schema{ctx}")
            spec = schema.get(name)
            if spec.is_static != static:
                side = "static" if static else "panel"
                raise SchemaError(f"feature {name!r} placed in {side} fields but belongs to block {spec.block}{ctx}")
            if value is None:
                continue
            if spec.kind == KIND_NUMERIC:
                if not isinstance(value, (int, float)) or not np.isfinite(value):
                    raise PanelFormatError(f"non-finite or non-numeric value {value!r} for {name!r}{ctx}")
            else:
                if value not in spec.categories:
                    raise PanelFormatError(
                        f"value {value!r} for {name!r} outside categories {list(spec.categories)}{ctx}"
                    )


@dataclass(frozen=True)
class CohortPanel:
    """Validated collection of records; (student_id, cohort_year) unique."""

    records: tuple[StudentRecord, ...]
    schema: FeatureSchema

    def __post_init__(self) -> None:
        seen = set()
        for i, rec in enumerate(self.records):
            key = (rec.student_id, rec.cohort_year)
            if key in seen:
                raise PanelFormatError(f"duplicate (student_id, cohort_year) {key} at record {i}")
            seen.add(key)
            validate_record(rec, self.schema, where=f"record {i}, student {rec.student_id}")

    def for_year(self, cohort_year: int) -> list[StudentRecord]:
        return [r for r in self.records if r.cohort_year == cohort_year]

    def years_for(self, student_id: str) -> list[int]:
        return sorted(r.cohort_year for r in self.records if r.student_id == student_id)

    def record_for(self, student_id: str, cohort_year: int) -> StudentRecord:
        for r in self.records:
            if r.student_id == student_id and r.cohort_year == cohort_year:
                return r
        raise KeyError(f"no record for ({student_id!r}, {cohort_year})")

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# Percentile transform
# ---------------------------------------------------------------------------

def percentile_transform(values: Sequence[Optional[float]]) -> list[Optional[float]]:
    """Map each non-missing value to its midrank percentile 100*(r-0.5)/n.

    r is the average rank among the n non-missing values, so ties share a
    percentile and outputs always stay strictly inside (0, 100).
    """
    present_idx = [i for i, v in enumerate(values) if v is not None]
    if not present_idx:
        raise PanelFormatError("cannot percentile-transform an all-missing column")
    present = np.asarray([values[i] for i in present_idx], dtype=float)
    ranks = rankdata(present, method="average")
    pct = 100.0 * (ranks - 0.5) / len(present)
    out: list[Optional[float]] = [None] * len(values)
    for pos, i in enumerate(present_idx):
        out[i] = float(pct[pos])
    return out


@dataclass(frozen=True)
class FittedPercentile:
    """Percentile map frozen on training values, applicable to unseen data."""

    sorted_values: np.ndarray

    @classmethod
    def fit(cls, values: Iterable[Optional[float]]) -> "FittedPercentile":
        present = np.asarray([v for v in values if v is not None], dtype=float)
        if present.size == 0:
            raise PanelFormatError("cannot fit a percentile map on an all-missing column")
        return cls(sorted_values=np.sort(present))

    def apply(self, value: float) -> float:
        sv = self.sorted_values
        n = sv.size
        lo = int(np.searchsorted(sv, value, side="left"))
        hi = int(np.searchsorted(sv, value, side="right"))
        eq = hi - lo
        rank = lo + (eq + 1) / 2.0 if eq else lo + 0.5
        return float(100.0 * (rank - 0.5) / n)


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixSource:
    """Raw inputs kept with a matrix so folds can refit transforms leak-free."""

    records: tuple[StudentRecord, ...]
    schema: FeatureSchema
    missing_policy: str


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]
    cohort_year: int
    labels: Optional[np.ndarray] = None
    row_ids: tuple[str, ...] = ()
    source: Optional[MatrixSource] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("matrix values must be 2-D")
        if self.labels is not None and len(self.labels) != self.values.shape[0]:
            raise ValueError("label count must equal row count")

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.values.shape[1])


class MatrixBuilder:
    """Fits per-feature transforms on one cohort year's records, then maps
    any records (same year, held-out, or scoring-only) into a FeatureMatrix.

    Numeric features become fitted midrank percentiles; under the default
    'median_indicator' policy a missing numeric is imputed at percentile 50
    and, when the fitted data itself had missing values, a 0/1 was-missing
    indicator column is added so trees can split on missingness.
    """

    def __init__(self, schema: FeatureSchema, cohort_year: int, missing_policy: str = "median_indicator"):
        if missing_policy not in MISSING_POLICIES:
            raise ValueError(f"unknown missing policy {missing_policy!r}; expected one of {MISSING_POLICIES}")
        if cohort_year not in COHORT_YEARS:
            raise ValueError(f"cohort_year {cohort_year!r} outside 1..4")
        self.schema = schema
        self.cohort_year = cohort_year
        self.missing_policy = missing_policy
        self._percentiles: dict[str, FittedPercentile] = {}
        self._indicator_features: list[str] = []
        self._fitted = False

    def fit(self, records: Sequence[StudentRecord]) -> "MatrixBuilder":
        if not records:
            raise PanelFormatError(f"no records for cohort year {self.cohort_year}")
        self._percentiles.clear()
        self._indicator_features = []
        for spec in self.schema.entries:
            if spec.kind != KIND_NUMERIC:
                continue
            col = [r.value(spec.name, self.schema) for r in records]
            try:
                self._percentiles[spec.name] = FittedPercentile.fit(col)
            except PanelFormatError:
                raise PanelFormatError(
                    f"numeric feature {spec.name!r} is all-missing in cohort year {self.cohort_year}"
                )
            if self.missing_policy == "median_indicator" and any(v is None for v in col):
                self._indicator_features.append(spec.name)
        self._fitted = True
        return self

    def column_names(self) -> tuple[str, ...]:
        self._require_fitted()
        names: list[str] = []
        for spec in self.schema.entries:
            if spec.kind == KIND_NUMERIC:
                names.append(spec.name)
                if spec.name in self._indicator_features:
                    names.append(f"{spec.name}__missing")
            else:
                names.extend(f"{spec.name}={cat}" for cat in spec.categories)
        return tuple(names)

    def transform(self, records: Sequence[StudentRecord]) -> FeatureMatrix:
        self._require_fitted()
        names = self.column_names()
        n, p = len(records), len(names)
        values = np.zeros((n, p), dtype=float)
        col = 0
        for spec in self.schema.entries:
            if spec.kind == KIND_NUMERIC:
                fitted = self._percentiles[spec.name]
                has_indicator = spec.name in self._indicator_features
                for i, rec in enumerate(records):
                    v = rec.value(spec.name, self.schema)
                    if v is None:
                        values[i, col] = 50.0
                        if has_indicator:
                            values[i, col + 1] = 1.0
                    else:
                        values[i, col] = fitted.apply(float(v))
                col += 2 if has_indicator else 1
            else:
                for i, rec in enumerate(records):
                    v = rec.value(spec.name, self.schema)
                    if v is None:
                        continue
                    values[i, col + spec.categories.index(v)] = 1.0
                col += len(spec.categories)
        labels = None
        if records and all(r.outcome is not None for r in records):
            labels = np.asarray([1 if r.outcome == LABEL_ATRISK else 0 for r in records], dtype=np.int64)
        return FeatureMatrix(
            values=values,
            column_names=names,
            cohort_year=self.cohort_year,
            labels=labels,
            row_ids=tuple(r.student_id for r in records),
            source=MatrixSource(tuple(records), self.schema, self.missing_policy),
        )

    def to_dict(self) -> dict:
        self._require_fitted()
        return {
            "cohort_year": self.cohort_year,
            "missing_policy": self.missing_policy,
            "schema": self.schema.to_dict(),
            "percentiles": {k: v.sorted_values.tolist() for k, v in self._percentiles.items()},
            "indicator_features": list(self._indicator_features),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MatrixBuilder":
        builder = cls(
            schema=FeatureSchema.from_dict(payload["schema"]),
            cohort_year=payload["cohort_year"],
            missing_policy=payload["missing_policy"],
        )
        builder._percentiles = {
            k: FittedPercentile(sorted_values=np.asarray(v, dtype=float))
            for k, v in payload["percentiles"].items()
        }
        builder._indicator_features = list(payload["indicator_features"])
        builder._fitted = True
        return builder

    def _require_fitted(self) -> None:
        if not self._fitted:
            raise RuntimeError("MatrixBuilder used before fit()")


def build_matrix(panel: CohortPanel, cohort_year: int, missing_policy: str = "median_indicator") -> FeatureMatrix:
    """Percentile + one-hot matrix for one cohort year, fitted in-sample."""
    records = panel.for_year(cohort_year)
    builder = MatrixBuilder(panel.schema, cohort_year, missing_policy).fit(records)
    return builder.transform(records)


# ---------------------------------------------------------------------------
# Panel file IO (comma-delimited, "" = missing, leading '#' lines skipped)
# ---------------------------------------------------------------------------

ID_COLUMNS = ("student_id", "cohort_year", "outcome")


def load_panel(path: str, schema: FeatureSchema) -> CohortPanel:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise PanelFormatError(f"{path}: empty file")
    expected = list(ID_COLUMNS) + schema.names()
    unknown = [h for h in header if h not in expected]
    if unknown:
        raise PanelFormatError(f"{path}: unknown column {unknown[0]!r}")
    missing_cols = [c for c in expected if c not in header]
    if missing_cols:
        raise PanelFormatError(f"{path}: missing column {missing_cols[0]!r}")
    idx = {h: i for i, h in enumerate(header)}

    records = []
    for row_num, row in enumerate(reader, start=1):
        if len(row) != len(header):
            raise PanelFormatError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
        cells = {h: (row[idx[h]].strip() if row[idx[h]].strip() != "" else None) for h in header}
        try:
            cohort_year = int(cells["cohort_year"]) if cells["cohort_year"] is not None else -1
        except ValueError:
            raise PanelFormatError(f"{path}: row {row_num}: cohort_year {cells['cohort_year']!r} not an integer")
        if cells["student_id"] is None:
            raise PanelFormatError(f"{path}: row {row_num}: missing student_id")
        static_fields: dict = {}
        panel_fields: dict = {}
        for spec in schema.entries:
            raw = cells[spec.name]
            if raw is None:
                value = None
            elif spec.kind == KIND_NUMERIC:
                try:
                    value = float(raw)
                except ValueError:
                    raise PanelFormatError(
                        f"{path}: row {row_num}: non-numeric value {raw!r} in numeric column {spec.name!r}"
                    )
            else:
                value = raw
            (static_fields if spec.is_static else panel_fields)[spec.name] = value
        record = StudentRecord(
            student_id=cells["student_id"],
            cohort_year=cohort_year,
            static_fields=static_fields,
            panel_fields=panel_fields,
            outcome=cells["outcome"],
        )
        try:
            validate_record(record, schema, where=f"row {row_num}")
        except (SchemaError, PanelFormatError) as exc:
            raise PanelFormatError(f"{path}: {exc}") from exc
        records.append(record)
    return CohortPanel(records=tuple(records), schema=schema)


def save_panel(panel: CohortPanel, path: str, header_comment: Optional[str] = None) -> None:
    names = panel.schema.names()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(ID_COLUMNS) + names)
        for rec in panel.records:
            row = [rec.student_id, str(rec.cohort_year), rec.outcome or ""]
            for name in names:
                v = rec.value(name, panel.schema)
                if v is None:
                    row.append("")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(str(v))
            writer.writerow(row)
