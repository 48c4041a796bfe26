"""Cohort containers, CSV ingestion, design matrices and stratified folds."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
KINDS = (NUMERIC, CATEGORICAL)

DEFAULT_MISSING_TOKENS = ("", "NA")
DEFAULT_MAX_LEVELS = 64


class DataError(ValueError):
    """Raised for malformed cohorts, schemas or CSV files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureColumn:
    """One named feature.

    Numeric values are float64 with NaN in missing cells. Categorical values
    are int64 codes into ``levels`` with -1 in missing cells.
    """

    name: str
    kind: str
    values: np.ndarray
    missing_mask: np.ndarray
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown feature kind {self.kind!r} for {self.name}")
        values = np.asarray(self.values)
        mask = np.asarray(self.missing_mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise DataError(f"column {self.name}: values and missing_mask differ in length")
        if self.kind == NUMERIC:
            values = values.astype(np.float64, copy=True)
            values[mask] = np.nan
            if np.isnan(values[~mask]).any():
                raise DataError(f"column {self.name}: NaN outside the missing mask")
        else:
            values = values.astype(np.int64, copy=True)
            values[mask] = -1
            present = values[~mask]
            if present.size and (present.min() < 0 or present.max() >= len(self.levels)):
                raise DataError(f"column {self.name}: code outside the vocabulary")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing_mask", _frozen(mask))
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))

    @classmethod
    def categorical(cls, name: str, labels: Sequence, levels: Sequence | None = None) -> "FeatureColumn":
        """Build a categorical column from raw labels; ``None`` marks missing."""
        mask = np.array([v is None for v in labels], dtype=bool)
        if levels is None:
            levels = sorted({str(v) for v in labels if v is not None})
        index = {lv: k for k, lv in enumerate(levels)}
        try:
            codes = np.array([-1 if v is None else index[str(v)] for v in labels], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"column {name}: level {exc.args[0]!r} not in vocabulary") from None
        return cls(name, CATEGORICAL, codes, mask, tuple(levels))

    @classmethod
    def numeric(cls, name: str, values: Sequence[float]) -> "FeatureColumn":
        arr = np.asarray(values, dtype=np.float64)
        return cls(name, NUMERIC, arr, np.isnan(arr))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    def take(self, rows: np.ndarray) -> "FeatureColumn":
        return FeatureColumn(self.name, self.kind, self.values[rows], self.missing_mask[rows], self.levels)

    def labels(self) -> list:
        """Decoded per-row values (``None`` where missing)."""
        if self.is_numeric:
            return [None if m else float(v) for v, m in zip(self.values, self.missing_mask)]
        return [None if c < 0 else self.levels[c] for c in self.values]


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """Feature columns without a target; what prediction needs."""

    columns: tuple
    n: int

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> FeatureColumn:
        for c in self.columns:
            if c.name == name:
                return c
        raise DataError(f"feature {name!r} not in dataset")


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: tuple
    target: np.ndarray
    target_name: str = "target"
    labels: tuple = ("0", "1")

    def __post_init__(self):
        cols = tuple(self.columns)
        y = np.asarray(self.target)
        if y.ndim != 1:
            raise DataError("target must be one-dimensional")
        if not np.isin(y, (0, 1)).all():
            raise DataError("target must be binary 0/1 with no missing entries")
        for c in cols:
            if c.n != len(y):
                raise DataError(f"column {c.name} has {c.n} rows, target has {len(y)}")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise DataError("duplicate feature names")
        if self.target_name in names:
            raise DataError(f"target {self.target_name!r} also declared as a feature")
        if len(y) and (y.min() == y.max()):
            raise DataError("both target classes must be present")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "target", _frozen(y.astype(np.int64)))
        object.__setattr__(self, "labels", tuple(str(v) for v in self.labels))

    @property
    def n(self) -> int:
        return len(self.target)

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def n_positive(self) -> int:
        return int(self.target.sum())

    def column(self, name: str) -> FeatureColumn:
        for c in self.columns:
            if c.name == name:
                return c
        raise DataError(f"feature {name!r} not in dataset")

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(tuple(c.take(rows) for c in self.columns), self.target[rows],
                       self.target_name, self.labels)

    def frame(self, rows=None) -> FeatureFrame:
        """Features of ``rows`` (all rows by default), free of the two-class check."""
        if rows is None:
            return FeatureFrame(self.columns, self.n)
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureFrame(tuple(c.take(rows) for c in self.columns), len(rows))

    def drop_row(self, i: int) -> "Dataset":
        keep = np.delete(np.arange(self.n), i)
        return self.take(keep)

    def select(self, names: Iterable[str]) -> "Dataset":
        return Dataset(tuple(self.column(nm) for nm in names), self.target, self.target_name, self.labels)


# --------------------------------------------------------------------------
# schema + CSV


@dataclass
class Schema:
    """Feature kinds, target declaration and parsing options for one cohort."""

    features: dict
    target: str
    positive: str | None = None
    missing_tokens: tuple = DEFAULT_MISSING_TOKENS
    max_levels: int = DEFAULT_MAX_LEVELS

    def __post_init__(self):
        for name, kind in self.features.items():
            if kind not in KINDS:
                raise DataError(f"schema: feature {name!r} has unknown kind {kind!r}")

    @classmethod
    def from_file(cls, path) -> "Schema":
        """Read an INI schema with ``[target]``, ``[features]`` and optional ``[options]``."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise DataError(f"cannot read schema {path}: {exc}") from None
        if not parser.has_section("target") or "name" not in parser["target"]:
            raise DataError("schema: missing [target] name")
        if not parser.has_section("features"):
            raise DataError("schema: missing [features] section")
        opts = parser["options"] if parser.has_section("options") else {}
        missing = DEFAULT_MISSING_TOKENS
        if "missing" in opts:
            missing = tuple(t.strip() for t in opts["missing"].split(",")) + ("",)
        return cls(
            features={k: v.strip().lower() for k, v in parser["features"].items()},
            target=parser["target"]["name"].strip(),
            positive=parser["target"].get("positive"),
            missing_tokens=tuple(dict.fromkeys(missing)),
            max_levels=int(opts.get("max_levels", DEFAULT_MAX_LEVELS)),
        )

    def to_text(self) -> str:
        lines = ["[target]", f"name = {self.target}"]
        if self.positive is not None:
            lines.append(f"positive = {self.positive}")
        lines += ["", "[options]", "missing = " + ",".join(t for t in self.missing_tokens if t),
                  f"max_levels = {self.max_levels}", "", "[features]"]
        lines += [f"{k} = {v}" for k, v in self.features.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def for_dataset(cls, ds: Dataset) -> "Schema":
        return cls({c.name: c.kind for c in ds.columns}, ds.target_name, positive=ds.labels[1])


def load_csv(path, schema: Schema | Mapping[str, str], target_name: str | None = None) -> Dataset:
    """Parse a header-first, comma-separated UTF-8 file into a :class:`Dataset`.

    ``schema`` may be a :class:`Schema` or a plain ``{feature: kind}`` mapping,
    in which case ``target_name`` is required and the target must hold 0/1.
    """
    if not isinstance(schema, Schema):
        if target_name is None:
            raise DataError("target_name is required with a plain kind mapping")
        schema = Schema(dict(schema), target_name)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    for r_i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{r_i}: expected {len(header)} fields, got {len(r)}")
    pos = {h: k for k, h in enumerate(header)}
    for name in [schema.target, *schema.features]:
        if name not in pos:
            raise DataError(f"column {name!r} declared in schema is absent from the header")
    missing = set(schema.missing_tokens)

    raw_target = [r[pos[schema.target]].strip() for r in body]
    if any(t in missing for t in raw_target):
        raise DataError(f"target {schema.target!r} has missing entries")
    distinct = sorted(set(raw_target))
    if len(distinct) != 2:
        raise DataError(f"non-binary target {schema.target!r}: {len(distinct)} distinct values")
    positive = schema.positive
    if positive is None:
        if set(distinct) != {"0", "1"}:
            raise DataError("target labels are not 0/1; declare the positive label in the schema")
        positive = "1"
    positive = positive.strip()
    if positive not in distinct:
        raise DataError(f"positive label {positive!r} not found in target {schema.target!r}")
    negative = distinct[0] if distinct[1] == positive else distinct[1]
    y = np.array([1 if t == positive else 0 for t in raw_target], dtype=np.int64)

    columns = []
    for name, kind in schema.features.items():
        cells = [r[pos[name]].strip() for r in body]
        mask = np.array([c in missing for c in cells], dtype=bool)
        if kind == NUMERIC:
            vals = np.full(len(cells), np.nan)
            for k, c in enumerate(cells):
                if not mask[k]:
                    try:
                        vals[k] = float(c)
                    except ValueError:
                        raise DataError(f"column {name!r}: non-numeric value {c!r}") from None
            columns.append(FeatureColumn(name, NUMERIC, vals, mask))
        else:
            levels = sorted({c for c, m in zip(cells, mask) if not m})
            if len(levels) > schema.max_levels:
                raise DataError(f"column {name!r}: {len(levels)} levels exceeds cap {schema.max_levels}")
            columns.append(FeatureColumn.categorical(name, [None if m else c for c, m in zip(cells, mask)], levels))
    return Dataset(tuple(columns), y, schema.target, (negative, positive))


def to_csv_text(ds: Dataset, missing_token: str = "") -> str:
    """Canonical CSV serialization (also the basis of the dataset fingerprint)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*ds.feature_names, ds.target_name])
    decoded = [c.labels() for c in ds.columns]
    for i in range(ds.n):
        row = []
        for c, vals in zip(ds.columns, decoded):
            v = vals[i]
            row.append(missing_token if v is None else (repr(v) if c.is_numeric else v))
        row.append(ds.labels[ds.target[i]])
        w.writerow(row)
    return buf.getvalue()


def write_csv(ds: Dataset, path) -> None:
    Path(path).write_text(to_csv_text(ds), encoding="utf-8")


def fingerprint(ds: Dataset) -> str:
    return hashlib.sha256(to_csv_text(ds).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# folds


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of_row: np.ndarray
    K: int
    seed: int

    def train_test(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.fold_of_row == k
        return np.flatnonzero(~test), np.flatnonzero(test)


def default_fold_count(n: int) -> int:
    """``floor(n / 10)`` folds; cohorts under 20 rows are rejected."""
    if n < 20:
        raise DataError(f"cohort too small for protocol (n={n} < 20)")
    return n // 10


def stratified_folds(ds_or_y, K: int, seed: int) -> FoldAssignment:
    """Shuffle each class with a seeded permutation and deal rows round-robin.

    The negative class is dealt first; positives continue from the fold where
    the negatives stopped so that overall fold sizes stay within one row.
    """
    y = ds_or_y.target if isinstance(ds_or_y, Dataset) else np.asarray(ds_or_y)
    if K < 2:
        raise DataError("K must be at least 2")
    counts = np.bincount(y, minlength=2)
    if counts.min() < K:
        raise DataError(f"K={K} larger than minority-class count {counts.min()}")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    start = 0
    for cls in (0, 1):
        rows = np.flatnonzero(y == cls)
        rows = rows[rng.permutation(len(rows))]
        fold[rows] = (start + np.arange(len(rows))) % K
        start = (start + len(rows)) % K
    return FoldAssignment(_frozen(fold), K, seed)


def complete_features(ds: Dataset) -> list[str]:
    return [c.name for c in ds.columns if not c.missing_mask.any()]


# --------------------------------------------------------------------------
# design matrix


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Dense numeric design; ``matrix`` is standardized when ``standardized``.

    ``raw`` keeps the unstandardized values so callers can re-standardize on
    a subset of rows (cross-validation folds).
    """

    matrix: np.ndarray
    raw: np.ndarray
    column_map: tuple  # (feature name, level or None) per design column
    means: np.ndarray
    sds: np.ndarray
    standardized: bool
    dropped: tuple = ()
    features: tuple = ()

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def column_names(self) -> list[str]:
        return [f if lv is None else f"{f}={lv}" for f, lv in self.column_map]

    def transform(self, ds: Dataset) -> np.ndarray:
        """Raw design rows for ``ds`` using this design's columns.

        Missing cells take the training column mean, which is zero on the
        standardized scale.
        """
        fill = self.raw.mean(axis=0) if self.raw.shape[0] else np.zeros(len(self.column_map))
        out = np.empty((ds.n, len(self.column_map)))
        for j, (name, level) in enumerate(self.column_map):
            col = ds.column(name)
            if level is None:
                v = col.values.astype(np.float64)
            else:
                code = col.levels.index(level) if level in col.levels else -2
                v = (col.values == code).astype(np.float64)
            v = np.where(col.missing_mask, fill[j], v)
            out[:, j] = v
        return out


def _design_columns(ds: Dataset, features: Sequence[str]):
    cols, cmap = [], []
    for name in features:
        col = ds.column(name)
        if col.missing_mask.any():
            raise DataError(f"feature {name!r} has missing values; filter with complete_features")
        if col.is_numeric:
            cols.append(col.values.astype(np.float64))
            cmap.append((name, None))
        else:
            for code, level in enumerate(col.levels):
                cols.append((col.values == code).astype(np.float64))
                cmap.append((name, level))
    return cols, cmap


def build_design(ds: Dataset, features: Sequence[str], standardize: bool = True) -> DesignMatrix:
    """Numeric copy plus full one-hot encoding; optionally standardized.

    Constant columns are dropped (with a warning) and listed in ``dropped``.
    """
    cols, cmap = _design_columns(ds, features)
    raw = np.column_stack(cols) if cols else np.empty((ds.n, 0))
    means = raw.mean(axis=0) if raw.shape[1] else np.empty(0)
    sds = raw.std(axis=0) if raw.shape[1] else np.empty(0)
    keep = sds > 1e-12 * np.maximum(1.0, np.abs(means))
    dropped = tuple(nm for nm, k in zip([f if lv is None else f"{f}={lv}" for f, lv in cmap], keep) if not k)
    if dropped:
        warnings.warn(f"dropping constant design columns: {', '.join(dropped)}", stacklevel=2)
    raw = np.asfortranarray(raw[:, keep])
    cmap = [c for c, k in zip(cmap, keep) if k]
    means, sds = means[keep], sds[keep]
    if standardize:
        mat = np.asfortranarray((raw - means) / sds)
    else:
        mat = raw
        means, sds = np.zeros(raw.shape[1]), np.ones(raw.shape[1])
    return DesignMatrix(mat, raw, tuple(cmap), means, sds, standardize, dropped, tuple(features))
