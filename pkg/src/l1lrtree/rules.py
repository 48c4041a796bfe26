"""Rule sets read off trees: one conjunction per leaf, canonical per-feature
intervals and level sets, validation and markdown rendering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import NUMERIC, Dataset, FeatureColumn
from .evaluation import DecisionConfig, classify

INF = math.inf

MISSING_FOOTNOTE = ("Rows with a missing value on a tested feature are routed by surrogate "
                    "splits (or the majority direction) and fall outside these rules.")


@dataclass(frozen=True)
class Condition:
    """Interval on a numeric feature or level set on a categorical one.

    Intervals default to the tree convention ``lo < x <= hi``.
    """

    feature: str
    lo: float = -INF
    hi: float = INF
    lo_closed: bool = False
    hi_closed: bool = True
    levels: frozenset | None = None

    def __post_init__(self):
        if self.levels is not None:
            object.__setattr__(self, "levels", frozenset(str(v) for v in self.levels))
            if not self.levels:
                raise ValueError(f"empty level set for {self.feature}")
        elif not self.lo < self.hi:
            raise ValueError(f"empty interval for {self.feature}: {self.lo} .. {self.hi}")

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None

    @classmethod
    def below(cls, feature, t, closed=True):
        return cls(feature, hi=float(t), hi_closed=closed)

    @classmethod
    def above(cls, feature, t, closed=False):
        return cls(feature, lo=float(t), lo_closed=closed)

    @classmethod
    def within(cls, feature, levels):
        return cls(feature, levels=frozenset(levels))

    def intersect(self, other: "Condition") -> "Condition":
        if other.feature != self.feature or other.is_categorical != self.is_categorical:
            raise ValueError("conditions on different features or kinds")
        if self.is_categorical:
            return Condition(self.feature, levels=self.levels & other.levels)
        if self.lo > other.lo or (self.lo == other.lo and not self.lo_closed):
            lo, lo_c = self.lo, self.lo_closed
        else:
            lo, lo_c = other.lo, other.lo_closed
        if self.hi < other.hi or (self.hi == other.hi and not self.hi_closed):
            hi, hi_c = self.hi, self.hi_closed
        else:
            hi, hi_c = other.hi, other.hi_closed
        return Condition(self.feature, lo, hi, lo_c, hi_c)

    def matches(self, column: FeatureColumn) -> np.ndarray:
        """Vectorized test; missing cells never match."""
        if self.is_categorical:
            codes = [k for k, lv in enumerate(column.levels) if lv in self.levels]
            hit = np.isin(column.values, codes)
        else:
            v = column.values
            with np.errstate(invalid="ignore"):
                lo_ok = v >= self.lo if self.lo_closed else v > self.lo
                hi_ok = v <= self.hi if self.hi_closed else v < self.hi
            hit = lo_ok & hi_ok
        return hit & ~column.missing_mask

    def matches_value(self, value) -> bool:
        if value is None:
            return False
        if self.is_categorical:
            return str(value) in self.levels
        lo_ok = value >= self.lo if self.lo_closed else value > self.lo
        hi_ok = value <= self.hi if self.hi_closed else value < self.hi
        return bool(lo_ok and hi_ok)

    def sort_key(self):
        if self.is_categorical:
            return (self.feature, 1, tuple(sorted(self.levels)), 0.0)
        return (self.feature, 0, (), self.lo if self.lo > -INF else self.hi)

    def render(self, fmt=None) -> str:
        fmt = fmt or _fmt
        f = self.feature
        if self.is_categorical:
            lv = sorted(self.levels)
            return f"{f} = {lv[0]}" if len(lv) == 1 else f"{f} ∈ {{{', '.join(lv)}}}"
        if self.lo == -INF:
            return f"{f} {'≤' if self.hi_closed else '<'} {fmt(self.hi)}"
        if self.hi == INF:
            return f"{f} {'≥' if self.lo_closed else '>'} {fmt(self.lo)}"
        return (f"{fmt(self.lo)} {'≤' if self.lo_closed else '<'} {f} "
                f"{'≤' if self.hi_closed else '<'} {fmt(self.hi)}")

    def to_dict(self) -> dict:
        if self.is_categorical:
            return {"feature": self.feature, "in": sorted(self.levels)}
        return {"feature": self.feature, "lo": None if self.lo == -INF else self.lo,
                "hi": None if self.hi == INF else self.hi,
                "lo_closed": self.lo_closed, "hi_closed": self.hi_closed}

    @classmethod
    def from_dict(cls, d: dict) -> "Condition":
        unknown = set(d) - CONDITION_KEYS
        if unknown:
            raise ValueError(f"condition on {d.get('feature')!r} has unknown keys {sorted(unknown)}")
        if "in" in d:
            return cls.within(d["feature"], d["in"])
        lo = -INF if d.get("lo") is None else float(d["lo"])
        hi = INF if d.get("hi") is None else float(d["hi"])
        return cls(d["feature"], lo, hi, bool(d.get("lo_closed", False)), bool(d.get("hi_closed", True)))


CONDITION_KEYS = {"feature", "in", "lo", "hi", "lo_closed", "hi_closed"}


def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), precision=6, trim="-")


def canonicalize(conditions: Sequence[Condition]) -> tuple:
    """Intersect conjuncts per feature, keeping first-appearance order."""
    merged: dict[str, Condition] = {}
    for c in conditions:
        merged[c.feature] = merged[c.feature].intersect(c) if c.feature in merged else c
    return tuple(merged.values())


@dataclass(frozen=True)
class Rule:
    conditions: tuple
    predicted_class: int
    leaf_prob: float = float("nan")
    support: int = 0

    def matches(self, ds: Dataset) -> np.ndarray:
        hit = np.ones(ds.n, dtype=bool)
        for c in self.conditions:
            hit &= c.matches(ds.column(c.feature))
        return hit

    def matches_row(self, row: dict) -> bool:
        return all(c.matches_value(row.get(c.feature)) for c in self.conditions)

    def render(self, fmt=None) -> str:
        return ", ".join(c.render(fmt) for c in self.conditions) if self.conditions else "always"

    def to_dict(self) -> dict:
        return {"conditions": [c.to_dict() for c in self.conditions], "class": self.predicted_class,
                "leaf_prob": None if math.isnan(self.leaf_prob) else self.leaf_prob, "support": self.support}

    @classmethod
    def from_dict(cls, d: dict) -> "Rule":
        prob = d.get("leaf_prob")
        return cls(tuple(Condition.from_dict(c) for c in d["conditions"]), int(d["class"]),
                   float("nan") if prob is None else float(prob), int(d.get("support", 0)))


@dataclass(eq=False)
class RuleSet:
    rules: list
    threshold: float | None
    features: tuple
    tree: object = field(default=None, repr=False)

    def match_matrix(self, ds: Dataset) -> np.ndarray:
        return np.vstack([r.matches(ds) for r in self.rules]) if self.rules else np.zeros((0, ds.n), bool)

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        """Leaf probability of the first matching rule (NaN when none matches)."""
        M = self.match_matrix(ds)
        probs = np.array([r.leaf_prob for r in self.rules])
        out = np.full(ds.n, np.nan)
        hit = M.any(axis=0)
        out[hit] = probs[np.argmax(M[:, hit], axis=0)]
        return out

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "features": list(self.features),
                "rules": [r.to_dict() for r in sorted_rules(self)]}


def rules_from_tree(tree, cfg: DecisionConfig) -> RuleSet:
    """One canonical rule per leaf of ``tree``."""
    out = []

    def descend(node, path):
        if node.is_leaf:
            out.append(Rule(canonicalize(path), classify(node.prob, cfg), node.prob, node.n))
            return
        sp = node.split
        if sp.kind == NUMERIC:
            left = Condition.below(sp.feature, sp.threshold)
            right = Condition.above(sp.feature, sp.threshold)
        else:
            vocab = frozenset(tree.levels[sp.feature])
            left = Condition.within(sp.feature, sp.left_levels)
            right = Condition.within(sp.feature, vocab - sp.left_levels)
        descend(node.left, path + [left])
        descend(node.right, path + [right])

    descend(tree.root, [])
    return RuleSet(out, cfg.threshold, tuple(tree.features), tree)


def _complete_rows(rs: RuleSet, ds: Dataset) -> np.ndarray:
    miss = np.zeros(ds.n, dtype=bool)
    for name in rs.features:
        miss |= ds.column(name).missing_mask
    return ~miss


def validate(rs: RuleSet, ds: Dataset, tree=None) -> dict:
    """Check exactly-one-rule coverage and agreement with the source tree.

    Rows missing any feature of the universe are excluded and listed.
    """
    from .tree import predict

    tree = tree if tree is not None else rs.tree
    complete = _complete_rows(rs, ds)
    M = rs.match_matrix(ds)
    hits = M.sum(axis=0)
    idx = np.flatnonzero(complete)
    report = {
        "checked": int(complete.sum()),
        "excluded_missing": np.flatnonzero(~complete).tolist(),
        "no_rule": idx[hits[idx] == 0].tolist(),
        "several_rules": idx[hits[idx] > 1].tolist(),
        "prediction_mismatch": [],
    }
    if tree is not None and len(idx):
        sub = ds.frame(idx)
        tp = predict(tree, sub)
        rp = rs.predict_proba(sub)
        cls_ok = np.array([r.predicted_class for r in rs.rules])
        bad = tp != rp
        if rs.threshold is not None and len(rs.rules):
            first = np.argmax(M[:, idx], axis=0)
            bad |= cls_ok[first] != (tp > rs.threshold).astype(int)
        report["prediction_mismatch"] = idx[bad].tolist()
    report["ok"] = not (report["no_rule"] or report["several_rules"] or report["prediction_mismatch"])
    return report


def sorted_rules(rs: RuleSet) -> list:
    return sorted(rs.rules, key=lambda r: tuple(c.sort_key() for c in r.conditions))


def render(rs: RuleSet, class_names: Sequence[str] = ("Class 0", "Class 1"), fmt=None) -> str:
    """Two-column markdown table, class-0 rules left and class-1 rules right."""
    ordered = sorted_rules(rs)
    cols = [[r.render(fmt) for r in ordered if r.predicted_class == k] for k in (0, 1)]
    depth = max(len(cols[0]), len(cols[1]), 1)
    lines = [f"| {class_names[0]} | {class_names[1]} |", "|---|---|"]
    for i in range(depth):
        a = cols[0][i] if i < len(cols[0]) else ""
        b = cols[1][i] if i < len(cols[1]) else ""
        lines.append(f"| {a} | {b} |")
    if rs.threshold is not None:
        lines.append("")
        lines.append(f"Probability threshold: {_fmt(rs.threshold)}. {MISSING_FOOTNOTE}")
    return "\n".join(lines) + "\n"
