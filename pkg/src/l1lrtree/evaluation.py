"""Decision thresholds, confusion counts, recall/specificity/accuracy and
binomial significance stars."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


@dataclass(frozen=True)
class DecisionConfig:
    threshold: float
    source: str = "fixed"  # "fixed" | "class_proportion"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie strictly inside (0, 1), got {self.threshold}")
        if self.source not in ("fixed", "class_proportion"):
            raise ValueError(f"unknown threshold source {self.source!r}")

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "source": self.source}


def classify(p_hat, cfg: DecisionConfig):
    """Class 1 iff ``p_hat`` is strictly above the threshold."""
    if np.ndim(p_hat) == 0:
        return int(p_hat > cfg.threshold)
    return (np.asarray(p_hat) > cfg.threshold).astype(np.int64)


def proportion_threshold(ds) -> DecisionConfig:
    """Threshold equal to the share of class-1 rows."""
    y = np.asarray(getattr(ds, "target", ds))
    pos = int(y.sum())
    if pos == 0 or pos == len(y):
        raise ValueError("proportion threshold needs both classes")
    return DecisionConfig(pos / len(y), "class_proportion")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def n(self) -> int:
        return self.positives + self.negatives


def confusion(decisions, truths) -> ConfusionCounts:
    d = np.asarray(decisions)
    t = np.asarray(truths)
    if d.shape != t.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {t.shape}")
    return ConfusionCounts(
        tp=int(np.sum((d == 1) & (t == 1))),
        fn=int(np.sum((d == 0) & (t == 1))),
        tn=int(np.sum((d == 0) & (t == 0))),
        fp=int(np.sum((d == 1) & (t == 0))),
    )


def stars(p_value: float) -> str:
    for cut, mark in STAR_LEVELS:
        if p_value <= cut:
            return mark
    return ""


def binomial_significance(k: int, n: int, p0: float = 0.5) -> tuple[float, str]:
    """One-sided upper-tail ``P(X >= k)`` for ``X ~ Binomial(n, p0)`` and its stars.

    The tail is accumulated in log space from log-factorials.
    """
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    if k == 0:
        return 1.0, stars(1.0)
    lf_n = math.lgamma(n + 1)
    lp, lq = math.log(p0), math.log1p(-p0)
    terms = [lf_n - math.lgamma(x + 1) - math.lgamma(n - x + 1) + x * lp + (n - x) * lq
             for x in range(k, n + 1)]
    top = max(terms)
    p = math.exp(top) * math.fsum(math.exp(t - top) for t in terms)
    p = min(1.0, p)
    return p, stars(p)


@dataclass(frozen=True)
class ScoreBlock:
    recall: float
    specificity: float
    accuracy: float
    counts: ConfusionCounts
    recall_p: float | None = None
    specificity_p: float | None = None
    recall_stars: str = ""
    specificity_stars: str = ""

    def to_dict(self) -> dict:
        c = self.counts
        return {
            "recall": self.recall,
            "recall_exact": f"{c.tp}/{c.positives}",
            "recall_p": self.recall_p,
            "recall_stars": self.recall_stars,
            "specificity": self.specificity,
            "specificity_exact": f"{c.tn}/{c.negatives}",
            "specificity_p": self.specificity_p,
            "specificity_stars": self.specificity_stars,
            "accuracy": self.accuracy,
            "accuracy_exact": str((Fraction(c.tp, c.positives) + Fraction(c.tn, c.negatives)) / 2),
            "counts": {"tp": c.tp, "fn": c.fn, "tn": c.tn, "fp": c.fp},
        }


def scores(c: ConfusionCounts) -> ScoreBlock:
    if c.positives < 1 or c.negatives < 1:
        raise ValueError("scores need at least one positive and one negative")
    recall = c.tp / c.positives
    spec = c.tn / c.negatives
    return ScoreBlock(recall, spec, (recall + spec) / 2, c)


def score_with_significance(c: ConfusionCounts, p0: float = 0.5) -> ScoreBlock:
    base = scores(c)
    rp, rs = binomial_significance(c.tp, c.positives, p0)
    sp, ss = binomial_significance(c.tn, c.negatives, p0)
    return ScoreBlock(base.recall, base.specificity, base.accuracy, c, rp, sp, rs, ss)


def evaluate(p_hat, truths, cfg: DecisionConfig, p0: float = 0.5) -> ScoreBlock:
    """Threshold held-out probabilities and score them."""
    return score_with_significance(confusion(classify(np.asarray(p_hat), cfg), truths), p0)


def percent(x: float) -> str:
    """Half-up rounding to two decimals of a percentage."""
    return str(Decimal(repr(100.0 * x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
