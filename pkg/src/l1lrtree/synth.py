"""Seeded synthetic cohorts whose target follows a known rule list."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .data import CATEGORICAL, NUMERIC, DataError, Dataset, FeatureColumn, FeatureFrame
from .rules import Condition, Rule


@dataclass(frozen=True)
class FeatureSpec:
    """Distribution of one synthetic feature.

    Numeric ``dist`` is one of ``normal(a=mean, b=sd)``, ``uniform(a, b)``,
    ``lognormal(a=mu, b=sigma)`` or ``integers(a, b)`` (inclusive), clipped to
    ``[lower, upper]`` and rounded to ``decimals`` when given. Categorical
    features draw ``levels`` with ``probs``.
    """

    name: str
    kind: str = NUMERIC
    dist: str = "normal"
    a: float = 0.0
    b: float = 1.0
    lower: float | None = None
    upper: float | None = None
    decimals: int | None = None
    levels: tuple = ()
    probs: tuple | None = None
    missing: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.missing < 1.0:
            raise DataError(f"{self.name}: missingness rate must lie in [0, 1)")
        if self.kind == CATEGORICAL and not self.levels:
            raise DataError(f"{self.name}: categorical feature needs levels")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == CATEGORICAL:
            probs = None if self.probs is None else np.asarray(self.probs, float) / np.sum(self.probs)
            return rng.choice(len(self.levels), size=n, p=probs)
        if self.dist == "normal":
            v = rng.normal(self.a, self.b, n)
        elif self.dist == "uniform":
            v = rng.uniform(self.a, self.b, n)
        elif self.dist == "lognormal":
            v = rng.lognormal(self.a, self.b, n)
        elif self.dist == "integers":
            v = rng.integers(int(self.a), int(self.b) + 1, n).astype(float)
        else:
            raise DataError(f"{self.name}: unknown distribution {self.dist!r}")
        if self.lower is not None or self.upper is not None:
            v = np.clip(v, self.lower, self.upper)
        if self.decimals is not None:
            v = np.round(v, self.decimals)
        return v


@dataclass(frozen=True)
class SynthSpec:
    """Row count, features, ground-truth rules and corruption rates.

    Rules are read as a decision list: a row takes the class of the first
    rule it matches and ``default_class`` when it matches none.
    """

    n: int
    features: tuple
    rules: tuple = ()
    default_class: int = 0
    noise: float = 0.0
    seed: int = 0
    target_name: str = "target"

    def __post_init__(self):
        if not 0.0 <= self.noise < 1.0:
            raise DataError("label-noise rate must lie in [0, 1)")
        kinds = {f.name: f.kind for f in self.features}
        for r in self.rules:
            for c in r.conditions:
                if c.feature not in kinds:
                    raise DataError(f"rule references undeclared feature {c.feature!r}")
                if c.is_categorical != (kinds[c.feature] == CATEGORICAL):
                    raise DataError(f"rule condition on {c.feature!r} does not match its {kinds[c.feature]} kind")

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            d = {"name": f.name, "kind": f.kind, "missing": f.missing}
            if f.kind == CATEGORICAL:
                d.update(levels=list(f.levels), probs=None if f.probs is None else list(f.probs))
            else:
                d.update(dist=f.dist, a=f.a, b=f.b, lower=f.lower, upper=f.upper, decimals=f.decimals)
            feats.append(d)
        return {"n": self.n, "seed": self.seed, "noise": self.noise, "default_class": self.default_class,
                "target_name": self.target_name, "features": feats,
                "rules": [r.to_dict() for r in self.rules]}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        feats = []
        for f in d["features"]:
            f = dict(f)
            if "levels" in f:
                f["levels"] = tuple(str(v) for v in f["levels"])
            if f.get("probs") is not None:
                f["probs"] = tuple(f["probs"])
            feats.append(FeatureSpec(**f))
        return cls(n=int(d["n"]), features=tuple(feats),
                   rules=tuple(Rule.from_dict(r) for r in d.get("rules", ())),
                   default_class=int(d.get("default_class", 0)), noise=float(d.get("noise", 0.0)),
                   seed=int(d.get("seed", 0)), target_name=d.get("target_name", "target"))

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def apply_rules(rules, default_class: int, ds: Dataset) -> np.ndarray:
    """Decision-list labels for complete rows of ``ds``."""
    y = np.full(ds.n, -1, dtype=np.int64)
    for r in rules:
        hit = r.matches(ds) & (y < 0)
        y[hit] = r.predicted_class
    y[y < 0] = default_class
    return y


def synth_generate_with_truth(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    """Dataset plus the noiseless labels it was corrupted from."""
    feat_ss, noise_ss, miss_ss = np.random.SeedSequence(spec.seed).spawn(3)
    rng_f = np.random.default_rng(feat_ss)
    draws = [f.draw(rng_f, spec.n) for f in spec.features]

    def columns(masks):
        out = []
        for f, v, m in zip(spec.features, draws, masks):
            if f.kind == CATEGORICAL:
                out.append(FeatureColumn(f.name, CATEGORICAL, v, m, f.levels))
            else:
                out.append(FeatureColumn(f.name, NUMERIC, v, m))
        return tuple(out)

    full = np.zeros(spec.n, dtype=bool)
    clean = apply_rules(spec.rules, spec.default_class, FeatureFrame(columns([full] * len(draws)), spec.n))
    flip = np.random.default_rng(noise_ss).random(spec.n) < spec.noise
    y = np.where(flip, 1 - clean, clean)
    rng_m = np.random.default_rng(miss_ss)
    masks = [rng_m.random(spec.n) < f.missing for f in spec.features]
    return Dataset(columns(masks), y, spec.target_name), clean


def synth_generate(spec: SynthSpec) -> Dataset:
    return synth_generate_with_truth(spec)[0]


# --------------------------------------------------------------------------
# built-in cohorts

_BINARY = ("False", "True")


def _bin(name, p_true=0.5, missing=0.0):
    return FeatureSpec(name, CATEGORICAL, levels=_BINARY, probs=(1 - p_true, p_true), missing=missing)


def heterogeneous_spec(n: int = 500, seed: int = 0, noise: float = 0.15,
                       transcript_missing: float = 0.3) -> SynthSpec:
    """25 mixed features, 6 of which drive the target.

    Informative risk factors: low Platelets, high GB, negative Serology,
    high Age, immunodependency and low Titration. A row is class 1 when at
    least two factors are present, so every informative feature has a main
    effect of the same form. The eight expression features are pure noise
    and partly missing.
    """
    feats = (
        FeatureSpec("Age", dist="normal", a=40, b=18, lower=1, upper=90, decimals=0),
        _bin("Sex", 0.55),
        _bin("Caucasian", 0.4),
        _bin("African", 0.5),
        _bin("Chemoprophylaxis", 0.3),
        _bin("VisWestAfrica", 0.5),
        _bin("VisCentralAfrica", 0.3),
        _bin("VisOther", 0.2),
        _bin("ResFrance", 0.7),
        _bin("ATCD", 0.35),
        FeatureSpec("Delay2", dist="integers", a=0, b=14),
        _bin("Immunodependency", 0.25),
        FeatureSpec("GB", dist="normal", a=7, b=2.5, lower=0.5, decimals=1),
        FeatureSpec("Platelets", dist="normal", a=110, b=60, lower=5, decimals=0),
        FeatureSpec("Serology", CATEGORICAL, levels=("Negative", "Positive"), probs=(0.4, 0.6)),
        FeatureSpec("SerologicalInterpretation", CATEGORICAL, levels=("High", "Low", "Medium")),
        FeatureSpec("Titration", dist="integers", a=0, b=10),
        *(FeatureSpec(g, dist="normal", a=0, b=1, decimals=3, missing=transcript_missing)
          for g in ("A1", "A2", "A3", "B1", "B2", "C1", "C2", "BC1")),
    )
    factors = (
        Condition.below("Platelets", 60),
        Condition.above("GB", 10),
        Condition.within("Serology", ["Negative"]),
        Condition.above("Age", 60),
        Condition.within("Immunodependency", ["True"]),
        Condition.below("Titration", 3),
    )
    rules = tuple(Rule(pair, 1) for pair in itertools.combinations(factors, 2))
    return SynthSpec(n, feats, rules, 0, noise, seed, "Severe")


def depth2_spec(n: int = 200, seed: int = 0, noise: float = 0.0, n_noise_features: int = 3) -> SynthSpec:
    """Four-leaf rule: Platelets at the root, then GB on the low side and Age on the high side.

    The root feature carries the strongest marginal signal so that greedy
    growth can recover the generating tree.
    """
    feats = (
        FeatureSpec("Platelets", dist="uniform", a=0, b=200, decimals=0),
        FeatureSpec("GB", dist="uniform", a=0, b=15, decimals=1),
        FeatureSpec("Age", dist="uniform", a=0, b=90, decimals=0),
        *(FeatureSpec(f"N{k}", dist="normal") for k in range(n_noise_features)),
    )
    rules = (
        Rule((Condition.below("Platelets", 80), Condition.above("GB", 3)), 1),
        Rule((Condition.above("Platelets", 80), Condition.above("Age", 75)), 1),
    )
    return SynthSpec(n, feats, rules, 0, noise, seed, "Severe")


def two_signal_spec(n: int = 300, seed: int = 0, noise: float = 0.05, n_noise_features: int = 8) -> SynthSpec:
    """Target driven by Platelets and GB only; the rest is noise."""
    feats = (
        FeatureSpec("Platelets", dist="normal", a=110, b=60, lower=5, decimals=0),
        FeatureSpec("GB", dist="normal", a=7, b=2.5, lower=0.5, decimals=1),
        *(FeatureSpec(f"N{k}", dist="normal") for k in range(n_noise_features)),
    )
    rules = (
        Rule((Condition.below("Platelets", 90),), 1),
        Rule((Condition.above("Platelets", 90), Condition.above("GB", 8)), 1),
    )
    return SynthSpec(n, feats, rules, 0, noise, seed, "Severe")


def single_signal_spec(n: int = 500, seed: int = 0, noise: float = 0.1, n_noise_features: int = 10) -> SynthSpec:
    """One strongly informative numeric feature among ``n_noise_features`` noise columns."""
    feats = (FeatureSpec("Signal", dist="normal"),
             *(FeatureSpec(f"N{k}", dist="normal") for k in range(n_noise_features)))
    return SynthSpec(n, feats, (Rule((Condition.above("Signal", 0.0),), 1),), 0, noise, seed)


def pure_noise_spec(n: int = 500, seed: int = 0, rate: float = 0.4, n_features: int = 10) -> SynthSpec:
    """Labels independent of every feature: Bernoulli(``rate``)."""
    feats = tuple(FeatureSpec(f"N{k}", dist="normal") for k in range(n_features))
    return SynthSpec(n, feats, (), 0, rate, seed)


BUILTIN = {
    "heterogeneous": heterogeneous_spec,
    "depth2": depth2_spec,
    "two_signal": two_signal_spec,
    "single_signal": single_signal_spec,
    "pure_noise": pure_noise_spec,
}
