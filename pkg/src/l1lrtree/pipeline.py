"""Method variants, the leave-one-out harness, selection stability and
multi-method comparison reports."""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from . import l1lr, tree as trees
from .data import DataError, Dataset, build_design, complete_features, default_fold_count, fingerprint, stratified_folds
from .evaluation import DecisionConfig, ScoreBlock, evaluate, percent
from .rules import render as render_rules
from .rules import rules_from_tree

KINDS = ("l1lr_min", "l1lr_1se", "tree", "prune", "l1lr_tree", "constant")
LINEAR_KINDS = ("l1lr_min", "l1lr_1se")
TREE_KINDS = ("tree", "prune", "l1lr_tree")


class NumericalError(RuntimeError):
    """A replicate failed for numerical reasons."""


class ReplicateError(RuntimeError):
    def __init__(self, row: int, cause: BaseException):
        super().__init__(f"replicate for held-out row {row} failed: {type(cause).__name__}: {cause}")
        self.row = row
        self.cause = cause


@dataclass(frozen=True)
class MethodSpec:
    """One method variant and its hyperparameters.

    ``folds=None`` means ``floor(n / 10)``. ``nested=False`` reuses the
    penalty or pruning level chosen on the full data inside every LOO
    replicate instead of re-selecting it.
    """

    kind: str
    n_lambda: int = 100
    eps: float = 1e-3
    tol: float = 1e-7
    max_iter: int = 10_000
    min_leaf: int = 10
    max_depth: int = 30
    folds: int | None = None
    seed: int = 0
    nested: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.folds is not None and self.folds < 2:
            raise ValueError("folds must be at least 2")

    @property
    def grow_params(self) -> trees.GrowParams:
        return trees.GrowParams(min_leaf=self.min_leaf, max_depth=self.max_depth)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConstantModel:
    prob: float

    def dump(self) -> dict:
        return {"constant": self.prob}


@dataclass(eq=False)
class FittedModel:
    """A fitted variant: linear model, tree or constant, plus its selection artifacts."""

    kind: str
    model: object
    features: tuple
    selected: tuple
    design: object = None
    cv: l1lr.CvCurve | None = None
    alpha: float | None = None
    stage1: l1lr.RegularizedLogisticModel | None = None
    flags: tuple = ()

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        if isinstance(self.model, ConstantModel):
            return np.full(ds.n, self.model.prob)
        if isinstance(self.model, trees.Tree):
            return trees.predict(self.model, ds)
        return l1lr.predict_proba_raw(self.model, self.design.transform(ds))

    @property
    def hyperparameter(self) -> float | None:
        if isinstance(self.model, l1lr.RegularizedLogisticModel):
            return self.model.lam
        if self.stage1 is not None:
            return self.stage1.lam
        return self.alpha

    def dump(self) -> dict:
        out = {"kind": self.kind, "features": list(self.features), "selected": list(self.selected),
               "flags": list(self.flags)}
        if self.stage1 is not None:
            out["stage1"] = self.stage1.dump()
        if self.cv is not None:
            out["lambda_min"] = self.cv.lambda_min
            out["lambda_1se"] = self.cv.lambda_1se
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if isinstance(self.model, trees.Tree):
            out["tree"] = trees.to_text(self.model)
            out["n_leaves"] = self.model.n_leaves
        else:
            out["model"] = self.model.dump()
        return out


def _fold_count(ds: Dataset, spec: MethodSpec) -> int:
    K = spec.folds or default_fold_count(ds.n)
    # folds cannot outnumber the minority class
    return max(2, min(K, ds.n_positive, ds.n - ds.n_positive))


def _select_lambda(ds, spec, which, fixed_lambda=None):
    """Design on complete features, penalty by CV (or ``fixed_lambda``), full-data fit."""
    feats = complete_features(ds)
    if not feats:
        raise DataError("no feature is complete; the penalized model needs at least one")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        design = build_design(ds, feats)
        if design.matrix.shape[1] == 0:
            raise DataError("every complete feature is constant")
        y = ds.target.astype(float)
        grid = l1lr.lambda_grid(design, y, spec.n_lambda, spec.eps)
        cv = None
        if fixed_lambda is None:
            folds = stratified_folds(ds, _fold_count(ds, spec), spec.seed)
            cv = l1lr.cv_lambda(design, y, folds, grid, spec.tol, spec.max_iter)
            idx = cv.index_min if which == "min" else cv.index_1se
            model = l1lr.fit_at(design, y, grid, idx, spec.tol, spec.max_iter)
        else:
            lam = float(fixed_lambda)
            below = np.flatnonzero(grid > lam)
            model = (l1lr.fit_at(design, y, grid, int(below[-1]), spec.tol, spec.max_iter)
                     if len(below) else None)
            model = l1lr.fit(design, y, lam, spec.tol, spec.max_iter, warm_start=model)
    flags = []
    if model.capped:
        flags.append("capped")
    elif model.separated:
        flags.append("separated")
    elif not model.converged:
        flags.append("not-converged")
    return design, model, cv, tuple(feats), tuple(flags)


def fit_method(ds: Dataset, spec: MethodSpec, fixed: float | None = None) -> FittedModel:
    """Fit one variant on ``ds``.

    ``fixed`` bypasses hyperparameter selection: the penalty for linear
    kinds and ``l1lr_tree``, the pruning level for ``prune``.
    """
    kind = spec.kind
    if kind == "constant":
        return FittedModel(kind, ConstantModel(float(ds.target.mean())), tuple(ds.feature_names), ())
    if kind in LINEAR_KINDS:
        design, model, cv, feats, flags = _select_lambda(ds, spec, kind.rsplit("_", 1)[1], fixed)
        return FittedModel(kind, model, feats, tuple(l1lr.selected_features(model)), design, cv, flags=flags)
    if kind == "tree":
        t = trees.grow(ds, None, spec.grow_params)
        return FittedModel(kind, t, tuple(ds.feature_names), tuple(trees.selected_variables(t)), flags=t.flags)
    if kind == "prune":
        if fixed is None:
            folds = stratified_folds(ds, _fold_count(ds, spec), spec.seed)
            alpha, t = trees.cv_alpha(ds, None, folds, spec.grow_params)
        else:
            alpha = float(fixed)
            t = trees.prune(trees.grow(ds, None, spec.grow_params), alpha)
        return FittedModel(kind, t, tuple(ds.feature_names), tuple(trees.selected_variables(t)),
                           alpha=alpha, flags=t.flags)
    # l1lr_tree: lambda_1se selection, then an unpruned tree on the survivors
    design, stage1, cv, _, flags = _select_lambda(ds, spec, "1se", fixed)
    chosen = tuple(l1lr.selected_features(stage1))
    if not chosen:
        return FittedModel(kind, ConstantModel(float(ds.target.mean())), (), (), design, cv,
                           stage1=stage1, flags=flags + ("empty-selection",))
    t = trees.grow(ds, chosen, spec.grow_params)
    return FittedModel(kind, t, chosen, tuple(trees.selected_variables(t)), design, cv,
                       stage1=stage1, flags=flags + t.flags)


# --------------------------------------------------------------------------
# leave-one-out harness


def replicate_seed(seed: int, row: int) -> int:
    """Seed for the replicate holding out ``row``: a spawn key of ``seed``."""
    return int(np.random.SeedSequence([seed, row]).generate_state(1, np.uint32)[0])


def index_hash(rows) -> str:
    return hashlib.sha256(np.ascontiguousarray(rows, dtype="<i8").tobytes()).hexdigest()


@dataclass(frozen=True)
class ReplicateRecord:
    row: int
    p_hat: float
    train_hash: str
    n_train: int
    selected: tuple
    hyperparameter: float | None
    flags: tuple

    def to_dict(self) -> dict:
        return {"row": self.row, "p_hat": self.p_hat, "train_hash": self.train_hash, "n_train": self.n_train,
                "selected": list(self.selected), "hyperparameter": self.hyperparameter, "flags": list(self.flags)}


def run_replicate(ds: Dataset, spec: MethodSpec, row: int, fixed: float | None = None) -> ReplicateRecord:
    """Fit on every row but ``row`` and predict ``row``."""
    train = np.delete(np.arange(ds.n, dtype=np.int64), row)
    sub = ds.take(train)
    fm = fit_method(sub, replace(spec, seed=replicate_seed(spec.seed, row)), fixed)
    p = float(fm.predict_proba(ds.frame([row]))[0])
    if not np.isfinite(p):
        raise NumericalError(f"non-finite prediction for row {row}")
    return ReplicateRecord(row, p, index_hash(train), len(train), fm.selected, fm.hyperparameter, fm.flags)


_WORKER: dict = {}


def _worker_init(ds, spec, fixed):
    _WORKER.update(ds=ds, spec=spec, fixed=fixed)


def _worker_rows(rows):
    out = []
    for r in rows:
        try:
            out.append(run_replicate(_WORKER["ds"], _WORKER["spec"], r, _WORKER["fixed"]))
        except Exception as exc:  # reported with the row index by the parent
            return out, (r, exc)
    return out, None


@dataclass(eq=False)
class LooResult:
    spec: MethodSpec
    fingerprint: str
    records: list
    fixed: float | None = None

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def p_hat(self) -> np.ndarray:
        return np.array([r.p_hat for r in self.records])

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "fingerprint": self.fingerprint, "fixed_hyperparameter": self.fixed,
                "replicates": [r.to_dict() for r in self.records]}


def loo_evaluate(ds: Dataset, spec: MethodSpec, jobs: int = 1) -> LooResult:
    """One replicate per row, merged by row index; identical for any ``jobs``."""
    if ds.n < 20:
        raise DataError(f"cohort too small for protocol (n={ds.n} < 20)")
    fixed = None
    if not spec.nested and spec.kind not in ("tree", "constant"):
        fixed = fit_method(ds, spec).hyperparameter
    rows = list(range(ds.n))
    records: list = []
    if jobs <= 1:
        for r in rows:
            try:
                records.append(run_replicate(ds, spec, r, fixed))
            except Exception as exc:
                raise ReplicateError(r, exc) from exc
    else:
        chunks = [rows[k::jobs * 4] for k in range(min(len(rows), jobs * 4))]
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(ds, spec, fixed)) as ex:
            for got, failure in ex.map(_worker_rows, chunks):
                if failure is not None:
                    raise ReplicateError(failure[0], failure[1])
                records.extend(got)
        records.sort(key=lambda rec: rec.row)
    return LooResult(spec, fingerprint(ds), records, fixed)


def leakage_violations(loo: LooResult) -> list[int]:
    """Rows whose recorded training hash is not that of ``all rows minus the row``."""
    n = loo.n
    bad = []
    for rec in loo.records:
        expected = index_hash(np.delete(np.arange(n, dtype=np.int64), rec.row))
        if rec.train_hash != expected or rec.n_train != n - 1:
            bad.append(rec.row)
    return bad


@dataclass(frozen=True)
class StabilityTable:
    counts: dict
    n: int

    def displayed(self, min_count: int = 10) -> list[tuple[str, int]]:
        items = [(f, c) for f, c in self.counts.items() if c >= min_count]
        return sorted(items, key=lambda fc: (-fc[1], fc[0]))

    def to_dict(self) -> dict:
        return {"n": self.n, "counts": dict(self.counts)}


def stability(loo: LooResult, features=None) -> StabilityTable:
    """Selection count of every feature across the LOO models (zeros kept)."""
    names = list(features) if features is not None else []
    counts = {f: 0 for f in names}
    for rec in loo.records:
        for f in rec.selected:
            counts[f] = counts.get(f, 0) + 1
    return StabilityTable(counts, loo.n)


# --------------------------------------------------------------------------
# comparison report


@dataclass(eq=False)
class MethodOutcome:
    name: str
    loo: LooResult
    scores: ScoreBlock
    stability: StabilityTable
    full_fit: FittedModel
    rule_set: object = None

    def flag_counts(self) -> dict:
        out: dict = {}
        for rec in self.loo.records:
            for f in rec.flags:
                out[f] = out.get(f, 0) + 1
        return dict(sorted(out.items()))


@dataclass(eq=False)
class ComparisonReport:
    dataset: dict
    decision: DecisionConfig
    outcomes: list
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        methods = []
        for o in self.outcomes:
            entry = {
                "name": o.name,
                "spec": o.loo.spec.to_dict(),
                "scores": o.scores.to_dict(),
                "stability": o.stability.to_dict(),
                "replicate_flags": o.flag_counts(),
                "full_model": o.full_fit.dump(),
                "rule_set": None if o.rule_set is None else o.rule_set.to_dict(),
                "loo": o.loo.to_dict(),
            }
            methods.append(entry)
        return {
            "tool": {"name": "l1lrtree", "version": __version__},
            "config": self.config,
            "seed": self.seed,
            "dataset": self.dataset,
            "decision": self.decision.to_dict(),
            "methods": methods,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=False) + "\n"

    def to_markdown(self, min_display_count: int = 10) -> str:
        ds = self.dataset
        lines = [
            f"# Leave-one-out comparison ({ds['target']})",
            "",
            f"- tool: l1lrtree {__version__}",
            f"- dataset: n={ds['n']}, positives={ds['n_positive']}, fingerprint `{ds['fingerprint']}`",
            f"- seed: {self.seed}",
            f"- decision threshold: {self.decision.threshold:.6g} ({self.decision.source})",
            "",
            "## Scores",
            "",
            "| Method | Recall | Specificity | Accuracy |",
            "|---|---|---|---|",
        ]
        for o in self.outcomes:
            s = o.scores
            lines.append(f"| {o.name} | {percent(s.recall)} % {s.recall_stars} | "
                         f"{percent(s.specificity)} % {s.specificity_stars} | {percent(s.accuracy)} % |")
        lines += ["", "Stars: * p ≤ 0.05, ** p ≤ 0.01, *** p ≤ 0.001 (one-sided binomial test).", ""]
        for o in self.outcomes:
            lines += [f"## Selection stability: {o.name}", "",
                      f"Features selected at least {min_display_count} times over {o.stability.n} models.", ""]
            shown = o.stability.displayed(min_display_count)
            if shown:
                lines += ["| Feature | Count |", "|---|---|"] + [f"| {f} | {c} |" for f, c in shown]
            else:
                lines.append("(none)")
            flags = o.flag_counts()
            if flags:
                lines += ["", "Replicate flags: " + ", ".join(f"{k} × {v}" for k, v in flags.items())]
            lines.append("")
            if o.rule_set is not None:
                lines += [f"### Rules: {o.name} (full data)", "", render_rules(o.rule_set).rstrip("\n"), ""]
        lines += config_block(self.config)
        return "\n".join(lines).rstrip("\n") + "\n"


def config_block(config: dict) -> list[str]:
    """Markdown lines embedding the resolved run configuration."""
    if not config:
        return []
    return ["## Configuration", "", "```json", json.dumps(config, indent=2, allow_nan=False), "```", ""]


def dataset_summary(ds: Dataset) -> dict:
    return {"target": ds.target_name, "n": ds.n, "n_positive": ds.n_positive,
            "features": list(ds.feature_names), "fingerprint": fingerprint(ds)}


def method_names(specs) -> list[str]:
    """Kind names, numbered when a kind appears more than once."""
    kinds = [s.kind for s in specs]
    seen: dict = {}
    out = []
    for k in kinds:
        seen[k] = seen.get(k, 0) + 1
        out.append(k if kinds.count(k) == 1 else f"{k}#{seen[k]}")
    return out


def compare_methods(ds: Dataset, specs, decision: DecisionConfig, jobs: int = 1, p0: float = 0.5,
                    config: dict | None = None, seed: int | None = None) -> ComparisonReport:
    """LOO-evaluate each spec, score it, count selections and fit it on all rows."""
    if not specs:
        raise ValueError("at least one method is required")
    specs = list(specs)
    outcomes = []
    for spec, name in zip(specs, method_names(specs)):
        loo = loo_evaluate(ds, spec, jobs)
        block = evaluate(loo.p_hat, ds.target, decision, p0)
        full = fit_method(ds, spec)
        rs = rules_from_tree(full.model, decision) if isinstance(full.model, trees.Tree) else None
        outcomes.append(MethodOutcome(name, loo, block,
                                      stability(loo, ds.feature_names), full, rs))
    return ComparisonReport(dataset_summary(ds), decision, outcomes, config or {},
                            specs[0].seed if seed is None else seed)
