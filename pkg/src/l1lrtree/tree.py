"""Binary regression trees on a 0/1 target with surrogate splits and
cost-complexity pruning.

Splits maximize ``SS_T - (SS_L + SS_R)``; leaves hold the class-1 rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _splits
from .data import CATEGORICAL, NUMERIC, Dataset, FeatureColumn, FoldAssignment

TIE_TOL = _splits.TIE_TOL
MIN_IMPROVEMENT = 1e-12


@dataclass(frozen=True)
class GrowParams:
    min_leaf: int = 10
    min_split: int | None = None
    max_depth: int = 30

    @property
    def min_split_(self) -> int:
        return 2 * self.min_leaf if self.min_split is None else self.min_split


@dataclass(frozen=True)
class Split:
    """``feature <= threshold`` (numeric) or ``feature in left_levels`` goes left.

    ``reverse`` flips the direction; only surrogates use it.
    """

    feature: str
    kind: str
    improvement: float = 0.0
    threshold: float | None = None
    left_levels: frozenset = frozenset()
    reverse: bool = False

    def goes_left(self, column: FeatureColumn) -> np.ndarray:
        """Per-row direction; meaningless where the column is missing."""
        if self.kind == NUMERIC:
            left = column.values <= self.threshold
        else:
            codes = [k for k, lv in enumerate(column.levels) if lv in self.left_levels]
            left = np.isin(column.values, codes)
        return ~left if self.reverse else left

    def goes_left_value(self, value) -> bool:
        left = value <= self.threshold if self.kind == NUMERIC else str(value) in self.left_levels
        return (not left) if self.reverse else bool(left)

    def describe(self, left: bool = True) -> str:
        go_left = left != self.reverse
        if self.kind == NUMERIC:
            return f"{self.feature} {'<=' if go_left else '>'} {_fmt(self.threshold)}"
        levels = ", ".join(sorted(self.left_levels))
        return f"{self.feature} {'in' if go_left else 'not in'} {{{levels}}}"


@dataclass(frozen=True)
class Surrogate:
    split: Split
    agreement: float


@dataclass(eq=False)
class Node:
    id: int
    n: int
    prob: float
    risk: float
    depth: int
    split: Split | None = None
    surrogates: tuple = ()
    default_left: bool = True
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def walk(self):
        yield self
        if not self.is_leaf:
            yield from self.left.walk()
            yield from self.right.walk()


@dataclass(eq=False)
class Tree:
    root: Node
    features: tuple
    kinds: dict
    levels: dict
    params: GrowParams
    flags: tuple = ()

    def nodes(self) -> list[Node]:
        return list(self.root.walk())

    def leaves(self) -> list[Node]:
        return [nd for nd in self.root.walk() if nd.is_leaf]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def risk(self) -> float:
        """Resubstitution risk: summed within-leaf sum of squares."""
        return float(sum(nd.risk for nd in self.leaves()))

    @property
    def depth(self) -> int:
        return max(nd.depth for nd in self.root.walk())

    def to_text(self) -> str:
        return to_text(self)


def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), precision=6, trim="-")


def _sum_squares(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    s = float(y.sum())
    return float(np.dot(y, y)) - s * s / len(y)


# --------------------------------------------------------------------------
# split search


def _feature_matrix(ds: Dataset, features: Sequence[str]):
    F = np.empty((ds.n, len(features)), order="F")
    is_cat = np.zeros(len(features), dtype=np.bool_)
    n_levels = np.zeros(len(features), dtype=np.int64)
    for j, name in enumerate(features):
        col = ds.column(name)
        v = col.values.astype(np.float64)
        v[col.missing_mask] = np.nan
        F[:, j] = v
        if col.kind == CATEGORICAL:
            is_cat[j] = True
            n_levels[j] = max(1, len(col.levels))
    return F, is_cat, n_levels


def best_split(rows, column: FeatureColumn, y, min_leaf: int = 1) -> Split | None:
    """Best split of ``rows`` on one feature, using rows where it is present."""
    rows = np.asarray(rows, dtype=np.int64)
    present = rows[~column.missing_mask[rows]]
    if len(present) < 2:
        return None
    yv = np.asarray(y, dtype=np.float64)[present]
    if column.kind == NUMERIC:
        imp, thr = _splits.best_numeric(column.values[present].astype(np.float64), yv, min_leaf)
        if imp < 0:
            return None
        return Split(column.name, NUMERIC, float(imp), threshold=float(thr))
    imp, mask = _splits.best_categorical(column.values[present], max(1, len(column.levels)), yv, min_leaf)
    if imp < 0:
        return None
    left = frozenset(lv for lv, m in zip(column.levels, mask) if m)
    return Split(column.name, CATEGORICAL, float(imp), left_levels=left)


def _make_split(name, col, is_cat, imp, thr, mask) -> Split:
    if is_cat:
        return Split(name, CATEGORICAL, float(imp),
                     left_levels=frozenset(lv for lv, m in zip(col.levels, mask) if m))
    return Split(name, NUMERIC, float(imp), threshold=float(thr))


def best_node_split(ds: Dataset, rows, features: Sequence[str] | None = None, min_leaf: int = 1) -> Split | None:
    """Best split of ``rows`` over ``features``; lowest feature index wins ties."""
    features = tuple(ds.feature_names if features is None else features)
    F, is_cat, n_levels = _feature_matrix(ds, features)
    y = ds.target.astype(np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    j, imp, thr, mask = _splits.best_over_features(F, is_cat, n_levels, y, rows, min_leaf,
                                                   np.ones(len(features), dtype=np.bool_))
    if j < 0:
        return None
    return _make_split(features[j], ds.column(features[j]), is_cat[j], imp, thr, mask)


def surrogate_splits(rows, primary: Split, columns: Sequence[FeatureColumn]) -> list[Surrogate]:
    """Rank other features by how well one split mimics ``primary``.

    Agreement is measured on rows present on both features and must beat the
    majority-direction baseline on those same rows.
    """
    rows = np.asarray(rows, dtype=np.int64)
    pcol = next(c for c in columns if c.name == primary.feature)
    base_rows = rows[~pcol.missing_mask[rows]]
    direction = primary.goes_left(pcol)
    out = []
    for col in columns:
        if col.name == primary.feature:
            continue
        r = base_rows[~col.missing_mask[base_rows]]
        if len(r) < 2:
            continue
        gl = direction[r]
        frac_left = gl.mean()
        baseline = max(frac_left, 1.0 - frac_left)
        if col.kind == NUMERIC:
            agree, thr, rev = _splits.numeric_agreement(col.values[r].astype(np.float64), gl)
            if agree < 0:
                continue
            split = Split(col.name, NUMERIC, 0.0, threshold=float(thr), reverse=bool(rev))
        else:
            agree, mask = _splits.categorical_agreement(col.values[r], max(1, len(col.levels)), gl)
            split = Split(col.name, CATEGORICAL, 0.0, left_levels=frozenset(
                lv for lv, m in zip(col.levels, mask) if m))
        if agree > baseline + TIE_TOL:
            out.append(Surrogate(split, float(agree)))
    # stable sort keeps feature order among equal agreements
    out.sort(key=lambda s: -s.agreement)
    return out


def _route(node: Node, cols: dict, rows: np.ndarray) -> np.ndarray:
    """Boolean 'goes left' for ``rows`` at an internal node."""
    split = node.split
    pcol = cols[split.feature]
    left = np.zeros(len(rows), dtype=bool)
    pending = pcol.missing_mask[rows].copy()
    left[~pending] = split.goes_left(pcol)[rows[~pending]]
    for sur in node.surrogates:
        if not pending.any():
            break
        scol = cols[sur.split.feature]
        usable = pending & ~scol.missing_mask[rows]
        if usable.any():
            left[usable] = sur.split.goes_left(scol)[rows[usable]]
            pending &= ~usable
    left[pending] = node.default_left
    return left


# --------------------------------------------------------------------------
# growth


def grow(ds: Dataset, features: Sequence[str] | None = None, params: GrowParams | None = None,
         surrogates_for=None, **kwargs) -> Tree:
    """Greedy binary partitioning on ``features`` (all columns by default).

    ``surrogates_for`` limits surrogate search to nodes split on the named
    features; ``None`` searches at every node. Routing of the training rows
    is unaffected because they only need surrogates where values are missing.
    """
    params = params or GrowParams(**kwargs)
    features = tuple(ds.feature_names if features is None else features)
    cols = {nm: ds.column(nm) for nm in features}
    y = ds.target.astype(np.float64)
    F, is_cat, n_levels = _feature_matrix(ds, features)
    allowed = np.ones(len(features), dtype=np.bool_)
    counter = [0]
    min_split = params.min_split_

    def build(rows, depth):
        yv = y[rows]
        node = Node(counter[0], len(rows), float(yv.mean()), _sum_squares(yv), depth)
        counter[0] += 1
        if not features or len(rows) < min_split or depth >= params.max_depth or node.risk <= MIN_IMPROVEMENT:
            return node
        j, imp, thr, mask = _splits.best_over_features(F, is_cat, n_levels, y, rows, params.min_leaf, allowed)
        if j < 0 or imp <= MIN_IMPROVEMENT:
            return node
        name = features[j]
        col = cols[name]
        split = _make_split(name, col, is_cat[j], imp, thr, mask)
        present = rows[~col.missing_mask[rows]]
        go = split.goes_left(col)[present]
        node.split = split
        node.default_left = bool(go.sum() * 2 >= len(go))
        if surrogates_for is None or name in surrogates_for or col.missing_mask[rows].any():
            node.surrogates = tuple(surrogate_splits(rows, split, list(cols.values())))
        left = _route(node, cols, rows)
        node.left = build(rows[left], depth + 1)
        node.right = build(rows[~left], depth + 1)
        return node

    root = build(np.arange(ds.n, dtype=np.int64), 0)
    flags = () if features else ("empty-feature-list",)
    return Tree(root, features, {nm: c.kind for nm, c in cols.items()},
                {nm: c.levels for nm, c in cols.items()}, params, flags)


# --------------------------------------------------------------------------
# prediction


def leaf_index(tree: Tree, ds: Dataset) -> np.ndarray:
    """Id of the leaf each row of ``ds`` reaches."""
    cols = {nm: ds.column(nm) for nm in tree.features}
    out = np.empty(ds.n, dtype=np.int64)

    def descend(node, rows):
        if node.is_leaf or len(rows) == 0:
            out[rows] = node.id
            return
        left = _route(node, cols, rows)
        descend(node.left, rows[left])
        descend(node.right, rows[~left])

    descend(tree.root, np.arange(ds.n, dtype=np.int64))
    return out


def node_paths(tree: Tree, ds: Dataset) -> list[list[int]]:
    """Node ids visited by each row, root first."""
    cols = {nm: ds.column(nm) for nm in tree.features}
    paths = [[] for _ in range(ds.n)]

    def descend(node, rows):
        for r in rows:
            paths[r].append(node.id)
        if node.is_leaf or len(rows) == 0:
            return
        left = _route(node, cols, rows)
        descend(node.left, rows[left])
        descend(node.right, rows[~left])

    descend(tree.root, np.arange(ds.n, dtype=np.int64))
    return paths


def predict(tree: Tree, ds: Dataset) -> np.ndarray:
    """Leaf class-1 probability for every row of ``ds``."""
    prob = {nd.id: nd.prob for nd in tree.leaves()}
    return np.array([prob[i] for i in leaf_index(tree, ds)], dtype=np.float64)


def predict_row(tree: Tree, row: dict) -> float:
    """Route one row given as ``{feature: value}``; ``None``/NaN or absent means missing."""

    def missing(name):
        v = row.get(name)
        return v is None or (isinstance(v, float) and math.isnan(v))

    node = tree.root
    while not node.is_leaf:
        sp = node.split
        if not missing(sp.feature):
            left = sp.goes_left_value(row[sp.feature])
        else:
            for sur in node.surrogates:
                if not missing(sur.split.feature):
                    left = sur.split.goes_left_value(row[sur.split.feature])
                    break
            else:
                left = node.default_left
        node = node.left if left else node.right
    return node.prob


def selected_variables(tree: Tree) -> list[str]:
    out = []
    for nd in tree.root.walk():
        if not nd.is_leaf and nd.split.feature not in out:
            out.append(nd.split.feature)
    return out


# --------------------------------------------------------------------------
# cost-complexity pruning


def _copy_pruned(node: Node, collapsed: set) -> Node:
    if node.is_leaf or node.id in collapsed:
        return replace(node, split=None, surrogates=(), left=None, right=None)
    return replace(node, left=_copy_pruned(node.left, collapsed), right=_copy_pruned(node.right, collapsed))


def pruned(tree: Tree, collapsed) -> Tree:
    """Copy of ``tree`` with every node in ``collapsed`` turned into a leaf."""
    return replace(tree, root=_copy_pruned(tree.root, set(collapsed)))


@dataclass(eq=False)
class CostComplexitySequence:
    """Nested subtrees; ``trees[k]`` minimizes ``R + alpha*|leaves|`` on ``[alphas[k], alphas[k+1])``."""

    alphas: list
    trees: list
    leaves: list
    collapse_alpha: dict = field(default_factory=dict)

    def index_for(self, alpha: float) -> int:
        k = 0
        for i, a in enumerate(self.alphas):
            if a <= alpha:
                k = i
        return k


def _count_leaves(node: Node, collapsed: set) -> int:
    if node.is_leaf or node.id in collapsed:
        return 1
    return _count_leaves(node.left, collapsed) + _count_leaves(node.right, collapsed)


def cost_complexity_sequence(tree: Tree, materialize: bool = True) -> CostComplexitySequence:
    """Weakest-link pruning: repeatedly collapse the nodes of least ``g(t)``.

    With ``materialize=False`` the subtrees are not copied (``trees`` holds
    ``None``); breakpoints and ``collapse_alpha`` are still complete.
    """
    nodes = {nd.id: nd for nd in tree.root.walk()}
    collapsed: set[int] = set()
    alphas, trees, leaves = [0.0], [tree], [tree.n_leaves]
    collapse_alpha: dict[int, float] = {}

    while True:
        g = {}

        def visit(node):
            # (leaf risk sum, leaf count) of the current pruned branch
            if node.is_leaf or node.id in collapsed:
                return node.risk, 1
            rl, nl = visit(node.left)
            rr, nr = visit(node.right)
            g[node.id] = (node.risk - rl - rr) / (nl + nr - 1)
            return rl + rr, nl + nr

        visit(tree.root)
        if not g:
            break
        alpha = max(0.0, min(g.values()))
        weakest = {i for i, v in g.items() if v <= alpha + TIE_TOL * max(1.0, abs(alpha))}
        collapsed |= weakest
        for i in weakest:
            collapse_alpha.setdefault(i, alpha)
        sub = pruned(tree, collapsed) if materialize else None
        n_sub = _count_leaves(tree.root, collapsed)
        if alpha <= alphas[-1] and len(alphas) > 1:
            # equal breakpoint: keep only the smaller tree
            trees[-1], leaves[-1] = sub, n_sub
        else:
            alphas.append(alpha)
            trees.append(sub)
            leaves.append(n_sub)
    # descendants of a collapsed node are removed no later than it
    for nd in nodes.values():
        if nd.id in collapse_alpha:
            for sub in nd.walk():
                if not sub.is_leaf:
                    collapse_alpha[sub.id] = min(collapse_alpha.get(sub.id, math.inf), collapse_alpha[nd.id])
    return CostComplexitySequence(alphas, trees, leaves, collapse_alpha)


def prune(tree: Tree, alpha: float, sequence: CostComplexitySequence | None = None) -> Tree:
    """Sequence member whose interval holds ``alpha`` (breakpoints go to the smaller tree)."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    seq = sequence or cost_complexity_sequence(tree)
    return seq.trees[seq.index_for(alpha)]


def _pruned_predictions(tree: Tree, seq: CostComplexitySequence, ds: Dataset, alphas) -> np.ndarray:
    """Predictions of ``prune(tree, a)`` for each ``a`` without materializing trees."""
    nodes = {nd.id: nd for nd in tree.root.walk()}
    paths = node_paths(tree, ds)
    out = np.empty((len(alphas), ds.n))
    for r, path in enumerate(paths):
        for k, a in enumerate(alphas):
            pred = nodes[path[-1]].prob
            for nid in path:
                if seq.collapse_alpha.get(nid, math.inf) <= a:
                    pred = nodes[nid].prob
                    break
            out[k, r] = pred
    return out


def candidate_alphas(seq: CostComplexitySequence) -> list[float]:
    """Geometric means of adjacent breakpoints, plus the final breakpoint.

    The final value stands for the whole last interval ``[alpha_last, inf)``,
    that is, for the root-only tree.
    """
    a = seq.alphas
    if len(a) == 1:
        return [0.0]
    return [math.sqrt(a[k] * a[k + 1]) for k in range(len(a) - 1)] + [a[-1]]


def cv_alpha(ds: Dataset, features: Sequence[str] | None, folds: FoldAssignment,
             params: GrowParams | None = None):
    """Choose alpha by K-fold held-out squared error; return (alpha, pruned full tree).

    Ties go to the larger alpha. A root-only full tree is returned as is,
    flagged.
    """
    params = params or GrowParams()
    full = grow(ds, features, params)
    seq = cost_complexity_sequence(full)
    cands = candidate_alphas(seq)
    if len(seq.alphas) == 1:
        return 0.0, replace(full, flags=full.flags + ("root-only",))
    err = np.zeros((folds.K, len(cands)))
    y = ds.target.astype(float)
    # fold trees need surrogates only where the full data has gaps
    gappy = {c.name for c in ds.columns if c.missing_mask.any()}
    for k in range(folds.K):
        train, test = folds.train_test(k)
        t_k = grow(ds.take(train), features, params, surrogates_for=gappy)
        s_k = cost_complexity_sequence(t_k, materialize=False)
        # the root-only candidate is scored with root-only fold trees
        pred = _pruned_predictions(t_k, s_k, ds.frame(test), cands[:-1] + [math.inf])
        err[k] = np.mean((pred - y[test][None, :]) ** 2, axis=1)
    mean_err = err.mean(axis=0)
    best = mean_err.min()
    idx = int(np.flatnonzero(mean_err <= best + 1e-15)[-1])
    alpha_star = cands[idx]
    return alpha_star, seq.trees[seq.index_for(alpha_star)]


# --------------------------------------------------------------------------
# text form


def to_text(tree: Tree) -> str:
    lines = []

    def emit(node, label, indent):
        pad = "  " * indent
        head = f"{pad}{label}" if label else pad.rstrip()
        if node.is_leaf:
            lines.append(f"{head}{': ' if label else ''}leaf p={node.prob:.4f} n={node.n}")
            return
        lines.append(f"{head}{': ' if label else ''}n={node.n} p={node.prob:.4f}")
        emit(node.left, node.split.describe(True), indent + 1)
        emit(node.right, node.split.describe(False), indent + 1)

    emit(tree.root, "root", 0)
    return "\n".join(lines) + "\n"
