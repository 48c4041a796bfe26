from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1lrtree import tree as T
from l1lrtree.data import CATEGORICAL, NUMERIC, Dataset, FeatureColumn, FeatureFrame
from l1lrtree.evaluation import DecisionConfig
from l1lrtree.rules import Condition, Rule, RuleSet, canonicalize, render, rules_from_tree, validate
from l1lrtree.synth import depth2_spec, heterogeneous_spec, synth_generate

GOLDEN = Path(__file__).parent / "golden"


def leaf(i, n, prob, depth):
    return T.Node(i, n, prob, 0.0, depth)


def platelets_gb_tree():
    """Platelets <= 84 then GB <= 7 on the low side."""
    low = T.Node(1, 60, 0.5, 0.0, 1, split=T.Split("GB", NUMERIC, 1.0, threshold=7.0),
                 left=leaf(2, 30, 0.9, 2), right=leaf(3, 30, 0.1, 2))
    root = T.Node(0, 100, 0.4, 0.0, 0, split=T.Split("Platelets", NUMERIC, 2.0, threshold=84.0),
                  left=low, right=leaf(4, 40, 0.25, 1))
    return T.Tree(root, ("Platelets", "GB"), {"Platelets": NUMERIC, "GB": NUMERIC},
                  {"Platelets": (), "GB": ()}, T.GrowParams())


def serology_tree():
    root = T.Node(0, 50, 0.5, 0.0, 0, split=T.Split("Serology", CATEGORICAL, 1.0,
                                                    left_levels=frozenset({"Positive"})),
                  left=leaf(1, 20, 0.8, 1), right=leaf(2, 30, 0.3, 1))
    return T.Tree(root, ("Serology",), {"Serology": CATEGORICAL},
                  {"Serology": ("Negative", "Positive", "Unknown")}, T.GrowParams())


def random_frame(rng, n):
    return FeatureFrame((FeatureColumn.numeric("Platelets", rng.uniform(0, 300, n)),
                         FeatureColumn.numeric("GB", rng.uniform(0, 20, n))), n)


# ---------------------------------------------------------------- construction


def test_single_leaf_tree_gives_always_rule():
    t = T.Tree(leaf(0, 10, 0.3, 0), ("x",), {"x": NUMERIC}, {"x": ()}, T.GrowParams())
    rs = rules_from_tree(t, DecisionConfig(0.5))
    assert len(rs.rules) == 1 and rs.rules[0].conditions == ()
    assert rs.rules[0].render() == "always"
    assert rs.rules[0].predicted_class == 0


def test_platelets_gb_rules_tile_the_plane():
    t = platelets_gb_tree()
    rs = rules_from_tree(t, DecisionConfig(0.4))
    assert len(rs.rules) == 3
    fr = random_frame(np.random.default_rng(0), 100_000)
    M = rs.match_matrix(fr)
    assert np.all(M.sum(axis=0) == 1)
    assert np.array_equal(rs.predict_proba(fr), T.predict(t, fr))
    # boundary values follow the tree: left is <= t
    edge = FeatureFrame((FeatureColumn.numeric("Platelets", [84.0, 84.0]),
                         FeatureColumn.numeric("GB", [7.0, 7.5])), 2)
    assert rs.predict_proba(edge).tolist() == [0.9, 0.1]
    assert [r.predicted_class for r in rs.rules] == [1, 0, 0]


def test_path_intervals_are_intersected():
    path = [Condition.above("Platelets", 84, closed=True), Condition.above("Platelets", 46, closed=True)]
    assert canonicalize(path) == (Condition.above("Platelets", 84, closed=True),)
    both = canonicalize([Condition.below("GB", 7), Condition.above("GB", 2), Condition.below("GB", 9)])
    assert both == (Condition("GB", 2.0, 7.0, False, True),)
    assert both[0].render() == "2 < GB ≤ 7"
    lv = canonicalize([Condition.within("S", ["a", "b"]), Condition.within("S", ["b", "c"])])
    assert lv == (Condition.within("S", ["b"]),)


def test_empty_intersection_rejected():
    with pytest.raises(ValueError):
        canonicalize([Condition.below("GB", 2), Condition.above("GB", 5)])


intervals = st.tuples(st.sampled_from(["a", "b"]), st.floats(-10, 10), st.floats(0.1, 10),
                      st.booleans(), st.booleans())


@given(st.lists(intervals, min_size=1, max_size=6))
def test_canonicalization_idempotent(raw):
    conds = [Condition(f, lo, lo + w, lc, hc) for f, lo, w, lc, hc in raw]
    try:
        once = canonicalize(conds)
    except ValueError:
        return  # disjoint intervals on one feature
    assert canonicalize(once) == once
    assert len({c.feature for c in once}) == len(once)


def test_categorical_rendering():
    rs = rules_from_tree(serology_tree(), DecisionConfig(0.5))
    texts = sorted(r.render() for r in rs.rules)
    assert texts == ["Serology = Positive", "Serology ∈ {Negative, Unknown}"]


def test_rule_round_trip_dict():
    rs = rules_from_tree(platelets_gb_tree(), DecisionConfig(0.4))
    for r in rs.rules:
        back = Rule.from_dict(r.to_dict())
        assert back.conditions == r.conditions and back.predicted_class == r.predicted_class


# ---------------------------------------------------------------- validation


def test_grown_tree_validates_on_training_rows():
    ds = synth_generate(depth2_spec(300, seed=1, noise=0.1))
    t = T.grow(ds)
    rs = rules_from_tree(t, DecisionConfig(0.5))
    rep = validate(rs, ds)
    assert rep["ok"] and rep["checked"] == ds.n


def test_corrupted_rule_flagged():
    ds = synth_generate(depth2_spec(300, seed=2, noise=0.1))
    t = T.grow(ds)
    rs = rules_from_tree(t, DecisionConfig(0.5))
    bad = list(rs.rules)
    bad[0] = replace(bad[0], leaf_prob=1.0 - bad[0].leaf_prob, predicted_class=1 - bad[0].predicted_class)
    rep = validate(RuleSet(bad, rs.threshold, rs.features, t), ds)
    assert not rep["ok"] and rep["prediction_mismatch"]
    rep = validate(RuleSet(list(rs.rules[1:]), rs.threshold, rs.features, t), ds)
    assert rep["no_rule"] and not rep["ok"]
    rep = validate(RuleSet(list(rs.rules) + [rs.rules[0]], rs.threshold, rs.features, t), ds)
    assert rep["several_rules"]


def test_missing_rows_excluded_and_listed():
    ds = synth_generate(heterogeneous_spec(200, seed=0))
    t = T.grow(ds)
    rs = rules_from_tree(t, DecisionConfig(0.5))
    rep = validate(rs, ds)
    miss = np.zeros(ds.n, bool)
    for c in ds.columns:
        miss |= c.missing_mask
    assert rep["excluded_missing"] == np.flatnonzero(miss).tolist()
    assert rep["checked"] == int((~miss).sum())
    assert rep["ok"]


# ---------------------------------------------------------------- rendering


def golden_trees():
    depth2 = T.grow(synth_generate(depth2_spec(200, seed=0)))
    return {"platelets_gb": (platelets_gb_tree(), 0.4), "serology": (serology_tree(), 0.5),
            "depth2_seed0": (depth2, 0.5)}


@pytest.mark.parametrize("name", ["platelets_gb", "serology", "depth2_seed0"])
def test_render_matches_golden(name):
    t, thr = golden_trees()[name]
    text = render(rules_from_tree(t, DecisionConfig(thr)), ("Mild", "Severe"))
    assert text == (GOLDEN / f"{name}.md").read_text(encoding="utf-8")


def test_render_is_deterministic():
    rs = rules_from_tree(platelets_gb_tree(), DecisionConfig(0.4))
    shuffled = RuleSet(list(reversed(rs.rules)), rs.threshold, rs.features)
    assert render(rs) == render(shuffled)
