import itertools
import json
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comgen.errors import ConfigurationError, SplitError
from comgen.factorspace import (
    CATEGORICAL,
    Atom,
    FactorSpace,
    FactorSpec,
    SplitCondition,
    builtin_conditions,
    evaluate_condition,
    partition,
    read_split_manifest,
    write_split_manifest,
)
from comgen.synthgen import make_dataset


def simple_like():
    return FactorSpace([FactorSpec("shape", 2, CATEGORICAL, ("square", "triangle")),
                        FactorSpec("posX", 4), FactorSpec("posY", 4)])


def brute_force(space, atoms):
    """Decimal re-evaluation of a conjunction over every combination."""
    hits = []
    for flat, idx in enumerate(itertools.product(*(range(k) for k in space.shape))):
        ok = True
        for name, op, args in atoms:
            j = space.names.index(name)
            k = space.shape[j]
            num, den = idx[j], max(k - 1, 1)
            if op == "eq":
                ok &= any(num * Decimal(1) == Decimal(str(a)) * den for a in args)
            elif op == "gt":
                ok &= num > Decimal(str(args[0])) * den
            elif op == "lt":
                ok &= num < Decimal(str(args[0])) * den
            else:
                ok &= Decimal(str(args[0])) * den < num < Decimal(str(args[1])) * den
        if ok:
            hits.append(flat)
    return hits


def test_factor_values_normalized():
    f = FactorSpec("posX", 8)
    assert f.values[0] == 0 and f.values[-1] == 1
    assert np.all(np.diff(f.values) > 0)
    assert FactorSpec("x", 1).values.tolist() == [0.0]


def test_space_invariants():
    with pytest.raises(ConfigurationError):
        FactorSpace([FactorSpec("a", 2), FactorSpec("a", 3)])
    with pytest.raises(ConfigurationError):
        FactorSpec("a", 0)
    s = simple_like()
    assert s.total == 32
    # row-major, last factor fastest
    assert s.flat_index((0, 0, 1)) == 1
    assert s.flat_index((1, 0, 0)) == 16
    fv = s.vector((1, 2, 0))
    assert fv.values == (1.0, 2 / 3, 0.0)


def test_evaluate_condition_examples():
    s = simple_like()
    cond = SplitCondition((Atom.equals("shape", 1), Atom.gt("posX", 0.5)))
    assert evaluate_condition(cond, s.vector((1, 2, 0)), s)
    assert not evaluate_condition(cond, s.vector((0, 3, 0)), s)


def test_midpos_example_triangle_centre():
    space = FactorSpace([FactorSpec("shape", 2, CATEGORICAL, ("square", "triangle")),
                         FactorSpec("posX", 3), FactorSpec("posY", 3)])
    cond = builtin_conditions("simple")["simple_midpos"]
    assert evaluate_condition(cond, space.vector((1, 1, 1)), space)
    assert not evaluate_condition(cond, space.vector((0, 1, 1)), space)


def test_unknown_factor_is_configuration_error():
    s = simple_like()
    with pytest.raises(ConfigurationError):
        evaluate_condition(SplitCondition((Atom.gt("scale", 0.5),)), s.vector((0, 0, 0)), s)


def test_categorical_threshold_rejected():
    s = simple_like()
    with pytest.raises(ConfigurationError):
        partition(s, SplitCondition((Atom.gt("shape", 0.5),)))


def test_partition_counts():
    s = simple_like()
    split = partition(s, SplitCondition((Atom.equals("shape", 1), Atom.gt("posX", 0.5))))
    assert (split.test_count, split.train_count) == (8, 24)
    assert split.test.tolist() == brute_force(s, [("shape", "eq", (1,)), ("posX", "gt", (0.5,))])


def test_partition_matching_nothing():
    s = simple_like()
    split = partition(s, SplitCondition((Atom.gt("posX", 1.0),)))
    assert split.test_count == 0 and split.train_count == 32


def test_circles_corner_grid():
    ds = make_dataset("circles")
    split = partition(ds.space, builtin_conditions("circles")["circles_corner"])
    assert (split.test_count, split.train_count) == (16, 48)


def test_threshold_on_grid_point_is_strict():
    space = FactorSpace([FactorSpec("posX", 3)])  # grid 0, 1/2, 1
    split = partition(space, SplitCondition((Atom.gt("posX", 0.5),)))
    assert split.test.tolist() == [2]


def test_empty_train_is_error():
    s = simple_like()
    with pytest.raises(SplitError):
        partition(s, SplitCondition((Atom.lt("posX", 2.0),)))


def test_builtin_catalogs():
    assert "simple_midpos" in builtin_conditions("simple")
    sq = builtin_conditions("sprites2d")["sprites2d_sqr2px"]
    assert {(a.factor, a.op) for a in sq.atoms} == {("shape", "equals"), ("posX", "gt")}
    bands = builtin_conditions("bands")["bands_success"]
    assert {(a.factor, a.op, a.args) for a in bands.atoms} == {("band_hue", "lt", (0.25,)),
                                                               ("sprite_hue", "gt", (0.75,))}
    with pytest.raises(ConfigurationError):
        builtin_conditions("mnist")


def test_manifest_roundtrip(tmp_path):
    ds = make_dataset("simple")
    split = partition(ds.space, builtin_conditions("simple")["simple_midpos"])
    path = tmp_path / "split.json"
    write_split_manifest(split, "simple", path)
    d = json.loads(path.read_text())
    assert set(d) == {"dataset", "condition_name", "atoms", "train_count", "test_count", "test_indices"}
    assert d["test_indices"] == sorted(d["test_indices"])
    again = read_split_manifest(path, ds.space)
    assert np.array_equal(again.test, split.test)


atoms_strategy = st.lists(
    st.one_of(
        st.tuples(st.sampled_from(["a", "b", "c"]), st.just("gt"),
                  st.tuples(st.sampled_from([0.0, 0.2, 0.25, 0.5, 0.75, 0.9]))),
        st.tuples(st.sampled_from(["a", "b", "c"]), st.just("lt"),
                  st.tuples(st.sampled_from([0.1, 0.25, 0.5, 0.6, 1.0]))),
        st.tuples(st.sampled_from(["a", "b", "c"]), st.just("between"),
                  st.tuples(st.just(0.35), st.just(0.65))),
    ), min_size=1, max_size=3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=3, max_size=3), atoms_strategy)
def test_partition_matches_brute_force(cards, atoms):
    space = FactorSpace([FactorSpec(n, k) for n, k in zip("abc", cards)])
    cond = SplitCondition(tuple(Atom(n, op, args) for n, op, args in atoms))
    expected = brute_force(space, atoms)
    if len(expected) == space.total:
        with pytest.raises(SplitError):
            partition(space, cond)
        return
    split = partition(space, cond)
    assert split.test.tolist() == expected
    assert sorted(np.concatenate([split.train, split.test]).tolist()) == list(range(space.total))
    # per-vector evaluation agrees, and is repeatable
    for flat in range(space.total):
        fv = space.from_flat(flat)
        hit = evaluate_condition(cond, fv, space)
        assert hit == (flat in expected) == evaluate_condition(cond, fv, space)
