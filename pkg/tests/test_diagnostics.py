import json

import numpy as np
import pytest
from comgen.diagnostics import (
    LatentGroupStats,
    drift_score,
    export_drift_json,
    export_group_csv,
    group_latents,
    group_stats,
    read_group_csv,
)
from comgen.errors import MetricError
from comgen.factorspace import builtin_conditions, partition
from comgen.nnmodels import CompositionModel, tiny_profile
from comgen.synthgen import make_dataset


@pytest.fixture(scope="module")
def simple_space():
    ds = make_dataset("simple", posX=6, posY=6)
    split = partition(ds.space, builtin_conditions("simple")["simple_midpos"])
    return ds.space, split


def additive_latents(space, rng=None, noise=0.0):
    """Latent 0 tracks factor 0, latent 1 tracks factor 1, latent 2 tracks factor 2."""
    V = space.values_of(space.all_indices())
    Z = np.zeros((space.total, 4))
    Z[:, :3] = 2.0 * V + 0.5
    if noise:
        Z += noise * rng.normal(size=Z.shape)
    return Z


def test_groups_partition_images(simple_space):
    space, split = simple_space
    Z = additive_latents(space, np.random.default_rng(0), 0.05)
    groups = group_stats(Z, space, split, "shape", "posX", {0: 0, 1: 1, 2: 2})
    assert sum(g.count for g in groups) == space.total
    keys = {(g.value_a, g.value_b, g.split) for g in groups}
    assert len(keys) == len(groups)
    # triangle with a middle posX appears both in train (posY outside) and test (posY inside)
    assert any(g.split == "test" for g in groups)
    assert all(g.latents == (0, 1) for g in groups)


def test_constant_encoder_zero_variance(simple_space):
    space, split = simple_space
    Z = np.ones((space.total, 10))
    groups = group_stats(Z, space, split, "shape", "posX", {0: 3, 1: 7})
    assert all(np.all(g.var == 0) for g in groups)
    with pytest.raises(MetricError):
        drift_score(groups)


def test_assignment_must_cover_factors(simple_space):
    space, split = simple_space
    with pytest.raises(MetricError):
        group_stats(np.zeros((space.total, 10)), space, split, "shape", "posX", {0: 0})


def make_group(a, b, split, mean, var=(1.0, 1.0), count=4):
    return LatentGroupStats("fa", "fb", a, b, split, (0, 1), np.array(mean, float), np.array(var, float), count)


def grid_groups(shift=None):
    groups = []
    for a in (0.0, 1.0):
        for b in (0.0, 0.5, 1.0):
            groups.append(make_group(a, b, "train", [a, 2 * b]))
    test_mean = [1.0, 1.0] if shift is None else [1.0 + shift[0], 1.0 + shift[1]]
    groups.append(make_group(1.0, 0.5, "test", test_mean, var=(4.0, 1.0)))
    return groups


def test_exactly_additive_gives_zero_drift():
    row, col = {0.0: 1.0, 0.5: -2.0, 1.0: 0.5}, {0.0: 0.0, 0.5: 3.0, 1.0: 1.0}
    groups = [make_group(a, b, "test" if (a, b) in ((1.0, 1.0), (0.5, 1.0)) else "train",
                         [row[a] + col[b], 2 * row[a] - col[b]]) for a in row for b in col]
    # with holes in the grid only the least-squares fit recovers the main effects exactly
    rep = drift_score(groups, "least_squares")
    assert rep.drift == pytest.approx(0, abs=1e-12)
    assert rep.train_baseline == pytest.approx(0, abs=1e-12)
    complete = [g for g in groups if g.split == "train"] + \
               [make_group(1.0, 1.0, "train", [row[1.0] + col[1.0], 2 * row[1.0] - col[1.0]]),
                make_group(0.5, 1.0, "train", [row[0.5] + col[1.0], 2 * row[0.5] - col[1.0]]),
                make_group(0.5, 1.0, "test", [row[0.5] + col[1.0], 2 * row[0.5] - col[1.0]])]
    assert drift_score(complete, "marginal").drift == pytest.approx(0, abs=1e-12)


def test_unit_displacement():
    rep = drift_score(grid_groups(shift=(1.0, 0.0)))
    assert rep.displacements == [(1.0, 0.5, pytest.approx(1.0))]
    assert rep.drift == pytest.approx(1.0)
    assert rep.variance_inflation.tolist() == [4.0, 1.0]


def test_marginal_formula_matches_definition():
    # incomplete grid: (1, 1) missing from train
    groups = [make_group(a, b, "train", [a + b + (a * b), a]) for a in (0.0, 1.0) for b in (0.0, 1.0)
              if (a, b) != (1.0, 1.0)]
    groups.append(make_group(1.0, 1.0, "test", [0.0, 0.0]))
    rep = drift_score(groups, "marginal")
    means = {g.key: g.mean for g in groups if g.split == "train"}
    grand = np.mean(list(means.values()), axis=0)
    ma = np.mean([m for k, m in means.items() if k[0] == 1.0], axis=0)
    mb = np.mean([m for k, m in means.items() if k[1] == 1.0], axis=0)
    expected = np.linalg.norm(ma + mb - grand)
    assert rep.drift == pytest.approx(expected)


def test_missing_marginal_is_error():
    groups = [make_group(0.0, 0.0, "train", [0, 0]), make_group(0.0, 1.0, "train", [0, 1]),
              make_group(1.0, 2.0, "test", [1, 1])]
    with pytest.raises(MetricError):
        drift_score(groups)


def test_affine_invariance(simple_space):
    space, split = simple_space
    Z = additive_latents(space, np.random.default_rng(2), 0.1)
    Z[:, 1] += 0.3 * (Z[:, 0] > 1.5) * (np.abs(Z[:, 1] - 1.5) < 0.5)  # interaction in the test region
    base = drift_score(group_stats(Z, space, split, "shape", "posX", {0: 0, 1: 1}))
    Z2 = Z.copy()
    Z2[:, 1] = -7.0 * Z2[:, 1] + 3.0
    scaled = drift_score(group_stats(Z2, space, split, "shape", "posX", {0: 0, 1: 1}))
    assert scaled.drift == pytest.approx(base.drift, rel=1e-9)
    assert base.drift > 0


def test_csv_roundtrip(tmp_path, simple_space):
    space, split = simple_space
    Z = additive_latents(space, np.random.default_rng(3), 0.1)
    groups = group_stats(Z, space, split, "shape", "posX", {0: 0, 1: 1})
    export_group_csv(groups, tmp_path / "g.csv")
    back = read_group_csv(tmp_path / "g.csv")
    assert len(back) == len(groups)
    for a, b in zip(groups, back):
        assert (a.factor_a, a.factor_b, a.value_a, a.value_b, a.split, a.count, a.latents) == \
               (b.factor_a, b.factor_b, b.value_a, b.value_b, b.split, b.count, b.latents)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.var, b.var)
    header = (tmp_path / "g.csv").read_text().splitlines()[0].split(",")
    assert header[:10] == ["factor_a", "factor_b", "value_a", "value_b", "split",
                           "mean_0", "mean_1", "var_0", "var_1", "count"]


def test_empty_csv(tmp_path):
    export_group_csv([], tmp_path / "e.csv")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 1
    assert read_group_csv(tmp_path / "e.csv") == []


def test_drift_json(tmp_path):
    export_drift_json(drift_score(grid_groups(shift=(0.0, 2.0))), tmp_path / "d.json")
    d = json.loads((tmp_path / "d.json").read_text())
    assert d["drift"] == pytest.approx(2.0)
    assert set(d) == {"drift", "train_baseline", "variance_inflation", "pooled_std", "groups"}


def test_group_latents_deterministic(simple_space):
    space, split = simple_space
    ds = make_dataset("simple", posX=6, posY=6)
    images = np.random.default_rng(4).random((space.total, 1, 16, 16)).astype(np.float32)
    model = CompositionModel(tiny_profile(n_factors=3))
    a = group_latents(model, images, ds.space, split, "posX", "posY", {1: 4, 2: 5})
    b = group_latents(model, images, ds.space, split, "posX", "posY", {1: 4, 2: 5})
    assert all(np.array_equal(x.mean, y.mean) for x, y in zip(a, b))


def test_singleton_groups_use_total_spread():
    groups = [make_group(a, b, "train", [a, b], var=(0.0, 0.0), count=1)
              for a in (0.0, 1.0) for b in (0.0, 1.0) if (a, b) != (1.0, 1.0)]
    groups.append(make_group(1.0, 1.0, "test", [1.0, 1.0 + 2 * np.sqrt(2) / 3], var=(0.0, 0.0), count=1))
    rep = drift_score(groups, "least_squares")
    # each coordinate takes values {0, 0, 1} over the three training images: std sqrt(2)/3
    assert np.allclose(rep.pooled_std, np.sqrt(2) / 3)
    assert rep.drift == pytest.approx(2.0)
