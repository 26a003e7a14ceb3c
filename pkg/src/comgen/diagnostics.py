"""Latent statistics per factor combination and drift of unseen combinations.

For a pair of factors ``(a, b)`` each image is keyed by its values of ``a``
and ``b`` and by whether its full combination is in the training split. The
two latents matched to ``a`` and ``b`` are summarized per key. Test groups
are then compared with the position an additive (main-effects) model fitted
on the training groups predicts for them; the gap, measured in pooled
within-group training standard deviations, is the drift.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import MetricError
from .factorspace import FactorSpace

CSV_COLUMNS = ("factor_a", "factor_b", "value_a", "value_b", "split",
               "mean_0", "mean_1", "var_0", "var_1", "count", "latent_0", "latent_1")


@dataclass(frozen=True)
class LatentGroupStats:
    factor_a: str
    factor_b: str
    value_a: float
    value_b: float
    split: str
    latents: tuple[int, int]
    mean: np.ndarray
    var: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise MetricError("a group needs at least one member")
        if self.latents[0] == self.latents[1]:
            raise MetricError("matched latents must be distinct")
        if self.split not in ("train", "test"):
            raise MetricError(f"split tag must be train or test, got {self.split!r}")

    @property
    def key(self) -> tuple[float, float]:
        return (self.value_a, self.value_b)


def encode_means(model, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Encoder means (or supervised outputs) for every image, as float64."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            x = torch.from_numpy(np.ascontiguousarray(images[i:i + batch])).to(dtype)
            out.append(model.encode_mean(x).double().numpy())
    return np.concatenate(out)


def group_stats(latents: np.ndarray, space: FactorSpace, split, factor_a: str, factor_b: str,
                assignment: dict[int, int], flat_indices=None) -> list[LatentGroupStats]:
    """Group precomputed latents (rows aligned with ``flat_indices``, default all combinations)."""
    ja, jb = space.index_of(factor_a), space.index_of(factor_b)
    if ja not in assignment or jb not in assignment:
        raise MetricError(f"assignment {assignment} does not cover {factor_a} and {factor_b}")
    la, lb = int(assignment[ja]), int(assignment[jb])
    flat = np.arange(space.total) if flat_indices is None else np.asarray(flat_indices)
    latents = np.asarray(latents, dtype=np.float64)
    if len(latents) != len(flat):
        raise MetricError(f"{len(latents)} latents for {len(flat)} images")
    grid = space.unflatten(flat)
    va = space.factors[ja].values[grid[:, ja]]
    vb = space.factors[jb].values[grid[:, jb]]
    is_train = np.zeros(space.total, dtype=bool)
    is_train[np.asarray(split.train)] = True
    tag = is_train[flat]
    pair = latents[:, [la, lb]]
    groups = []
    keys = sorted(set(zip(va.tolist(), vb.tolist(), (~tag).tolist())))
    for a_val, b_val, is_test in keys:
        m = (va == a_val) & (vb == b_val) & (tag != is_test)
        pts = pair[m]
        groups.append(LatentGroupStats(factor_a, factor_b, a_val, b_val, "test" if is_test else "train",
                                       (la, lb), pts.mean(axis=0), pts.var(axis=0), int(m.sum())))
    return groups


def group_latents(model, images: np.ndarray, space: FactorSpace, split, factor_a: str, factor_b: str,
                  assignment: dict[int, int]) -> list[LatentGroupStats]:
    return group_stats(encode_means(model, images), space, split, factor_a, factor_b, assignment)


@dataclass
class DriftReport:
    displacements: list = field(default_factory=list)  # (value_a, value_b, displacement)
    drift: float = 0.0
    variance_inflation: np.ndarray = field(default_factory=lambda: np.zeros(2))
    train_baseline: float = 0.0
    pooled_std: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def to_dict(self) -> dict:
        return {
            "drift": self.drift,
            "train_baseline": self.train_baseline,
            "variance_inflation": [float(x) for x in self.variance_inflation],
            "pooled_std": [float(x) for x in self.pooled_std],
            "groups": [{"value_a": a, "value_b": b, "displacement": d} for a, b, d in self.displacements],
        }


def marginal_fit(keys: list[tuple[float, float]], means: np.ndarray):
    """Predictor ``mean_a[a] + mean_b[b] - grand``, each an unweighted mean of group means."""
    keys_a = np.array([k[0] for k in keys])
    keys_b = np.array([k[1] for k in keys])
    grand = means.mean(axis=0)
    row = {v: means[keys_a == v].mean(axis=0) for v in set(keys_a.tolist())}
    col = {v: means[keys_b == v].mean(axis=0) for v in set(keys_b.tolist())}

    def predict(a, b):
        if a not in row or b not in col:
            raise MetricError(f"combination ({a}, {b}) has a value never seen in training groups")
        return row[a] + col[b] - grand

    return predict


def additive_fit(keys: list[tuple[float, float]], means: np.ndarray):
    """Least-squares main-effects model ``mean(a, b) = row[a] + col[b]``; returns a predictor.

    On a complete grid this coincides with :func:`marginal_fit`. On a grid with
    holes it is not pulled by which cells happen to be missing.
    """
    a_levels = sorted({k[0] for k in keys})
    b_levels = sorted({k[1] for k in keys})
    ia = {v: i for i, v in enumerate(a_levels)}
    ib = {v: i for i, v in enumerate(b_levels)}
    X = np.zeros((len(keys), len(a_levels) + len(b_levels)))
    for r, (a, b) in enumerate(keys):
        X[r, ia[a]] = 1.0
        X[r, len(a_levels) + ib[b]] = 1.0
    coef, *_ = np.linalg.lstsq(X, means, rcond=None)

    def predict(a, b):
        if a not in ia or b not in ib:
            raise MetricError(f"combination ({a}, {b}) has a value never seen in training groups")
        return coef[ia[a]] + coef[len(a_levels) + ib[b]]

    return predict


EXPECTATIONS = {"marginal": marginal_fit, "least_squares": additive_fit}


def drift_score(groups: list[LatentGroupStats], expectation: str = "least_squares") -> DriftReport:
    """Mean normalized displacement of test groups from their additive expectation.

    Displacements are measured in units of the pooled within-group standard
    deviation of the training groups, per latent coordinate.

    ``expectation`` picks how the additive model is fitted to the training
    groups: ``least_squares`` main effects, or ``marginal`` (value-a marginal
    plus value-b marginal minus the grand mean). Both agree on a complete
    grid. An excluded region usually leaves holes in the train grid, and there
    the marginal means are pulled by which cells are missing, so exactly
    additive latents would still show drift.
    """
    if expectation not in EXPECTATIONS:
        raise MetricError(f"expectation must be one of {sorted(EXPECTATIONS)}")
    train = [g for g in groups if g.split == "train"]
    test = [g for g in groups if g.split == "test"]
    if not train:
        raise MetricError("drift needs training groups")
    keys = [g.key for g in train]
    means = np.stack([g.mean for g in train])
    predict = EXPECTATIONS[expectation](keys, means)
    counts = np.array([g.count for g in train], dtype=np.float64)
    variances = np.stack([g.var for g in train])
    pooled_var = (counts[:, None] * variances).sum(0) / counts.sum()
    # Singleton groups (every factor of the space is keyed) carry no within-group
    # spread; fall back to the spread of all training images on that coordinate.
    grand_mean = (counts[:, None] * means).sum(0) / counts.sum()
    total_var = (counts[:, None] * (variances + (means - grand_mean) ** 2)).sum(0) / counts.sum()
    pooled_var = np.where(pooled_var > 0, pooled_var, total_var)
    pooled_std = np.sqrt(pooled_var)
    if (pooled_std <= 0).any():
        raise MetricError("training latents do not vary; drift is undefined")

    def displacement(g):
        return float(np.sqrt((((g.mean - predict(*g.key)) / pooled_std) ** 2).sum()))

    disp = [(g.value_a, g.value_b, displacement(g)) for g in test]
    baseline = float(np.mean([displacement(g) for g in train]))
    if test:
        test_var = np.stack([g.var for g in test]).mean(0)
        inflation = test_var / np.maximum(np.stack([g.var for g in train]).mean(0), np.finfo(float).tiny)
    else:
        inflation = np.zeros(2)
    drift = float(np.mean([d for *_, d in disp])) if disp else 0.0
    return DriftReport(disp, drift, inflation, baseline, pooled_std)


def export_group_csv(groups: list[LatentGroupStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for g in groups:
            w.writerow([g.factor_a, g.factor_b, repr(g.value_a), repr(g.value_b), g.split,
                        repr(float(g.mean[0])), repr(float(g.mean[1])),
                        repr(float(g.var[0])), repr(float(g.var[1])), g.count,
                        g.latents[0], g.latents[1]])


def read_group_csv(path) -> list[LatentGroupStats]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LatentGroupStats(r["factor_a"], r["factor_b"], float(r["value_a"]), float(r["value_b"]),
                             r["split"], (int(r["latent_0"]), int(r["latent_1"])),
                             np.array([float(r["mean_0"]), float(r["mean_1"])]),
                             np.array([float(r["var_0"]), float(r["var_1"])]), int(r["count"]))
            for r in rows]


def export_drift_json(report: DriftReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
