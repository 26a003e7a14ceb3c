"""Generative-factor grids, exclusion predicates and exhaustive train/test splits.

Every factor lives on a normalized grid: level ``i`` of a factor with ``K``
levels has value ``i / (K - 1)`` (a single-level factor sits at 0). Threshold
comparisons are evaluated on the exact rational grid values so that a
threshold falling on a grid point is handled without rounding surprises.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, SplitError

CATEGORICAL = "categorical"
ORDINAL = "ordinal"

MAX_ENUMERABLE = 10**7


def _grid_fraction(index: int, cardinality: int) -> Fraction:
    if cardinality == 1:
        return Fraction(0)
    return Fraction(index, cardinality - 1)


def _as_fraction(x) -> Fraction:
    # Fraction(str(0.35)) == 7/20, whereas Fraction(0.35) is the binary double.
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class FactorSpec:
    name: str
    cardinality: int
    kind: str = ORDINAL
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name or not str(self.name).isidentifier():
            raise ConfigurationError(f"factor name {self.name!r} is not an identifier")
        if self.kind not in (CATEGORICAL, ORDINAL):
            raise ConfigurationError(f"unknown factor kind {self.kind!r}")
        if int(self.cardinality) < 1:
            raise ConfigurationError(f"factor {self.name}: cardinality must be positive")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.cardinality:
                raise ConfigurationError(f"factor {self.name}: {len(self.labels)} labels for "
                                         f"cardinality {self.cardinality}")

    @property
    def fractions(self) -> tuple[Fraction, ...]:
        return tuple(_grid_fraction(i, self.cardinality) for i in range(self.cardinality))

    @property
    def values(self) -> np.ndarray:
        return np.array([float(f) for f in self.fractions])

    def label_index(self, label: str) -> int:
        if self.labels is None or label not in self.labels:
            raise ConfigurationError(f"factor {self.name} has no level labelled {label!r}")
        return self.labels.index(label)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "cardinality": self.cardinality,
             "values": self.values.tolist()}
        if self.labels is not None:
            d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        spec = cls(d["name"], int(d["cardinality"]), d.get("kind", ORDINAL),
                   tuple(d["labels"]) if d.get("labels") is not None else None)
        if "values" in d and not np.array_equal(np.asarray(d["values"], dtype=float), spec.values):
            raise ConfigurationError(f"factor {spec.name}: stored values are not the normalized grid")
        return spec


@dataclass(frozen=True)
class FactorVector:
    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __getitem__(self, i):
        return self.indices[i]


class FactorSpace:
    """Ordered product of factor grids; flat indices are row-major (last factor fastest)."""

    def __init__(self, factors: Sequence[FactorSpec]):
        factors = tuple(factors)
        names = [f.name for f in factors]
        if not factors:
            raise ConfigurationError("a factor space needs at least one factor")
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate factor names in {names}")
        self.factors = factors
        self.names = tuple(names)
        self.shape = tuple(f.cardinality for f in factors)
        self.total = math.prod(self.shape)

    def __repr__(self):
        inner = ", ".join(f"{f.name}{{{f.cardinality}}}" for f in self.factors)
        return f"FactorSpace({inner})"

    def __eq__(self, other):
        return isinstance(other, FactorSpace) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    def __len__(self):
        return len(self.factors)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown factor {name!r}; space has {list(self.names)}") from None

    def factor(self, name: str) -> FactorSpec:
        return self.factors[self.index_of(name)]

    def vector(self, indices: Sequence[int]) -> FactorVector:
        indices = tuple(int(i) for i in indices)
        if len(indices) != len(self.factors):
            raise ConfigurationError(f"expected {len(self.factors)} indices, got {len(indices)}")
        for i, f in zip(indices, self.factors):
            if not 0 <= i < f.cardinality:
                raise ConfigurationError(f"index {i} out of range for factor {f.name}")
        values = tuple(float(_grid_fraction(i, f.cardinality)) for i, f in zip(indices, self.factors))
        return FactorVector(indices, values)

    def contains(self, fv: FactorVector) -> bool:
        if len(fv.indices) != len(self.factors):
            return False
        try:
            return self.vector(fv.indices) == fv
        except ConfigurationError:
            return False

    def flat_index(self, indices: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(indices), self.shape))

    def unflatten(self, flat) -> np.ndarray:
        """Grid indices for one or many flat indices, shape ``(..., n_factors)``."""
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def from_flat(self, flat: int) -> FactorVector:
        return self.vector(self.unflatten(int(flat)))

    def all_indices(self) -> np.ndarray:
        """Grid indices of every combination, ``(total, n_factors)`` in flat order."""
        if self.total > MAX_ENUMERABLE:
            raise SplitError(f"{self.total} combinations exceed the enumeration cap {MAX_ENUMERABLE}")
        return self.unflatten(np.arange(self.total))

    def values_of(self, indices: np.ndarray) -> np.ndarray:
        """Normalized factor values for an ``(n, n_factors)`` array of grid indices."""
        indices = np.asarray(indices)
        cols = [f.values[indices[..., j]] for j, f in enumerate(self.factors)]
        return np.stack(cols, axis=-1)

    def __iter__(self) -> Iterator[FactorVector]:
        for row in self.all_indices():
            yield self.vector(row)

    def to_list(self) -> list[dict]:
        return [f.to_dict() for f in self.factors]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "FactorSpace":
        return cls([FactorSpec.from_dict(d) for d in items])


# --- conditions -------------------------------------------------------------

EQUALS = "equals"
GREATER = "gt"
LESS = "lt"
BETWEEN = "between"


@dataclass(frozen=True)
class Atom:
    """One per-factor constraint of a conjunctive exclusion condition.

    ``equals`` takes a set of values; each may be a normalized value or a
    level label of a categorical factor.
    """

    factor: str
    op: str
    args: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if self.op not in (EQUALS, GREATER, LESS, BETWEEN):
            raise ConfigurationError(f"unknown atom operator {self.op!r}")
        expected = {GREATER: 1, LESS: 1, BETWEEN: 2}.get(self.op)
        if expected is not None and len(self.args) != expected:
            raise ConfigurationError(f"{self.op} takes {expected} argument(s), got {self.args}")
        if self.op == EQUALS and not self.args:
            raise ConfigurationError("equals needs at least one value")

    @staticmethod
    def equals(factor: str, *values) -> "Atom":
        return Atom(factor, EQUALS, values)

    @staticmethod
    def gt(factor: str, threshold: float) -> "Atom":
        return Atom(factor, GREATER, (threshold,))

    @staticmethod
    def lt(factor: str, threshold: float) -> "Atom":
        return Atom(factor, LESS, (threshold,))

    @staticmethod
    def between(factor: str, lo: float, hi: float) -> "Atom":
        return Atom(factor, BETWEEN, (lo, hi))

    def _resolve_equals(self, spec: FactorSpec) -> set[Fraction]:
        out = set()
        for v in self.args:
            if isinstance(v, str):
                out.add(spec.fractions[spec.label_index(v)])
            else:
                out.add(_as_fraction(v))
        return out

    def level_mask(self, spec: FactorSpec) -> np.ndarray:
        """Boolean mask over the factor's levels for which this atom holds."""
        if spec.kind == CATEGORICAL and self.op != EQUALS:
            raise ConfigurationError(f"categorical factor {spec.name} only supports equality")
        fracs = spec.fractions
        if self.op == EQUALS:
            wanted = self._resolve_equals(spec)
            return np.array([f in wanted for f in fracs])
        if self.op == GREATER:
            t = _as_fraction(self.args[0])
            return np.array([f > t for f in fracs])
        if self.op == LESS:
            t = _as_fraction(self.args[0])
            return np.array([f < t for f in fracs])
        lo, hi = (_as_fraction(a) for a in self.args)
        return np.array([lo < f < hi for f in fracs])

    def holds(self, spec: FactorSpec, index: int) -> bool:
        return bool(self.level_mask(spec)[index])

    def to_dict(self) -> dict:
        return {"factor": self.factor, "op": self.op, "args": list(self.args)}

    @classmethod
    def from_dict(cls, d: dict) -> "Atom":
        return cls(d["factor"], d["op"], tuple(d["args"]))


@dataclass(frozen=True)
class SplitCondition:
    atoms: tuple[Atom, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ConfigurationError("a split condition needs at least one atom")

    def validate(self, space: FactorSpace) -> None:
        for atom in self.atoms:
            atom.level_mask(space.factor(atom.factor))

    def to_dict(self) -> dict:
        return {"name": self.name, "atoms": [a.to_dict() for a in self.atoms]}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitCondition":
        return cls(tuple(Atom.from_dict(a) for a in d["atoms"]), d.get("name", ""))


def evaluate_condition(cond: SplitCondition, fv: FactorVector, space: FactorSpace) -> bool:
    """True iff every atom of ``cond`` holds at the combination ``fv``."""
    for atom in cond.atoms:
        j = space.index_of(atom.factor)
        if not atom.holds(space.factors[j], fv.indices[j]):
            return False
    return True


def condition_mask(cond: SplitCondition, space: FactorSpace) -> np.ndarray:
    """Boolean mask over all flat indices, True where the condition holds."""
    cond.validate(space)
    mask = np.ones(space.shape, dtype=bool)
    for atom in cond.atoms:
        j = space.index_of(atom.factor)
        level = atom.level_mask(space.factors[j])
        shape = [1] * len(space.shape)
        shape[j] = -1
        mask &= level.reshape(shape)
    return mask.reshape(-1)


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    test: np.ndarray
    condition: SplitCondition
    total: int

    @property
    def train_count(self) -> int:
        return len(self.train)

    @property
    def test_count(self) -> int:
        return len(self.test)

    def is_train(self, flat) -> np.ndarray:
        mask = np.zeros(self.total, dtype=bool)
        mask[self.train] = True
        return mask[np.asarray(flat)]

    def manifest(self, dataset: str) -> dict:
        return {
            "dataset": dataset,
            "condition_name": self.condition.name,
            "atoms": [a.to_dict() for a in self.condition.atoms],
            "train_count": int(self.train_count),
            "test_count": int(self.test_count),
            "test_indices": [int(i) for i in self.test],
        }


def partition(space: FactorSpace, cond: SplitCondition) -> DatasetSplit:
    if space.total > MAX_ENUMERABLE:
        raise SplitError(f"{space.total} combinations exceed the enumeration cap {MAX_ENUMERABLE}")
    mask = condition_mask(cond, space)
    test = np.flatnonzero(mask)
    train = np.flatnonzero(~mask)
    if len(train) == 0:
        raise SplitError(f"condition {cond.name or cond.atoms} excludes every combination")
    return DatasetSplit(train, test, cond, space.total)


def write_split_manifest(split: DatasetSplit, dataset: str, path) -> None:
    Path(path).write_text(json.dumps(split.manifest(dataset), indent=2) + "\n")


def read_split_manifest(path, space: FactorSpace) -> DatasetSplit:
    d = json.loads(Path(path).read_text())
    cond = SplitCondition(tuple(Atom.from_dict(a) for a in d["atoms"]), d["condition_name"])
    split = partition(space, cond)
    if split.test.tolist() != d["test_indices"] or split.train_count != d["train_count"]:
        raise SplitError(f"manifest {path} disagrees with the condition it records")
    return split


# --- built-in catalog -------------------------------------------------------

def builtin_conditions(dataset: str) -> dict[str, SplitCondition]:
    def cond(name, *atoms):
        return name, SplitCondition(atoms, name)

    catalog = {
        "circles": [
            cond("circles_corner", Atom.gt("posX", 0.5), Atom.gt("posY", 0.5)),
            cond("circles_midpos", Atom.between("posX", 0.35, 0.65), Atom.between("posY", 0.35, 0.65)),
        ],
        "simple": [
            cond("simple_corner", Atom.equals("shape", "triangle"),
                 Atom.gt("posX", 0.5), Atom.gt("posY", 0.75)),
            cond("simple_midpos", Atom.equals("shape", "triangle"),
                 Atom.between("posX", 0.35, 0.65), Atom.between("posY", 0.35, 0.65)),
        ],
        "sprites2d": [
            cond("sprites2d_sqr2px", Atom.equals("shape", "square"), Atom.gt("posX", 0.5)),
        ],
        "bands": [
            cond("bands_success", Atom.lt("band_hue", 0.25), Atom.gt("sprite_hue", 0.75)),
        ],
    }
    if dataset not in catalog:
        raise ConfigurationError(f"no built-in conditions for dataset {dataset!r}")
    return dict(catalog[dataset])


def resolve_condition(dataset: str, name: str) -> SplitCondition:
    catalog = builtin_conditions(dataset)
    for key in (name, f"{dataset}_{name}"):
        if key in catalog:
            return catalog[key]
    raise ConfigurationError(f"dataset {dataset!r} has no condition {name!r}; "
                             f"choose from {sorted(catalog)}")
