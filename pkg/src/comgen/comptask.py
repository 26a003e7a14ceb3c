"""Online sampler for the image composition task.

One draw picks an original combination ``g_og`` uniformly from the training
split, an action ``a`` (the factor to replace) uniformly over factors, and a
transformation combination ``g_trans`` uniformly among training
combinations whose ``a``-th factor differs from ``g_og``'s. The target is
``g_og`` with its ``a``-th factor replaced by ``g_trans[a]``.

With ``restrict_target_to_train`` (the default) transformation candidates
whose target falls outside the training split are rejected, so no test
combination is ever shown during training. When a sampled ``(g_og, a)``
pair admits no candidate at all the pair is redrawn.

Random numbers come from numpy's PCG64 bit generator. The stream for epoch
``e`` of a run seeded with ``s`` is ``PCG64(SeedSequence(s, spawn_key=(e,)))``;
parallel workers append their worker id to the spawn key.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import quantize
from .errors import SamplerError
from .factorspace import FactorSpace, FactorVector

MAX_REDRAWS = 10_000


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    restrict_target_to_train: bool = True


@dataclass(frozen=True)
class CompositionSample:
    x_og: np.ndarray
    x_trans: np.ndarray
    x_out: np.ndarray
    g_og: FactorVector
    g_trans: FactorVector
    g_out: FactorVector
    a: int
    q: np.ndarray


def one_hot(a: int, n: int) -> np.ndarray:
    q = np.zeros(n, dtype=np.float32)
    q[a] = 1.0
    return q


def stream(seed: int, epoch: int = 0, worker: int | None = None) -> np.random.Generator:
    key = (epoch,) if worker is None else (epoch, worker)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


class CompositionSampler:
    """Draws composition triplets over a fixed factor space and training split."""

    def __init__(self, space: FactorSpace, train_indices, restrict_target_to_train: bool = True):
        train = np.unique(np.asarray(train_indices, dtype=np.int64))
        if train.size == 0:
            raise SamplerError("training split is empty")
        if train[0] < 0 or train[-1] >= space.total:
            raise SamplerError("training indices out of range for the factor space")
        self.space = space
        self.train = train
        self.restrict = restrict_target_to_train
        self.n_factors = len(space)
        self._grid = space.unflatten(train)
        mask = np.zeros(space.total, dtype=bool)
        mask[train] = True
        self._train_mask = mask.reshape(space.shape)
        # members[a][v]: flat train indices whose a-th factor sits at level v
        self._members = [[train[self._grid[:, a] == v] for v in range(space.shape[a])]
                         for a in range(self.n_factors)]
        self._counts = [np.array([len(m) for m in ms], dtype=np.float64) for ms in self._members]

    def _admissible(self, og: np.ndarray, a: int) -> np.ndarray:
        weights = self._counts[a].copy()
        weights[og[a]] = 0.0
        if self.restrict:
            line = list(og)
            line[a] = slice(None)
            weights[~self._train_mask[tuple(line)]] = 0.0
        return weights

    def draw(self, rng: np.random.Generator) -> tuple[int, int, int, int]:
        """One triplet as flat indices ``(og, trans, out, a)``."""
        for _ in range(MAX_REDRAWS):
            og_flat = int(self.train[rng.integers(len(self.train))])
            a = int(rng.integers(self.n_factors))
            og = self.space.unflatten(og_flat)
            weights = self._admissible(og, a)
            total = weights.sum()
            if total == 0:
                continue
            v = int(rng.choice(len(weights), p=weights / total))
            members = self._members[a][v]
            trans_flat = int(members[rng.integers(len(members))])
            out = og.copy()
            out[a] = v
            return og_flat, trans_flat, self.space.flat_index(out), a
        raise SamplerError(f"no admissible transformation image after {MAX_REDRAWS} redraws; "
                           "the split is degenerate for the composition task")

    def draw_batch(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        """``(batch, 4)`` int array of ``(og, trans, out, a)`` rows."""
        return np.array([self.draw(rng) for _ in range(batch)], dtype=np.int64).reshape(batch, 4)

    def make_sample(self, images: np.ndarray, og: int, trans: int, out: int, a: int) -> CompositionSample:
        og, trans, out, a = int(og), int(trans), int(out), int(a)
        return CompositionSample(
            x_og=images[og], x_trans=images[trans], x_out=images[out],
            g_og=self.space.from_flat(og), g_trans=self.space.from_flat(trans),
            g_out=self.space.from_flat(out), a=a, q=one_hot(a, self.n_factors))


def _check_images(space: FactorSpace, images: np.ndarray) -> None:
    if len(images) != space.total:
        raise SamplerError(f"{len(images)} images do not cover the {space.total} combinations")


def sample_triplet(space: FactorSpace, train_indices, images: np.ndarray, rng: np.random.Generator,
                   restrict_target_to_train: bool = True) -> CompositionSample:
    _check_images(space, images)
    sampler = CompositionSampler(space, train_indices, restrict_target_to_train)
    return sampler.make_sample(images, *sampler.draw(rng))


def sample_batch(space: FactorSpace, train_indices, images: np.ndarray, rng: np.random.Generator,
                 batch: int, restrict_target_to_train: bool = True) -> list[CompositionSample]:
    _check_images(space, images)
    sampler = CompositionSampler(space, train_indices, restrict_target_to_train)
    return [sampler.make_sample(images, *row) for row in sampler.draw_batch(rng, batch)]


def dump_samples(samples: list[CompositionSample], directory) -> None:
    """Debug dump: ``triplets.u8`` (og, trans, out per sample, channels last) and ``index.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise SamplerError("nothing to dump")
    c, h, w = samples[0].x_og.shape
    stack = np.stack([np.stack([s.x_og, s.x_trans, s.x_out]) for s in samples])
    (directory / "triplets.u8").write_bytes(quantize(stack).transpose(0, 1, 3, 4, 2).tobytes())
    index = {
        "magic": "FIDS1-triplets",
        "height": h, "width": w, "channels": c, "count": len(samples),
        "samples": [{"a": s.a, "q": s.q.astype(int).tolist(),
                     "g_og": list(s.g_og.indices), "g_trans": list(s.g_trans.indices),
                     "g_out": list(s.g_out.indices)} for s in samples],
    }
    (directory / "index.json").write_text(json.dumps(index, indent=1) + "\n")
