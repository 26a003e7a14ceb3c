"""
Excluding a region of factor space
==================================

Build the Simple dataset, hold out triangles near the centre of the canvas,
and draw composition triplets that never touch the held-out images.
"""

import numpy as np

from comgen.comptask import CompositionSampler, stream
from comgen.factorspace import partition, resolve_condition
from comgen.synthgen import RenderSpec, generate_full, make_dataset

ds = make_dataset("simple")
print(ds.space)

# the exclusion is a conjunction of per-factor atoms
cond = resolve_condition("simple", "midpos")
for atom in cond.atoms:
    print(" ", atom.factor, atom.op, atom.args)

split = partition(ds.space, cond)
print("train", split.train_count, "test", split.test_count)

# every held-out image is a triangle with both coordinates in the middle band
held = ds.space.values_of(ds.space.unflatten(split.test))
print("posX of held-out images:", np.unique(held[:, 1]).round(3))

images = generate_full(ds, RenderSpec(32, 32, 1))
sampler = CompositionSampler(ds.space, split.train)
rng = stream(seed=0)
for og, trans, out, a in sampler.draw_batch(rng, 5):
    name = ds.space.names[a]
    print(f"change {name:5s}: {ds.space.unflatten(og)} + {ds.space.unflatten(trans)} -> {ds.space.unflatten(out)}")

# a crude text rendering of one target image
img = images[out, 0]
for row in img[::2]:
    print("".join(" .:#"[min(3, int(v * 4))] for v in row[::1]))
