"""
What the disentanglement score sees
===================================

Three hand-made latent codes for the same factors: an axis-aligned copy,
a rotated copy, and a code where one latent carries two factors.
"""

import warnings

import numpy as np

from comgen.metrics import build_coefficient_matrix, dci_disentanglement, munkres_assign

rng = np.random.default_rng(0)
n = 4000
V = rng.integers(0, 8, size=(n, 3)) / 7.0


def score(Z, label):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        C = build_coefficient_matrix(Z, V)
    rep = dci_disentanglement(C)
    print(f"{label:10s} D = {rep.D:.3f}  assignment {munkres_assign(C)}")
    print(np.round(C, 2))


aligned = np.zeros((n, 6))
aligned[:, [4, 0, 2]] = V + 0.01 * rng.normal(size=V.shape)
score(aligned, "aligned")

# a random rotation spreads every factor over every latent
Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
score(np.column_stack([V @ Q.T, np.zeros((n, 3))]) + 0.01 * rng.normal(size=(n, 6)), "rotated")

mixed = aligned.copy()
mixed[:, 0] = V[:, 0] + V[:, 1]
score(mixed, "mixed")
