"""DCI scores from a latent-by-factor importance matrix.

``C[i, j]`` is the absolute Lasso coefficient of latent ``i`` when regressing
factor ``j`` on all latents. Each latent's row, normalized to a distribution
over factors, gets an entropy in base ``J`` (number of factors); its
disentanglement is one minus that entropy, and the aggregate weights latents
by their share of the total importance so dead units drop out.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MetricError
from .lasso import DEFAULT_ALPHA, lasso_fit

# DCI evaluation draws at most this many encoded images from a split.
DEFAULT_SAMPLE_SIZE = 10_000


def build_coefficient_matrix(Z, V, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``(L, J)`` matrix of absolute Lasso coefficients of latents ``Z`` for factors ``V``."""
    Z = np.asarray(Z, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Z.ndim != 2 or V.ndim != 2 or Z.shape[0] != V.shape[0]:
        raise MetricError(f"need paired samples, got Z {Z.shape} and V {V.shape}")
    return np.stack([np.abs(lasso_fit(Z, V[:, j], alpha).coef) for j in range(V.shape[1])], axis=1)


def _entropy_rows(P: np.ndarray, base: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(P > 0, np.log(np.where(P > 0, P, 1.0)), 0.0)
    return -(P * logs).sum(axis=1) / np.log(base)


@dataclass
class DisentanglementReport:
    C: np.ndarray
    P: np.ndarray
    entropy: np.ndarray
    d: np.ndarray
    rho: np.ndarray
    dead: np.ndarray
    D: float

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(x) else float(x) for x in np.ravel(a)]

        return {
            "disentanglement": self.D,
            "per_latent": clean(self.d),
            "entropy": clean(self.entropy),
            "rho": clean(self.rho),
            "dead": [bool(x) for x in self.dead],
            "C": [[float(x) for x in row] for row in self.C],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def dci_disentanglement(C) -> DisentanglementReport:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise MetricError("C must be a matrix")
    L, J = C.shape
    if J < 2:
        raise MetricError("disentanglement needs at least two factors")
    if (C < 0).any() or not np.isfinite(C).all():
        raise MetricError("C must be finite and non-negative")
    total = C.sum()
    if total == 0:
        raise MetricError("C is all zeros; disentanglement is undefined")
    row_sums = C.sum(axis=1)
    dead = row_sums == 0
    P = np.zeros_like(C)
    P[~dead] = C[~dead] / row_sums[~dead, None]
    H = np.full(L, np.nan)
    H[~dead] = _entropy_rows(P[~dead], J)
    d = 1.0 - H
    rho = row_sums / total
    D = float(np.sum(rho[~dead] * d[~dead]))
    return DisentanglementReport(C, P, H, d, rho, dead, min(max(D, 0.0), 1.0))


def dci_completeness(C) -> tuple[np.ndarray, float]:
    """Per-factor completeness (base-``L`` entropy down each column) and its weighted mean."""
    C = np.asarray(C, dtype=np.float64)
    L = C.shape[0]
    if L < 2:
        raise MetricError("completeness needs at least two latents")
    col = C.sum(axis=0)
    if col.sum() == 0:
        raise MetricError("C is all zeros; completeness is undefined")
    live = col > 0
    c = np.full(C.shape[1], np.nan)
    c[live] = 1.0 - _entropy_rows((C[:, live] / col[live]).T, L)
    w = col / col.sum()
    return c, float(np.sum(w[live] * c[live]))


def dci_informativeness(Z_train, V_train, Z_test, V_test, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Held-out mean squared prediction error per factor."""
    V_train = np.asarray(V_train, dtype=np.float64)
    V_test = np.asarray(V_test, dtype=np.float64)
    errs = []
    for j in range(V_train.shape[1]):
        fit = lasso_fit(Z_train, V_train[:, j], alpha)
        errs.append(float(np.mean((fit.predict(Z_test) - V_test[:, j]) ** 2)))
    return np.array(errs)


def write_hinton_csv(C, path, factor_names=None) -> None:
    """Coefficient matrix with latent row labels and factor column headers."""
    C = np.asarray(C, dtype=np.float64)
    names = list(factor_names) if factor_names is not None else [f"factor_{j}" for j in range(C.shape[1])]
    lines = [",".join(["latent"] + names)]
    for i, row in enumerate(C):
        lines.append(",".join([f"z{i}"] + [repr(float(x)) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_hinton_csv(path) -> tuple[np.ndarray, list[str]]:
    rows = Path(path).read_text().strip().splitlines()
    names = rows[0].split(",")[1:]
    C = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:]])
    return C, names
