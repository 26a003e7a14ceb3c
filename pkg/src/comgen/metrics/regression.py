from __future__ import annotations

import warnings

import numpy as np

from ..errors import MetricError


def r_squared(predictions, targets) -> tuple[np.ndarray, float]:
    """Per-factor coefficient of determination and its mean.

    Factors whose targets are constant get NaN and are left out of the mean.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if pred.ndim == 1:
        pred, tgt = pred[:, None], tgt[:, None]
    if pred.shape != tgt.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {tgt.shape}")
    if pred.shape[0] < 2:
        raise MetricError("R^2 needs at least two samples")
    ss_res = ((tgt - pred) ** 2).sum(axis=0)
    ss_tot = ((tgt - tgt.mean(axis=0)) ** 2).sum(axis=0)
    r2 = np.full(tgt.shape[1], np.nan)
    ok = ss_tot > 0
    if not ok.all():
        warnings.warn(f"factors {np.flatnonzero(~ok).tolist()} have zero variance; R^2 undefined",
                      RuntimeWarning, stacklevel=2)
    r2[ok] = 1.0 - ss_res[ok] / ss_tot[ok]
    if not ok.any():
        raise MetricError("every factor has zero variance")
    return r2, float(np.mean(r2[ok]))
