"""Cyclic coordinate-descent Lasso on standardized covariates."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_ALPHA = 0.02


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_objective(beta, X, y, alpha) -> float:
    n = X.shape[0]
    r = y - X @ beta
    return float(r @ r / (2.0 * n) + alpha * np.abs(beta).sum())


@dataclass
class LassoFit:
    """Coefficients live on the standardized scale of the covariates."""

    coef: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    sweeps: int
    history: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale
        return Xs @ self.coef + self.y_mean


def lasso_fit(X, y, alpha: float = DEFAULT_ALPHA, tol: float = 1e-6, max_sweeps: int = 10_000,
              track_objective: bool = False) -> LassoFit:
    """Minimize ``(1/2n)||y - X b||^2 + alpha ||b||_1`` over standardized ``X`` and centered ``y``.

    Zero-variance columns get a zero coefficient and a warning. Iteration stops
    once the largest coefficient change in a sweep drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    n, p = X.shape
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    live = x_scale > 1e-12 * np.maximum(1.0, np.abs(x_mean))
    if not live.all():
        warnings.warn(f"zero-variance covariates {np.flatnonzero(~live).tolist()} get coefficient 0",
                      RuntimeWarning, stacklevel=2)
    x_scale = np.where(live, x_scale, 1.0)
    Xs = (X - x_mean) / x_scale
    Xs[:, ~live] = 0.0
    y_mean = float(y.mean())
    yc = y - y_mean

    beta = np.zeros(p)
    resid = yc.copy()
    history = [lasso_objective(beta, Xs, yc, alpha)] if track_objective else []
    cols = np.flatnonzero(live)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in cols:
            xj = Xs[:, j]
            old = beta[j]
            rho = xj @ resid / n + old
            new = float(soft_threshold(rho, alpha))
            if new != old:
                resid -= xj * (new - old)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if track_objective:
            history.append(lasso_objective(beta, Xs, yc, alpha))
        if max_delta < tol:
            break
    return LassoFit(beta, x_mean, x_scale, y_mean, sweeps, history)
