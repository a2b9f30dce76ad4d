"""Evaluation metrics: relative squared-error loss and Poisson deviance."""

from __future__ import annotations

import numpy as np


def rl2(truth, estimate) -> float:
    """Relative squared-error loss ||truth - estimate||^2 / ||truth||^2."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError("truth and estimate have mismatched shapes")
    denom = float(np.sum(truth**2))
    if denom == 0.0:
        raise ValueError("relative loss undefined for zero-norm truth")
    return float(np.sum((truth - estimate) ** 2) / denom)


def deviance_gof(y_obs, y_hat) -> float:
    """Deviance goodness-of-fit 2 sum[y log(y / yhat) - (y - yhat)].

    The y log(y/yhat) term is taken as 0 when y = 0.  Nonnegative for
    Poisson predictions; predictions must be strictly positive.
    """
    y = np.asarray(y_obs, dtype=float)
    mu = np.asarray(y_hat, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("observed and predicted vectors have mismatched shapes")
    if np.any(mu <= 0):
        raise ValueError("predictions must be strictly positive")
    if np.any(y < 0):
        raise ValueError("observed counts must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))
