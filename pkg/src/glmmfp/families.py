"""Exponential-family kernels for canonical-link mixed models.

Each kernel bundles the cumulant function ``b`` and its first two
derivatives, the working-response / working-weight construction used by
the fixed-point solver, and the family-specific starting values for the
linear predictor.  Poisson (log link) and binomial (logit link) are the
count families of interest; a Gaussian kernel with fixed, known variance
is included as the conjugate case where every downstream quantity has a
closed form.

All functions are pure and operate elementwise on numpy arrays, so they
are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

# Linear predictors are clamped to this window before exponentiation for
# the count families; beyond it exp()/expit() saturate and the working
# residual division produces inf/NaN.
ETA_CLAMP = 30.0

# Working weights below this floor mark a site as degenerate instead of
# silently producing an enormous working residual.
WEIGHT_FLOOR = 1e-12

POISSON = "poisson"
BINOMIAL = "binomial"
GAUSSIAN = "gaussian"
_FAMILIES = (POISSON, BINOMIAL, GAUSSIAN)


class DegenerateSitesError(RuntimeError):
    """Raised when working weights underflow at one or more sites."""

    def __init__(self, indices):
        self.indices = np.asarray(indices, dtype=int)
        super().__init__(
            f"working weight below {WEIGHT_FLOOR:g} at sites {self.indices.tolist()}"
        )


@dataclass(frozen=True, eq=False)
class FamilyKernel:
    """Response family with canonical link.

    ``trials`` is required for the binomial family (per-observation trial
    counts, stored as counts rather than proportions) and must be absent
    otherwise.  ``variance`` is the fixed, known error variance of the
    Gaussian family and must be absent otherwise.
    """

    family: str
    trials: np.ndarray | None = None
    variance: float | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == BINOMIAL:
            if self.trials is None:
                raise ValueError("binomial kernel requires trial counts")
            m = np.asarray(self.trials, dtype=float)
            if m.ndim != 1 or m.size == 0:
                raise ValueError("trial counts must be a nonempty vector")
            if not np.all(np.isfinite(m)) or np.any(m < 1) or np.any(m != np.round(m)):
                raise ValueError("trial counts must be integers >= 1")
            object.__setattr__(self, "trials", m)
        elif self.trials is not None:
            raise ValueError(f"{self.family} kernel must not carry trial counts")
        if self.family == GAUSSIAN:
            if self.variance is None:
                raise ValueError("gaussian kernel requires a variance")
            if not np.isfinite(self.variance) or self.variance <= 0:
                raise ValueError("gaussian variance must be positive and finite")
        elif self.variance is not None:
            raise ValueError(f"{self.family} kernel must not carry a variance")


def poisson_kernel() -> FamilyKernel:
    return FamilyKernel(POISSON)


def binomial_kernel(trials) -> FamilyKernel:
    return FamilyKernel(BINOMIAL, trials=np.asarray(trials, dtype=float))


def gaussian_kernel(variance: float) -> FamilyKernel:
    return FamilyKernel(GAUSSIAN, variance=float(variance))


def _check_finite(eta: np.ndarray) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor contains non-finite entries")
    return eta


def check_support(kernel: FamilyKernel, y) -> np.ndarray:
    """Validate that ``y`` lies in the support of the family."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite entries")
    if kernel.family == POISSON:
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("poisson response must be nonnegative integer counts")
    elif kernel.family == BINOMIAL:
        if y.shape != kernel.trials.shape:
            raise ValueError("response and trial counts have mismatched length")
        if np.any(y < 0) or np.any(y > kernel.trials) or np.any(y != np.round(y)):
            raise ValueError("binomial response must be counts in [0, trials]")
    return y


def b_value(kernel: FamilyKernel, eta) -> np.ndarray:
    """Cumulant function b(eta), elementwise."""
    eta = _check_finite(eta)
    if kernel.family == POISSON:
        return np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
    if kernel.family == BINOMIAL:
        # m * log(1 + e^eta), safe for |eta| ~ 500
        return kernel.trials * np.logaddexp(0.0, eta)
    return 0.5 * eta**2


def curvature(kernel: FamilyKernel, eta) -> np.ndarray:
    """Second derivative b''(eta) of the cumulant (conditional variance)."""
    eta = _check_finite(eta)
    ec = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    if kernel.family == POISSON:
        return np.exp(ec)
    if kernel.family == BINOMIAL:
        p = expit(ec)
        return kernel.trials * p * (1.0 - p)
    return np.ones_like(eta)


def mean_and_weight(kernel: FamilyKernel, eta) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean b'(eta) and working weight, elementwise.

    For the count families the weight equals the curvature b''(eta); for
    the Gaussian kernel the curvature is 1 and the weight is 1/variance.
    """
    eta = _check_finite(eta)
    ec = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    if kernel.family == POISSON:
        mu = np.exp(ec)
        return mu, mu.copy()
    if kernel.family == BINOMIAL:
        p = expit(ec)
        return kernel.trials * p, kernel.trials * p * (1.0 - p)
    return eta.copy(), np.full_like(eta, 1.0 / kernel.variance)


def working_response(kernel: FamilyKernel, eta, y) -> np.ndarray:
    """Linearized pseudo-response u = eta + (y - b'(eta)) / b''(eta).

    For the Gaussian identity link this is exactly ``y``.  Sites whose
    curvature underflows the weight floor are reported rather than
    divided through.
    """
    eta = _check_finite(eta)
    y = check_support(kernel, y)
    if eta.shape != y.shape:
        raise ValueError("eta and y have mismatched length")
    if kernel.family == GAUSSIAN:
        return y.copy()
    mu, _ = mean_and_weight(kernel, eta)
    v = curvature(kernel, eta)
    bad = np.nonzero(v < WEIGHT_FLOOR)[0]
    if bad.size:
        raise DegenerateSitesError(bad)
    return eta + (y - mu) / v


def initial_eta(kernel: FamilyKernel, y) -> tuple[np.ndarray, np.ndarray]:
    """Family-specific starting linear predictor and starting weights.

    Uses the standard IRLS-style starts: shifted log counts for Poisson,
    empirical logits for binomial, the response itself for Gaussian.
    """
    y = check_support(kernel, y)
    if kernel.family == POISSON:
        eta0 = np.log(y + 0.5)
        return eta0, y + 0.5
    if kernel.family == BINOMIAL:
        m = kernel.trials
        eta0 = np.log((y + 0.5) / (m - y + 0.5))
        w0 = m * (y + 0.5) * (m - y + 0.5) / (m + 1.0) ** 2
        return eta0, w0
    return y.copy(), np.full_like(y, 1.0 / kernel.variance)


def log_likelihood(kernel: FamilyKernel, eta, y) -> np.ndarray:
    """Full log-likelihood summed over observations.

    ``eta`` may be a batch of linear predictors with shape (..., n); the
    sum runs over the trailing axis.  Extreme predictors map to -inf
    rather than raising, which is the right behaviour for quadrature and
    importance-sampling integrands.
    """
    eta = np.asarray(eta, dtype=float)
    y = check_support(kernel, y)
    if kernel.family == POISSON:
        with np.errstate(over="ignore"):
            terms = y * eta - np.exp(eta) - gammaln(y + 1.0)
        return np.sum(terms, axis=-1)
    if kernel.family == BINOMIAL:
        m = kernel.trials
        const = gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)
        terms = y * eta - m * np.logaddexp(0.0, eta) + const
        return np.sum(terms, axis=-1)
    s2 = kernel.variance
    terms = -0.5 * np.log(2.0 * np.pi * s2) - 0.5 * (y - eta) ** 2 / s2
    return np.sum(terms, axis=-1)
