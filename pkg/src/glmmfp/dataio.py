"""CSV dataset ingestion, JSON run configuration, and result writers.

The dataset schema is a headed CSV with a count column ``y``, site
coordinate columns ``x_coord`` / ``y_coord`` for spatial runs, any
declared covariate columns, an optional binomial trial-count column
``m``, and an optional ``role`` column with values ``train`` / ``test``.
All numeric output is written at 17 significant digits so pipelines
between subcommands round-trip bit-faithfully.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .covariance import MaternParams
from .families import binomial_kernel, gaussian_kernel, poisson_kernel

ESTIMATE = "estimate"
TIERS = ("intercept", "main_effects", "quadratic")


class ConfigError(ValueError):
    """Configuration or dataset validation failure (exit code 1)."""


def fmt(x) -> str:
    """Full-precision decimal rendering used by every CSV/JSON writer."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RunConfig:
    family: str = "poisson"
    covariates: list = field(default_factory=list)
    model_tier: str = "intercept"
    matern: object = None          # MaternParams or "estimate"
    beta: object = None            # list of floats or "estimate"
    gaussian_variance: float | None = None
    sic: dict = field(default_factory=dict)
    seed: int = 0
    simulate: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)


_TOP_KEYS = {
    "family", "covariates", "model_tier", "matern", "beta",
    "gaussian_variance", "sic", "seed", "simulate", "validate", "verify",
}
_SIC_KEYS = {"tol", "max_iter", "damping"}
_MATERN_KEYS = {"omega1", "omega2", "omega3"}
_SIMULATE_KEYS = {
    "n", "n_star", "beta", "omega", "replications", "seed", "side", "scenarios",
}
_VALIDATE_KEYS = {"splits", "n_train", "n_test", "tiers"}
_VERIFY_KEYS = {"identity_instances", "battery_seed", "order"}


def _check_keys(obj: dict, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")


def parse_matern(obj) -> MaternParams:
    _check_keys(obj, _MATERN_KEYS, "matern")
    try:
        return MaternParams(
            omega1=float(obj.get("omega1")),
            omega2=float(obj.get("omega2")),
            omega3=float(obj.get("omega3", 0.5)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid matern parameters: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "config")
    cfg = RunConfig()
    cfg.family = raw.get("family", "poisson")
    if cfg.family not in ("poisson", "binomial", "gaussian"):
        raise ConfigError(f"unknown family {cfg.family!r}")
    cfg.covariates = list(raw.get("covariates", []))
    cfg.model_tier = raw.get("model_tier", "intercept")
    if cfg.model_tier not in TIERS:
        raise ConfigError(f"unknown model_tier {cfg.model_tier!r}")
    matern = raw.get("matern")
    if matern is not None:
        cfg.matern = ESTIMATE if matern == ESTIMATE else parse_matern(matern)
    beta = raw.get("beta")
    if beta is not None:
        if beta == ESTIMATE:
            cfg.beta = ESTIMATE
        else:
            try:
                cfg.beta = [float(b) for b in beta]
            except (TypeError, ValueError) as exc:
                raise ConfigError("beta must be a list of numbers or 'estimate'") from exc
    if "gaussian_variance" in raw:
        cfg.gaussian_variance = float(raw["gaussian_variance"])
        if cfg.gaussian_variance <= 0:
            raise ConfigError("gaussian_variance must be positive")
    _check_keys(raw.get("sic", {}), _SIC_KEYS, "sic")
    cfg.sic = raw.get("sic", {})
    cfg.seed = int(raw.get("seed", 0))
    _check_keys(raw.get("simulate", {}), _SIMULATE_KEYS, "simulate")
    cfg.simulate = raw.get("simulate", {})
    _check_keys(raw.get("validate", {}), _VALIDATE_KEYS, "validate")
    cfg.validate = raw.get("validate", {})
    _check_keys(raw.get("verify", {}), _VERIFY_KEYS, "verify")
    cfg.verify = raw.get("verify", {})
    return cfg


def make_kernel(cfg: RunConfig, trials=None):
    if cfg.family == "poisson":
        return poisson_kernel()
    if cfg.family == "binomial":
        if trials is None:
            raise ConfigError("binomial family requires an 'm' column in the dataset")
        return binomial_kernel(trials)
    variance = cfg.gaussian_variance if cfg.gaussian_variance is not None else 1.0
    return gaussian_kernel(variance)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Dataset:
    y: np.ndarray | None
    coords: np.ndarray
    covariates: dict          # column name -> vector
    trials: np.ndarray | None
    role: np.ndarray | None   # array of "train"/"test" strings, or None

    @property
    def n(self) -> int:
        return self.coords.shape[0]


def load_dataset(path, cfg: RunConfig, require_response: bool = True) -> Dataset:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ConfigError("dataset has no header row")
            header = [h.strip() for h in reader.fieldnames]
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from exc
    if not rows:
        raise ConfigError("dataset has no rows")

    required = ["x_coord", "y_coord"] + list(cfg.covariates)
    if require_response:
        required.append("y")
    if cfg.family == "binomial" and require_response:
        required.append("m")
    for col in required:
        if col not in header:
            raise ConfigError(f"dataset is missing required column {col!r}")

    def column(name):
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            val = row.get(name)
            try:
                out[i] = float(val)
            except (TypeError, ValueError):
                raise ConfigError(
                    f"non-numeric value {val!r} in column {name!r} row {i + 1}"
                ) from None
        return out

    coords = np.column_stack([column("x_coord"), column("y_coord")])
    y = column("y") if "y" in header and require_response else None
    trials = column("m") if "m" in header else None
    covs = {name: column(name) for name in cfg.covariates}
    role = None
    if "role" in header:
        role = np.array([row["role"].strip() for row in rows])
        bad = set(role) - {"train", "test"}
        if bad:
            raise ConfigError(f"unknown role value {sorted(bad)[0]!r}")
    return Dataset(y=y, coords=coords, covariates=covs, trials=trials, role=role)


def build_design(dataset: Dataset, cfg: RunConfig, tier: str | None = None) -> np.ndarray:
    """Intercept + declared covariates + coordinate expansion of the tier."""
    tier = tier or cfg.model_tier
    if tier not in TIERS:
        raise ConfigError(f"unknown model_tier {tier!r}")
    cols = [np.ones(dataset.n)]
    cols += [dataset.covariates[name] for name in cfg.covariates]
    lon, lat = dataset.coords[:, 0], dataset.coords[:, 1]
    if tier in ("main_effects", "quadratic"):
        cols += [lon, lat]
    if tier == "quadratic":
        cols += [lon**2, lat**2, lon * lat]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Result writers
# ---------------------------------------------------------------------------


def write_vector_csv(path, name: str, values):
    lines = [f"site,{name}"]
    for i, v in enumerate(np.atleast_1d(values)):
        lines.append(f"{i},{fmt(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_matrix_csv(path, matrix):
    matrix = np.atleast_2d(matrix)
    lines = [",".join(fmt(v) for v in row) for row in matrix]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_predictions_csv(path, xi_star, y_hat_star, u_hat_star):
    lines = ["site,xi_star,y_hat_star,u_hat_star"]
    for i in range(len(np.atleast_1d(xi_star))):
        lines.append(
            f"{i},{fmt(xi_star[i])},{fmt(y_hat_star[i])},{fmt(u_hat_star[i])}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic dataset generator (schema-compatible stand-in)
# ---------------------------------------------------------------------------


def write_synthetic_counts(
    path,
    n_sites: int = 100,
    seed: int = 0,
    beta0: float = 4.5,
    omega: MaternParams = MaternParams(0.5, 1.5),
    extent: tuple = (1.0, 0.75),
):
    """Write a synthetic coordinate-indexed count CSV (farm-like layout)."""
    from .covariance import build_blocked  # local import avoids cycles

    rng = np.random.default_rng(seed)
    coords = rng.uniform((0.0, 0.0), extent, size=(n_sites, 2))
    blocked = build_blocked(omega, coords)
    gamma = np.linalg.cholesky(blocked.d11) @ rng.standard_normal(n_sites)
    y = rng.poisson(np.exp(beta0 + gamma))
    lines = ["y,x_coord,y_coord"]
    for yi, (cx, cy) in zip(y, coords):
        lines.append(f"{int(yi)},{fmt(cx)},{fmt(cy)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
