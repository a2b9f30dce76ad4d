"""Command-line front end.

Subcommands:

* ``fit``       - posterior mean/covariance of the site effects on a dataset
* ``predict``   - fit on training sites, predict effects/responses at test sites
* ``simulate``  - Monte Carlo evaluation of the spatial predictor
* ``validate``  - repeated random train/test splits scored by predictive deviance
* ``verify``    - randomized factorization-identity suite and exactness
                  adjudication against the quadrature oracle

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio
from .covariance import MaternParams, SingularCovarianceError, build_blocked
from .dataio import ConfigError, Dataset, RunConfig, fmt
from .estimate import EstimateOptions, SpatialData, estimate
from .families import DegenerateSitesError, initial_eta
from .fixed_point import (
    FitOptions,
    GlmmProblem,
    fit_posterior,
    identity_gap,
    random_identity_instance,
)
from .metrics import deviance_gof
from .oracle import CapabilityError, UnreliableEstimateError, adjudicate_exactness
from .simulate import SimConfig, run_scenarios, write_audit_json, write_table_csv
from .spatial import SpatialProblem, fit_predict

log = logging.getLogger("glmmfp")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_NONCONVERGENCE = 3

_NUMERICAL_ERRORS = (
    SingularCovarianceError,
    DegenerateSitesError,
    CapabilityError,
    UnreliableEstimateError,
    np.linalg.LinAlgError,
    FloatingPointError,
)


def _fit_options(cfg: RunConfig) -> FitOptions:
    sic = cfg.sic
    return FitOptions(
        tol=float(sic.get("tol", 1e-10)),
        max_iter=int(sic.get("max_iter", 200)),
        damping=float(sic.get("damping", 1.0)),
    )


def _default_beta_init(kernel, y, X) -> np.ndarray:
    eta0, _ = initial_eta(kernel, y)
    coef, *_ = np.linalg.lstsq(X, eta0, rcond=None)
    return coef


def _resolve_params(cfg: RunConfig, y, X, coords, kernel, options: FitOptions):
    """Return (beta, matern_params, estimate_meta_or_None)."""
    if cfg.matern is None:
        raise ConfigError("config must set 'matern' (parameters or 'estimate')")
    if cfg.beta is None:
        raise ConfigError("config must set 'beta' (values or 'estimate')")
    matern_given = isinstance(cfg.matern, MaternParams)
    beta_given = cfg.beta != dataio.ESTIMATE
    if not matern_given and beta_given:
        raise ConfigError("estimating matern parameters requires beta='estimate'")
    if matern_given and beta_given:
        beta = np.asarray(cfg.beta, dtype=float)
        if beta.shape[0] != X.shape[1]:
            raise ConfigError(
                f"beta has {beta.shape[0]} entries but the design has "
                f"{X.shape[1]} columns"
            )
        return beta, cfg.matern, None
    data = SpatialData(y=y, X=X, coords=coords, kernel=kernel)
    init_omega = cfg.matern if matern_given else MaternParams(0.5, 1.0)
    init_beta = _default_beta_init(kernel, y, X)
    result = estimate(
        data,
        init_beta,
        init_omega,
        EstimateOptions(fit_options=options),
        fit_omega=not matern_given,
    )
    meta = {
        "beta_hat": [float(b) for b in result.beta_hat],
        "omega_hat": [
            result.omega_hat.omega1,
            result.omega_hat.omega2,
            result.omega_hat.omega3,
        ],
        "objective": result.objective_value,
        "optimizer_converged": result.converged,
    }
    return result.beta_hat, result.omega_hat, meta


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    cfg = dataio.load_config(args.config)
    dataset = dataio.load_dataset(args.data, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kernel = dataio.make_kernel(cfg, dataset.trials)
    X = dataio.build_design(dataset, cfg)
    options = _fit_options(cfg)
    beta, omega, est_meta = _resolve_params(
        cfg, dataset.y, X, dataset.coords, kernel, options
    )
    blocked = build_blocked(omega, dataset.coords)
    problem = GlmmProblem(
        y=dataset.y, X=X, Z=np.eye(dataset.n), D=blocked.d11,
        beta=beta, kernel=kernel,
    )
    report = fit_posterior(problem, options)
    dataio.write_vector_csv(out / "xi.csv", "xi", report.state.xi)
    dataio.write_matrix_csv(out / "Xi.csv", report.state.Xi)
    payload = {
        "converged": report.converged,
        "iterations": report.iterations,
        "residual": report.state.residual,
        "damping_used": report.damping_used,
        "beta": [float(b) for b in beta],
        "omega": [omega.omega1, omega.omega2, omega.omega3],
    }
    if est_meta:
        payload["estimation"] = est_meta
    dataio.write_json(out / "report.json", payload)
    return EXIT_OK if report.converged else EXIT_NONCONVERGENCE


def _split_dataset(dataset: Dataset, which: str) -> Dataset:
    mask = dataset.role == which
    return Dataset(
        y=dataset.y[mask] if dataset.y is not None else None,
        coords=dataset.coords[mask],
        covariates={k: v[mask] for k, v in dataset.covariates.items()},
        trials=dataset.trials[mask] if dataset.trials is not None else None,
        role=None,
    )


def cmd_predict(args) -> int:
    cfg = dataio.load_config(args.config)
    dataset = dataio.load_dataset(args.data, cfg)
    if args.test:
        train = dataset
        test = dataio.load_dataset(args.test, cfg, require_response=False)
    elif dataset.role is not None:
        train = _split_dataset(dataset, "train")
        test = _split_dataset(dataset, "test")
    else:
        raise ConfigError("predict needs --test sites or a 'role' column")
    if train.n < 1:
        raise ConfigError("no training rows")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kernel = dataio.make_kernel(cfg, train.trials)
    X = dataio.build_design(train, cfg)
    Xstar = (
        dataio.build_design(test, cfg)
        if test.n
        else np.empty((0, X.shape[1]))
    )
    options = _fit_options(cfg)
    beta, omega, _ = _resolve_params(cfg, train.y, X, train.coords, kernel, options)
    blocked = build_blocked(
        omega, train.coords, test.coords if test.n else None
    )
    problem = SpatialProblem(
        y=train.y, X=X, Xstar=Xstar, blocked=blocked, beta=beta, kernel=kernel
    )
    prediction = fit_predict(problem, options)
    dataio.write_predictions_csv(
        out / "predictions.csv",
        prediction.xi_star,
        prediction.y_hat_star,
        prediction.u_hat_star,
    )
    return EXIT_OK if prediction.report.converged else EXIT_NONCONVERGENCE


def cmd_simulate(args) -> int:
    cfg = dataio.load_config(args.config)
    sim = dict(cfg.simulate)
    if args.replications is not None:
        sim["replications"] = args.replications
    if args.seed is not None:
        sim["seed"] = args.seed
    omega = sim.pop("omega", None)
    config = SimConfig(
        n=int(sim.get("n", 400)),
        n_star=int(sim.get("n_star", 400)),
        beta=tuple(sim.get("beta", (8.0, 0.0))),
        omega=dataio.parse_matern(omega) if omega else MaternParams(0.5, 1.0, 0.5),
        replications=int(sim.get("replications", 100)),
        seed=int(sim.get("seed", cfg.seed)),
        side=float(sim.get("side", SimConfig.side)),
        scenarios=tuple(sim.get("scenarios", ("oracle", "sic_true"))),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = run_scenarios(config)
    log.info("simulation finished in %.1f s", time.perf_counter() - start)
    write_table_csv(result, out / "table.csv")
    write_audit_json(result, out / "audit.json")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = dataio.load_config(args.config)
    dataset = dataio.load_dataset(args.data, cfg)
    val = cfg.validate
    splits = int(val.get("splits", 20))
    n_train = int(val.get("n_train", 80))
    n_test = int(val.get("n_test", 20))
    tiers = list(val.get("tiers", dataio.TIERS))
    if splits < 1:
        raise ConfigError("splits must be >= 1")
    for tier in tiers:
        if tier not in dataio.TIERS:
            raise ConfigError(f"unknown model_tier {tier!r}")
    if n_train < 1 or n_test < 1 or n_train + n_test > dataset.n:
        raise ConfigError(
            f"split sizes {n_train}+{n_test} exceed the {dataset.n} dataset rows"
        )
    seed = args.seed if args.seed is not None else cfg.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    options = _fit_options(cfg)
    rows = []
    failures = []
    for split in range(splits):
        rng = np.random.default_rng([seed, split])
        perm = rng.permutation(dataset.n)
        test_idx, train_idx = perm[:n_test], perm[n_test : n_test + n_train]
        for tier in tiers:
            try:
                g2 = _validate_split(
                    cfg, dataset, train_idx, test_idx, tier, options
                )
                rows.append((split, tier, g2))
            except Exception as exc:  # noqa: BLE001 - recorded per split
                failures.append({"split": split, "tier": tier, "error": str(exc)})
    lines = ["split,tier,g2"]
    for split, tier, g2 in rows:
        lines.append(f"{split},{tier},{fmt(g2)}")
    with open(out / "validation.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    summary = {}
    for tier in tiers:
        vals = [g2 for _, t, g2 in rows if t == tier]
        if vals:
            summary[tier] = {"mean_g2": sum(vals) / len(vals), "splits": len(vals)}
    dataio.write_json(
        out / "summary.json", {"tiers": summary, "failures": failures}
    )
    return EXIT_OK if not failures else EXIT_NUMERICAL


def _validate_split(cfg, dataset, train_idx, test_idx, tier, options) -> float:
    def subset(idx):
        return Dataset(
            y=dataset.y[idx],
            coords=dataset.coords[idx],
            covariates={k: v[idx] for k, v in dataset.covariates.items()},
            trials=dataset.trials[idx] if dataset.trials is not None else None,
            role=None,
        )

    train, test = subset(train_idx), subset(test_idx)
    kernel = dataio.make_kernel(cfg, train.trials)
    X = dataio.build_design(train, cfg, tier)
    Xstar = dataio.build_design(test, cfg, tier)
    beta, omega, _ = _resolve_params(cfg, train.y, X, train.coords, kernel, options)
    blocked = build_blocked(omega, train.coords, test.coords)
    problem = SpatialProblem(
        y=train.y, X=X, Xstar=Xstar, blocked=blocked, beta=beta, kernel=kernel
    )
    prediction = fit_predict(problem, options)
    if not prediction.report.converged:
        raise RuntimeError("fixed-point solver did not converge on a split")
    return deviance_gof(test.y, prediction.y_hat_star)


def _verify_battery(rng, count_poisson=12, count_binomial=10, count_gaussian=4):
    """Small random model instances for the exactness adjudication."""
    from .families import binomial_kernel, gaussian_kernel, poisson_kernel

    specs = (
        ["poisson"] * count_poisson
        + ["binomial"] * count_binomial
        + ["gaussian"] * count_gaussian
    )
    for family in specs:
        n = int(rng.integers(2, 7))
        r = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        X = rng.standard_normal((n, p))
        Z = rng.standard_normal((n, r))
        A = rng.standard_normal((r, r))
        D = 0.3 * (A @ A.T) + 0.3 * np.eye(r)
        beta = rng.uniform(-0.4, 0.8, size=p)
        gamma = np.linalg.cholesky(D) @ rng.standard_normal(r)
        eta = X @ beta + Z @ gamma
        if family == "poisson":
            kernel = poisson_kernel()
            y = rng.poisson(np.exp(np.clip(eta, -20, 5))).astype(float)
        elif family == "binomial":
            m = rng.integers(1, 8, size=n)
            kernel = binomial_kernel(m)
            prob = 1.0 / (1.0 + np.exp(-eta))
            y = rng.binomial(m.astype(int), prob).astype(float)
        else:
            kernel = gaussian_kernel(1.0)
            y = eta + rng.standard_normal(n)
        yield family, GlmmProblem(y=y, X=X, Z=Z, D=D, beta=beta, kernel=kernel)


def cmd_verify(args) -> int:
    cfg = dataio.load_config(args.config)
    ver = cfg.verify
    n_identity = int(ver.get("identity_instances", 100))
    order = int(ver.get("order", 64))
    seed = args.seed if args.seed is not None else int(
        ver.get("battery_seed", cfg.seed)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng([seed, 0])
    gaps = [
        identity_gap(random_identity_instance(rng)) for _ in range(n_identity)
    ]
    identity_max = float(max(gaps))

    rng = np.random.default_rng([seed, 1])
    instances = []
    for family, problem in _verify_battery(rng):
        report = adjudicate_exactness(problem, order=order)
        instances.append(
            {
                "family": family,
                "n": problem.n,
                "r": problem.r,
                "mean_gap": report.mean_gap,
                "cov_gap": report.cov_gap,
                "oracle_error": report.oracle_error,
                "oracle_order": report.oracle.order_or_samples,
                "verdict": report.verdict,
            }
        )
    payload = {
        "identity": {"instances": n_identity, "max_gap": identity_max},
        "battery": instances,
        "order": order,
        "seed": seed,
    }
    dataio.write_json(out / "verdicts.json", payload)
    if identity_max > 1e-8:
        log.error("factorization identity violated: max gap %.3e", identity_max)
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glmmfp",
        description="Fixed-point posterior moments for non-Gaussian mixed models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_data in (
        ("fit", True),
        ("predict", True),
        ("simulate", False),
        ("validate", True),
        ("verify", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--quiet", action="store_true")
        if needs_data:
            p.add_argument("--data", required=True)
        if name == "predict":
            p.add_argument("--test", default=None)
    return parser


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entry():  # console-script hook
    raise SystemExit(main())
