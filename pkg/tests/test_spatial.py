import numpy as np
import pytest

from glmmfp.covariance import MaternParams, build_blocked
from glmmfp.families import gaussian_kernel, poisson_kernel
from glmmfp.fixed_point import FitOptions
from glmmfp.spatial import SpatialProblem, conditional_mean, fit_predict


def make_problem(seed=0, n=25, n_star=10, family="poisson", beta0=1.5):
    rng = np.random.default_rng(seed)
    coords_obs = rng.uniform(0, 10, size=(n, 2))
    coords_unobs = rng.uniform(0, 10, size=(n_star, 2))
    blocked = build_blocked(MaternParams(0.5, 1.0), coords_obs, coords_unobs)
    gamma_joint = np.linalg.cholesky(blocked.full) @ rng.standard_normal(n + n_star)
    gamma = gamma_joint[:n]
    X = np.ones((n, 1))
    Xstar = np.ones((n_star, 1))
    beta = np.array([beta0])
    if family == "poisson":
        kernel = poisson_kernel()
        y = rng.poisson(np.exp(X @ beta + gamma)).astype(float)
    else:
        kernel = gaussian_kernel(1.0)
        y = X @ beta + gamma + rng.standard_normal(n)
    problem = SpatialProblem(
        y=y, X=X, Xstar=Xstar, blocked=blocked, beta=beta, kernel=kernel
    )
    return problem, gamma, gamma_joint[n:]


class TestValidation:
    def test_block_size_must_match_response(self):
        problem, _, _ = make_problem()
        with pytest.raises(ValueError, match="observed covariance block"):
            SpatialProblem(
                y=problem.y[:-1],
                X=problem.X[:-1],
                Xstar=problem.Xstar,
                blocked=problem.blocked,
                beta=problem.beta,
                kernel=problem.kernel,
            )

    def test_xstar_must_match_unobserved_block(self):
        problem, _, _ = make_problem()
        with pytest.raises(ValueError, match="unobserved covariance block"):
            SpatialProblem(
                y=problem.y,
                X=problem.X,
                Xstar=problem.Xstar[:-1],
                blocked=problem.blocked,
                beta=problem.beta,
                kernel=problem.kernel,
            )

    def test_design_dimensions_must_agree(self):
        problem, _, _ = make_problem()
        with pytest.raises(ValueError, match="fixed-effects dimension"):
            SpatialProblem(
                y=problem.y,
                X=problem.X,
                Xstar=np.ones((problem.Xstar.shape[0], 2)),
                blocked=problem.blocked,
                beta=problem.beta,
                kernel=problem.kernel,
            )


class TestGaussianClosedForm:
    def test_prediction_matches_kriging(self):
        # for the gaussian kernel the whole pipeline is linear algebra:
        # xi* = D21 (D11 + s2 I)^-1 (y - X beta)
        problem, _, _ = make_problem(seed=3, family="gaussian")
        pred = fit_predict(problem)
        assert pred.report.converged
        s2 = problem.kernel.variance
        n = problem.y.shape[0]
        resid = problem.y - problem.X @ problem.beta
        expected = problem.blocked.d12.T @ np.linalg.solve(
            problem.blocked.d11 + s2 * np.eye(n), resid
        )
        assert np.max(np.abs(pred.xi_star - expected)) < 1e-10

    def test_identity_link_outputs(self):
        problem, _, _ = make_problem(seed=4, family="gaussian")
        pred = fit_predict(problem)
        eta_star = problem.Xstar @ problem.beta + pred.xi_star
        assert np.allclose(pred.u_hat_star, eta_star, atol=1e-14)
        assert np.allclose(pred.y_hat_star, eta_star, atol=1e-14)


class TestPoissonPrediction:
    def test_converges_and_reports_positive_means(self):
        problem, _, _ = make_problem(seed=5)
        pred = fit_predict(problem)
        assert pred.report.converged
        assert np.all(pred.y_hat_star > 0)
        assert np.allclose(
            pred.y_hat_star,
            np.exp(problem.Xstar @ problem.beta + pred.xi_star),
            rtol=1e-12,
        )

    def test_cross_covariance_formula(self):
        # reconstruct xi* from the converged observed-block state
        problem, _, _ = make_problem(seed=6)
        pred = fit_predict(problem)
        state = pred.report.state
        r11 = np.diag(1.0 / state.w) + problem.blocked.d11
        expected = problem.blocked.d12.T @ np.linalg.solve(
            r11, state.u - problem.X @ problem.beta
        )
        assert np.max(np.abs(pred.xi_star - expected)) < 1e-10

    def test_prediction_beats_fixed_effects_alone(self):
        problem, gamma, gamma_star = make_problem(seed=7, n=60, n_star=30)
        pred = fit_predict(problem)
        err_spatial = np.sum((pred.xi_star - gamma_star) ** 2)
        err_null = np.sum(gamma_star**2)
        assert err_spatial < err_null

    def test_no_unobserved_sites(self):
        problem, _, _ = make_problem(seed=8, n_star=0)
        pred = fit_predict(problem)
        assert pred.xi_star.shape == (0,)
        assert pred.y_hat_star.shape == (0,)
        assert pred.report.converged

    def test_options_are_honored(self):
        problem, _, _ = make_problem(seed=9)
        pred = fit_predict(problem, FitOptions(tol=1e-6, max_iter=100))
        assert pred.report.converged
        assert pred.report.state.residual <= 1e-6


class TestConditionalMean:
    def test_matches_direct_solve(self):
        problem, gamma, _ = make_problem(seed=10)
        out = conditional_mean(gamma, problem.blocked)
        expected = problem.blocked.d12.T @ np.linalg.solve(
            problem.blocked.d11, gamma
        )
        assert np.max(np.abs(out - expected)) < 1e-10

    def test_interpolates_at_near_coincident_site(self):
        coords_obs = np.array([[0.0, 0.0], [5.0, 5.0]])
        coords_unobs = np.array([[0.0, 1e-9]])
        blocked = build_blocked(MaternParams(0.5, 1.0), coords_obs, coords_unobs)
        gamma = np.array([2.0, -1.0])
        out = conditional_mean(gamma, blocked)
        assert out[0] == pytest.approx(2.0, abs=1e-6)

    def test_length_check(self):
        problem, gamma, _ = make_problem(seed=11)
        with pytest.raises(ValueError, match="gamma length"):
            conditional_mean(gamma[:-1], problem.blocked)
