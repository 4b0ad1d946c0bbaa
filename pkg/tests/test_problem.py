import numpy as np
import pytest

from fedpoint.problem import (
    ClientObjective,
    DimensionMismatchError,
    FederatedProblem,
    NoMinimizerError,
    Regularizer,
    UnsupportedObjectiveError,
    compute_constants,
    estimate_delta,
    power_iteration,
    sigma_star_sq,
    similarity_gap,
)

from conftest import fd_grad, random_problem, random_psd_client


class TestEvalValue:
    def test_one_dim_quadratic(self):
        # f(x) = a x^2 with a=1 stored as H = 2a
        c = ClientObjective.quadratic(np.array([[2.0]]))
        assert c.value(np.array([3.0])) == 9.0

    def test_ridge_zero_at_planted_optimum(self):
        c = ClientObjective.ridge([[1.0, 0.0]], [0.0], lam=2.0)
        assert c.value(np.zeros(2)) == 0.0

    def test_ridge_unit_residual(self):
        c = ClientObjective.ridge([[1.0, 0.0]], [1.0], lam=0.0)
        assert c.value(np.zeros(2)) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        c = ClientObjective.quadratic(np.eye(2))
        with pytest.raises(DimensionMismatchError):
            c.value(np.zeros(3))


class TestEvalGrad:
    def test_one_dim_derivative(self):
        c = ClientObjective.quadratic(np.array([[2.0]]))
        assert c.grad(np.array([3.0]))[0] == 6.0

    def test_zero_at_own_minimizer(self, rng):
        c = random_psd_client(rng, 6)
        x_min = np.linalg.solve(c.hessian, -c.linear)
        assert np.linalg.norm(c.grad(x_min)) < 1e-10

    def test_ridge_example_and_fd_oracle(self):
        c = ClientObjective.ridge([[1.0, 0.0]], [1.0], lam=2.0)
        x = np.array([1.0, 1.0])
        g = c.grad(x)
        np.testing.assert_allclose(g, [2.0, 2.0], rtol=1e-12)
        np.testing.assert_allclose(g, fd_grad(c.value, x), rtol=1e-5)

    def test_all_gradients_match_finite_differences(self, rng):
        clients = [
            random_psd_client(rng, 5),
            ClientObjective.ridge(rng.standard_normal((8, 5)),
                                  rng.standard_normal(8), lam=0.3),
        ]
        for c in clients:
            for _ in range(20):
                x = rng.standard_normal(5)
                np.testing.assert_allclose(c.grad(x), fd_grad(c.value, x),
                                           rtol=1e-5, atol=1e-7)


class TestHessianValidation:
    def test_asymmetric_rejected(self):
        H = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            ClientObjective.quadratic(H)

    def test_tiny_asymmetry_tolerated(self):
        H = np.eye(2)
        H[0, 1] = 1e-14
        c = ClientObjective.quadratic(H)
        assert c.hessian[0, 1] == c.hessian[1, 0]

    def test_declared_mu_checked_by_constants(self):
        c = ClientObjective.quadratic(np.eye(2), mu=2.0)  # lambda_min is 1
        with pytest.raises(ValueError, match="declares mu"):
            compute_constants(FederatedProblem([c]))


class TestFullGrad:
    def test_single_client(self, rng):
        c = random_psd_client(rng, 4)
        prob = FederatedProblem([c])
        x = rng.standard_normal(4)
        np.testing.assert_array_equal(prob.full_grad(x), c.grad(x))

    def test_two_scalar_quadratics(self):
        # f1 = x^2, f2 = 2x^2: gradients at 1 are 2 and 4, mean 3
        f1 = ClientObjective.quadratic(np.array([[2.0]]))
        f2 = ClientObjective.quadratic(np.array([[4.0]]))
        prob = FederatedProblem([f1, f2])
        assert prob.full_grad(np.array([1.0]))[0] == pytest.approx(3.0)

    def test_vanishes_at_solution(self, rng):
        prob = random_problem(rng, M=5, d=6)
        consts = prob.constants()
        scale = max(1.0, np.linalg.norm(prob.full_grad(np.zeros(6))))
        assert np.linalg.norm(prob.full_grad(consts.x_star)) <= 1e-8 * scale


class TestComputeConstants:
    def test_symmetric_diag_fixture(self):
        c1 = ClientObjective.quadratic(np.diag([1.0, 3.0]))
        c2 = ClientObjective.quadratic(np.diag([3.0, 1.0]))
        consts = compute_constants(FederatedProblem([c1, c2]))
        assert consts.L == pytest.approx(2.0, rel=1e-8)
        assert consts.mu == pytest.approx(1.0, rel=1e-12)
        assert consts.delta == pytest.approx(1.0, rel=1e-8)
        np.testing.assert_allclose(consts.x_star, [0.0, 0.0], atol=1e-12)
        assert consts.sigma_star_sq == 0.0

    def test_single_client_has_zero_delta(self, rng):
        prob = FederatedProblem([random_psd_client(rng, 4)])
        assert prob.constants().delta == 0.0

    def test_matches_dense_eigendecomposition(self, rng):
        prob = random_problem(rng, M=3, d=5)
        consts = prob.constants()
        hbar = sum(c.hessian for c in prob.clients) / 3
        assert consts.L == pytest.approx(np.linalg.eigvalsh(hbar)[-1], rel=1e-6)
        assert consts.mu == pytest.approx(
            min(np.linalg.eigvalsh(c.hessian)[0] for c in prob.clients), rel=1e-6)
        D = sum((c.hessian - hbar) @ (c.hessian - hbar) for c in prob.clients) / 3
        assert consts.delta == pytest.approx(
            np.sqrt(np.linalg.eigvalsh(D)[-1]), rel=1e-6)
        x_star = np.linalg.solve(hbar, -sum(c.linear for c in prob.clients) / 3)
        np.testing.assert_allclose(consts.x_star, x_star, rtol=1e-8, atol=1e-10)

    def test_singular_system_rejected(self):
        c = ClientObjective.quadratic(np.diag([1.0, 0.0]), [0.0, 1.0])
        with pytest.raises(NoMinimizerError):
            compute_constants(FederatedProblem([c]))

    def test_callback_client_rejected(self):
        c = ClientObjective.from_callbacks(2, lambda x: float(x @ x),
                                           lambda x: 2 * x, mu=2.0, smoothness=2.0)
        with pytest.raises(UnsupportedObjectiveError):
            compute_constants(FederatedProblem([c]))

    def test_regularized_problem_rejected(self, rng):
        prob = FederatedProblem([random_psd_client(rng, 3)], Regularizer.l1(0.5))
        with pytest.raises(UnsupportedObjectiveError):
            compute_constants(prob)


class TestEstimateDelta:
    def test_diag_pair(self):
        c1 = ClientObjective.quadratic(np.diag([1.0, 3.0]))
        c2 = ClientObjective.quadratic(np.diag([3.0, 1.0]))
        assert estimate_delta(FederatedProblem([c1, c2])) == pytest.approx(1.0, rel=1e-8)

    def test_identical_clients(self, rng):
        c = random_psd_client(rng, 4)
        twin = ClientObjective.quadratic(c.hessian.copy(), c.linear.copy())
        assert estimate_delta(FederatedProblem([c, twin])) == pytest.approx(0.0, abs=1e-12)

    def test_matches_dense_oracle(self, rng):
        prob = random_problem(rng, M=4, d=8)
        hbar = sum(c.hessian for c in prob.clients) / 4
        D = sum((c.hessian - hbar) @ (c.hessian - hbar) for c in prob.clients) / 4
        oracle = np.sqrt(np.linalg.eigvalsh(D)[-1])
        assert estimate_delta(prob) == pytest.approx(oracle, rel=1e-6)

    def test_deterministic(self, rng):
        prob = random_problem(rng, M=3, d=6)
        assert estimate_delta(prob, seed=7) == estimate_delta(prob, seed=7)


class TestSigmaStarSq:
    def test_shared_minimizer(self, rng):
        x_opt = rng.standard_normal(3)
        clients = []
        for _ in range(4):
            c = random_psd_client(rng, 3)
            clients.append(ClientObjective.quadratic(c.hessian, -c.hessian @ x_opt))
        assert sigma_star_sq(FederatedProblem(clients), x_opt) == pytest.approx(0.0, abs=1e-20)

    def test_scalar_pair_at_origin(self):
        # f1 = x^2, f2 = 2x^2 share the minimizer 0
        f1 = ClientObjective.quadratic(np.array([[2.0]]))
        f2 = ClientObjective.quadratic(np.array([[4.0]]))
        assert sigma_star_sq(FederatedProblem([f1, f2]), np.zeros(1)) == 0.0

    def test_offset_pair(self):
        # f1 = (x-1)^2, f2 = (x+1)^2: gradients at x*=0 are -2 and +2
        f1 = ClientObjective.quadratic(np.array([[2.0]]), [-2.0])
        f2 = ClientObjective.quadratic(np.array([[2.0]]), [2.0])
        assert sigma_star_sq(FederatedProblem([f1, f2]), np.zeros(1)) == pytest.approx(4.0)


class TestPowerIteration:
    def test_matches_eigvalsh(self, rng):
        for _ in range(5):
            A = rng.standard_normal((7, 7))
            mat = A @ A.T
            assert power_iteration(mat) == pytest.approx(
                np.linalg.eigvalsh(mat)[-1], rel=1e-6)

    def test_zero_matrix(self):
        assert power_iteration(np.zeros((4, 4))) == 0.0

    def test_repeated_eigenvalue(self):
        assert power_iteration(2.0 * np.eye(3)) == pytest.approx(2.0, rel=1e-12)

    def test_deterministic(self, rng):
        A = rng.standard_normal((6, 6))
        mat = A @ A.T
        assert power_iteration(mat, seed=3) == power_iteration(mat, seed=3)


class TestSimilarityBound:
    def test_sampled_dissimilarity_bound(self, rng):
        prob = random_problem(rng, M=6, d=5)
        delta = estimate_delta(prob)
        for _ in range(100):
            x = rng.standard_normal(5)
            y = rng.standard_normal(5)
            gap = similarity_gap(prob, x, y)
            assert gap <= (1 + 1e-6) * delta ** 2 * np.sum((x - y) ** 2)


class TestRegularizer:
    def test_validation(self):
        with pytest.raises(ValueError):
            Regularizer.l1(0.0)
        with pytest.raises(ValueError):
            Regularizer.ball(-1.0)
        with pytest.raises(ValueError):
            Regularizer("bogus")

    def test_values(self):
        assert Regularizer.none().value([1.0, -2.0]) == 0.0
        assert Regularizer.l1(2.0).value([1.0, -2.0]) == pytest.approx(6.0)
        ball = Regularizer.ball(1.0)
        assert ball.value([0.6, 0.8]) == 0.0
        assert ball.value([3.0, 4.0]) == np.inf


class TestFederatedProblem:
    def test_needs_clients(self):
        with pytest.raises(ValueError):
            FederatedProblem([])

    def test_dimension_agreement(self, rng):
        with pytest.raises(DimensionMismatchError):
            FederatedProblem([random_psd_client(rng, 2), random_psd_client(rng, 3)])

    def test_ridge_lambda_agreement(self, rng):
        z = rng.standard_normal((4, 3))
        y = rng.standard_normal(4)
        a = ClientObjective.ridge(z, y, lam=0.1)
        b = ClientObjective.ridge(z, y, lam=0.2)
        with pytest.raises(ValueError, match="lambda"):
            FederatedProblem([a, b])

    def test_value_is_mean(self, rng):
        prob = random_problem(rng, M=3, d=4)
        x = rng.standard_normal(4)
        expected = sum(c.value(x) for c in prob.clients) / 3
        assert prob.value(x) == pytest.approx(expected, rel=1e-12)


class TestShiftedClients:
    def test_gradient_identity(self, rng):
        c = random_psd_client(rng, 4)
        center = rng.standard_normal(4)
        shifted = c.shifted(2.5, center)
        x = rng.standard_normal(4)
        np.testing.assert_allclose(shifted.grad(x), c.grad(x) + 2.5 * (x - center),
                                   rtol=1e-12, atol=1e-12)
        assert shifted.value(x) == pytest.approx(
            c.value(x) + 1.25 * np.sum((x - center) ** 2), rel=1e-12)

    def test_zero_shift_returns_self(self, rng):
        c = random_psd_client(rng, 3)
        assert c.shifted(0.0, np.ones(3)) is c

    def test_spectrum_shift(self, rng):
        c = random_psd_client(rng, 4)
        lo, hi = c.spectrum()
        slo, shi = c.shifted(1.5, np.zeros(4)).spectrum()
        assert slo == pytest.approx(lo + 1.5, rel=1e-12)
        assert shi == pytest.approx(hi + 1.5, rel=1e-12)
