import numpy as np
import pytest

from fedpoint.problem import ClientObjective, Regularizer
from fedpoint.prox import (
    ProxFailureWarning,
    ProxResult,
    ProxSpec,
    default_max_inner,
    evaluate,
    prox_agd,
    prox_composite,
    prox_exact_quadratic,
    prox_gd,
    prox_regularizer,
)

from conftest import random_psd_client


def isotropic_ball_prox(a, center, radius, eta, z):
    """Exact prox of eta*((a/2)||y - center||^2 + ball indicator)."""
    u = (z + eta * a * center) / (1.0 + eta * a)
    norm = np.linalg.norm(u)
    return u if norm <= radius else u * (radius / norm)


def scalar_grid_argmin(fn, lo, hi, resolution=1e-6):
    grid = np.arange(lo, hi + resolution, resolution)
    values = fn(grid)
    return float(grid[np.argmin(values)])


class TestProxSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            ProxSpec(method="newton")
        with pytest.raises(ValueError):
            ProxSpec(eta=0.0)
        with pytest.raises(ValueError):
            ProxSpec(b=-1.0)

    def test_non_finite_argument_rejected(self):
        c = ClientObjective.quadratic(np.eye(2))
        with pytest.raises(ValueError, match="non-finite"):
            prox_exact_quadratic(c, 1.0, np.array([np.nan, 0.0]))


class TestExactProx:
    def test_scalar_quadratic(self):
        # f(y) = a y^2 with a=1: prox_eta(z) = z / (1 + 2*eta*a)
        c = ClientObjective.quadratic(np.array([[2.0]]))
        assert prox_exact_quadratic(c, 1.0, np.array([3.0]))[0] == pytest.approx(1.0)

    def test_fixed_point_input(self, rng):
        c = random_psd_client(rng, 5)
        x_min = np.linalg.solve(c.hessian, -c.linear)
        for eta in (0.1, 1.0, 7.0):
            z = x_min + eta * c.grad(x_min)
            np.testing.assert_allclose(prox_exact_quadratic(c, eta, z), x_min,
                                       atol=1e-10)

    def test_isotropic(self, rng):
        mu = 0.7
        c = ClientObjective.quadratic(mu * np.eye(3))
        z = rng.standard_normal(3)
        np.testing.assert_allclose(prox_exact_quadratic(c, 2.0, z),
                                   z / (1 + 2.0 * mu), rtol=1e-12)

    def test_fact_fixed_point_100_random(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 6))
            c = random_psd_client(rng, d)
            eta = float(rng.uniform(0.05, 5.0))
            x = rng.standard_normal(d)
            back = prox_exact_quadratic(c, eta, x + eta * c.grad(x))
            assert np.linalg.norm(back - x) <= 1e-8 * (1 + np.linalg.norm(x))

    def test_fact_contraction_100_random(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 6))
            c = random_psd_client(rng, d)
            mu = c.spectrum()[0]
            eta = float(rng.uniform(0.05, 5.0))
            x = rng.standard_normal(d)
            y = rng.standard_normal(d)
            px = prox_exact_quadratic(c, eta, x)
            py = prox_exact_quadratic(c, eta, y)
            bound = np.linalg.norm(x - y) / (1 + eta * mu)
            assert np.linalg.norm(px - py) <= bound * (1 + 1e-10)


class TestProxGd:
    def test_scalar_agrees_with_exact(self):
        c = ClientObjective.quadratic(np.array([[2.0]]))
        res = prox_gd(c, 1.0, np.array([3.0]), b=1e-12, mu=2.0, L=2.0)
        assert res.certified
        assert (res.point[0] - 1.0) ** 2 <= 1e-12

    def test_start_at_prox_fixed_point(self, rng):
        # The client's stationary point is its own prox fixed point; starting
        # there the local gradient vanishes, so the solver exits on the first
        # check with zero gradient steps.
        c = random_psd_client(rng, 4)
        x_min = np.linalg.solve(c.hessian, -c.linear)
        mu, L = c.spectrum()
        res = prox_gd(c, 0.7, x_min, b=1e-14, mu=mu, L=L)
        assert res.inner_iters == 0
        np.testing.assert_array_equal(res.point, x_min)

    def test_random_ridge_certified_within_b_and_rate_bound(self, rng):
        Z = rng.standard_normal((30, 10))
        y = rng.standard_normal(30)
        c = ClientObjective.ridge(Z, y, lam=0.5)
        mu, L = c.spectrum()
        eta, b = 0.1, 1e-10
        z = rng.standard_normal(10)
        res = prox_gd(c, eta, z, b=b, mu=mu, L=L)
        exact = prox_exact_quadratic(c, eta, z)
        assert res.certified
        assert np.sum((res.point - exact) ** 2) <= b
        delta0 = c.grad(z)  # local gradient at the start y0 = z
        kappa = (L + 1 / eta) / (mu + 1 / eta)
        threshold = b * (mu + 1 / eta) ** 2
        cap = np.ceil(kappa * np.log(np.sum(delta0 ** 2) / threshold)) + 1
        assert res.inner_iters <= cap


class TestProxAgd:
    def test_agrees_with_gd_fixtures(self):
        c = ClientObjective.quadratic(np.array([[2.0]]))
        res = prox_agd(c, 1.0, np.array([3.0]), b=1e-12, mu=2.0, L=2.0)
        assert res.certified
        assert (res.point[0] - 1.0) ** 2 <= 1e-12

    def test_zero_steps_when_start_certifies(self, rng):
        c = random_psd_client(rng, 3)
        mu, L = c.spectrum()
        z = rng.standard_normal(3)
        res = prox_agd(c, 1.0, z, b=1e12, mu=mu, L=L)
        assert res.inner_iters == 0
        np.testing.assert_array_equal(res.point, z)

    def test_fewer_iterations_than_gd_on_ill_conditioned_client(self, rng):
        d = 20
        mu_c, L_c = 1.0, 1e4
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eigs = np.concatenate([[mu_c, L_c], rng.uniform(mu_c, L_c, d - 2)])
        c = ClientObjective.quadratic((q * eigs) @ q.T, rng.standard_normal(d))
        z = 2 * rng.standard_normal(d)
        eta = 1.0 / L_c
        gd = prox_gd(c, eta, z, b=1e-10, mu=mu_c, L=L_c)
        agd = prox_agd(c, eta, z, b=1e-10, mu=mu_c, L=L_c)
        assert gd.certified and agd.certified
        assert agd.inner_iters < gd.inner_iters

    def test_certified_within_b(self, rng):
        c = random_psd_client(rng, 8)
        mu, L = c.spectrum()
        z = rng.standard_normal(8)
        b = 1e-9
        res = prox_agd(c, 0.4, z, b=b, mu=mu, L=L)
        exact = prox_exact_quadratic(c, 0.4, z)
        assert res.certified
        assert np.sum((res.point - exact) ** 2) <= b


class TestProxRegularizer:
    def test_identity(self):
        np.testing.assert_array_equal(
            prox_regularizer(Regularizer.none(), 1.0, np.array([1.0, 2.0])),
            [1.0, 2.0])

    def test_soft_threshold(self):
        out = prox_regularizer(Regularizer.l1(1.0), 1.0, np.array([3.0, -0.5]))
        np.testing.assert_allclose(out, [2.0, 0.0])

    def test_ball_projection(self):
        out = prox_regularizer(Regularizer.ball(1.0), 1.0, np.array([3.0, 4.0]))
        np.testing.assert_allclose(out, [0.6, 0.8])


class TestProxComposite:
    def test_reduces_to_smooth_case(self, rng):
        c = random_psd_client(rng, 5)
        mu, L = c.spectrum()
        z = rng.standard_normal(5)
        b = 1e-10
        smooth = prox_gd(c, 0.5, z, b=b, mu=mu, L=L)
        comp = prox_composite(c, Regularizer.none(), 0.5, z, b=b, mu=mu, L=L)
        assert comp.certified
        assert np.sum((smooth.point - comp.point) ** 2) <= 2 * b

    def test_ball_boundary_result(self):
        # f(y) = 0.5||y||^2, ball radius 1, z far outside: the constrained
        # minimizer sits on the boundary in the direction of z.
        c = ClientObjective.quadratic(np.eye(3))
        reg = Regularizer.ball(1.0)
        z = np.array([6.0, 8.0, 0.0])
        b = 1e-12
        res = prox_composite(c, reg, 1.0, z, b=b, mu=1.0, L=1.0)
        assert res.certified
        norm = np.linalg.norm(res.point)
        assert 1.0 - np.sqrt(b) <= norm <= 1.0 + 1e-12
        oracle = isotropic_ball_prox(1.0, np.zeros(3), 1.0, 1.0, z)
        assert np.sum((res.point - oracle) ** 2) <= b

    def test_scalar_l1_fixture(self):
        # minimize 0.5 (y-4)^2 + |y| + 0.5 (y-z)^2 at z=0: stationarity on the
        # positive branch gives y = 3/2.
        c = ClientObjective.quadratic(np.array([[1.0]]), [-4.0], offset=8.0)
        reg = Regularizer.l1(1.0)
        b = 1e-14
        res = prox_composite(c, reg, 1.0, np.zeros(1), b=b, mu=1.0, L=1.0)
        assert res.certified
        oracle = scalar_grid_argmin(
            lambda y: 0.5 * (y - 4.0) ** 2 + np.abs(y) + 0.5 * y ** 2, 0.0, 4.0)
        assert abs(oracle - 1.5) <= 2e-6
        assert abs(res.point[0] - 1.5) <= np.sqrt(b) + 1e-10

    def test_composite_fixed_point(self):
        # h = f + R with -grad f(x*) a subgradient of R at x*: prox of
        # z = x + eta*g for any composite subgradient g at x returns x.
        c = ClientObjective.quadratic(np.eye(1), [-2.0])  # f = 0.5 (y-2)^2
        reg = Regularizer.l1(1.0)
        for x, subgrad in [(1.0, 0.0), (2.0, 1.0)]:
            # subgrad = grad f(x) + r with r in the l1 subdifferential at x
            z = np.array([x + 1.0 * subgrad])
            res = prox_composite(c, reg, 1.0, z, b=1e-20, mu=1.0, L=1.0)
            assert res.certified
            assert abs(res.point[0] - x) <= 1e-9

    def test_nonsmooth_contraction_sampled(self, rng):
        # Composite prox with a ball indicator contracts at least as fast as
        # 1/(1 + eta*mu); checked against the closed isotropic form.
        for _ in range(100):
            a = float(rng.uniform(0.3, 3.0))
            eta = float(rng.uniform(0.2, 2.0))
            center = rng.standard_normal(3)
            radius = float(rng.uniform(0.5, 2.0))
            x = 3 * rng.standard_normal(3)
            y = 3 * rng.standard_normal(3)
            px = isotropic_ball_prox(a, center, radius, eta, x)
            py = isotropic_ball_prox(a, center, radius, eta, y)
            bound = np.linalg.norm(x - y) / (1 + eta * a)
            assert np.linalg.norm(px - py) <= bound * (1 + 1e-10) + 1e-15

    def test_solver_matches_isotropic_oracle(self, rng):
        for _ in range(10):
            a = float(rng.uniform(0.3, 3.0))
            eta = float(rng.uniform(0.2, 2.0))
            center = rng.standard_normal(3)
            radius = float(rng.uniform(0.5, 2.0))
            z = 3 * rng.standard_normal(3)
            c = ClientObjective.quadratic(a * np.eye(3), -a * center)
            reg = Regularizer.ball(radius)
            b = 1e-16
            res = prox_composite(c, reg, eta, z, b=b, mu=a, L=a)
            oracle = isotropic_ball_prox(a, center, radius, eta, z)
            assert res.certified
            assert np.sum((res.point - oracle) ** 2) <= b


class TestExample1Bias:
    def test_two_point_average_matches_closed_form(self, rng):
        # f1 = a x^2, f2 = 2a x^2, uniform over the two clients: the averaged
        # prox differs from the prox of the average by a known multiple of x.
        a = 1.0
        f1 = ClientObjective.quadratic(np.array([[2 * a]]))
        f2 = ClientObjective.quadratic(np.array([[4 * a]]))
        favg = ClientObjective.quadratic(np.array([[3 * a]]))
        for eta in (0.1, 0.5, 1.0, 3.0):
            for x in (-2.0, 0.5, 1.0, 4.0):
                xv = np.array([x])
                mean_prox = 0.5 * (prox_exact_quadratic(f1, eta, xv)
                                   + prox_exact_quadratic(f2, eta, xv))
                full_prox = prox_exact_quadratic(favg, eta, xv)
                gap = mean_prox[0] - full_prox[0]
                expected = ((1 + 3 * eta * a) / (1 + 6 * eta * a + 8 * eta ** 2 * a ** 2)
                            - 1 / (3 * eta * a + 1)) * x
                assert gap == pytest.approx(expected, abs=1e-12)


class TestEvaluateDispatch:
    def test_b_zero_uses_exact_oracle(self, rng):
        c = random_psd_client(rng, 3)
        z = rng.standard_normal(3)
        res = evaluate(ProxSpec("gd", eta=0.5, b=0.0), c, z)
        assert res.inner_iters == 0 and res.certified
        np.testing.assert_array_equal(res.point, prox_exact_quadratic(c, 0.5, z))

    def test_b_zero_callback_falls_back_to_tiny_b(self):
        c = ClientObjective.from_callbacks(1, lambda x: float(x @ x),
                                           lambda x: 2.0 * x, mu=2.0, smoothness=2.0)
        res = evaluate(ProxSpec("gd", eta=1.0, b=0.0), c, np.array([3.0]))
        assert res.certified
        assert (res.point[0] - 1.0) ** 2 <= 1e-13

    def test_exact_with_regularizer_rejected(self, rng):
        c = random_psd_client(rng, 2)
        with pytest.raises(Exception, match="composite"):
            evaluate(ProxSpec("exact", eta=1.0), c, np.zeros(2),
                     reg=Regularizer.l1(1.0))

    def test_composite_dispatch(self, rng):
        c = random_psd_client(rng, 2)
        res = evaluate(ProxSpec("composite-pg", eta=1.0, b=1e-10), c,
                       np.array([5.0, 5.0]), reg=Regularizer.ball(1.0))
        assert res.certified
        assert np.linalg.norm(res.point) <= 1.0 + 1e-12


class TestIterationCap:
    def test_uncertified_warns(self, rng):
        c = random_psd_client(rng, 4)
        mu, L = c.spectrum()
        with pytest.warns(ProxFailureWarning):
            res = prox_gd(c, 1.0, 10 * np.ones(4), b=1e-14, mu=mu, L=L, max_inner=1)
        assert not res.certified
        assert res.inner_iters == 1

    def test_default_cap_formula(self):
        assert default_max_inner(1.0, 1.0, 1.0, 1e-8) == \
            10 * int(np.ceil(np.log(1e8 + np.e))) + 100
