import numpy as np
import pytest

from fedpoint.problem import ClientObjective, FederatedProblem


def random_psd_client(rng, d, lam_lo=0.5, lam_hi=5.0, linear_scale=1.0):
    """Random explicit quadratic with eigenvalues in [lam_lo, lam_hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = rng.uniform(lam_lo, lam_hi, size=d)
    H = (q * eigs) @ q.T
    H = 0.5 * (H + H.T)
    return ClientObjective.quadratic(H, linear_scale * rng.standard_normal(d))


def random_problem(rng, M, d, lam_lo=0.5, lam_hi=5.0, linear_scale=1.0):
    return FederatedProblem(
        [random_psd_client(rng, d, lam_lo, lam_hi, linear_scale) for _ in range(M)])


def fd_grad(fn, x, h=1e-6):
    """Central finite differences."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
