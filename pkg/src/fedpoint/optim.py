"""Single-step state machines and their theory-driven parameter choices.

Implements the stochastic proximal point method (SPPM), its variance-reduced
variant SVRP (smooth and composite), and the baselines SGD, loopless SVRG, and
a SCAFFOLD-style control-variate method. Each step function is pure: it takes
a state, consumes RNG draws in a fixed documented order (client index first,
then the anchor coin where applicable), and returns a fresh state, so runs are
bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import prox as _prox
from .problem import FederatedProblem, Regularizer

__all__ = [
    "SppmState",
    "SvrpState",
    "ScaffoldState",
    "TheoremParams",
    "ETA_CAP_NUMERATOR",
    "sppm_params",
    "svrp_params",
    "init_sppm",
    "init_svrp",
    "init_scaffold",
    "sppm_step",
    "svrp_step",
    "svrp_composite_step",
    "lyapunov",
    "sgd_step",
    "lsvrg_step",
    "scaffold_step",
    "iterate_recurrence",
    "recurrence_bound",
]

# Stepsize formulas blow up as sigma* or delta tend to zero; cap at 1e6/mu.
ETA_CAP_NUMERATOR = 1e6


@dataclass
class SppmState:
    """Iterate bundle for SPPM and SGD: current point and step counter."""

    x: np.ndarray
    k: int = 0


@dataclass
class SvrpState:
    """Iterate, anchor point, and the full gradient cached at the anchor.

    grad_w is refreshed atomically with w: it always equals full_grad(w).
    """

    x: np.ndarray
    w: np.ndarray
    grad_w: np.ndarray
    k: int = 0


@dataclass
class ScaffoldState:
    """Iterate plus per-client control variates and their running mean."""

    x: np.ndarray
    controls: np.ndarray  # (M, d)
    c_bar: np.ndarray
    k: int = 0


@dataclass
class TheoremParams:
    """Stepsize, anchor probability, prox accuracy, rate, and budget."""

    eta: float
    p: float
    b: float
    tau: float
    K: int


def _capped_eta(raw, mu):
    cap = ETA_CAP_NUMERATOR / mu
    return min(raw, cap) if raw > 0 else cap


def sppm_params(mu, sigma_star_sq, eps, dist0_sq) -> TheoremParams:
    """SPPM parameters for a target accuracy E||x_K - x*||^2 <= eps.

    eta = mu*eps / (2 sigma*^2), b = (eps/4) (eta mu)^2/(1+eta mu)^2, and
    K = ceil(((1+eta mu)/(eta mu)) * ln(4 dist0^2 / eps)). When sigma*^2 = 0
    (interpolation) eta falls back to the cap and K stays finite.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sigma_star_sq < 0:
        raise ValueError("sigma*^2 must be nonnegative")
    if sigma_star_sq > 0:
        eta = _capped_eta(mu * eps / (2.0 * sigma_star_sq), mu)
    else:
        eta = _capped_eta(0.0, mu)
    em = eta * mu
    b = 0.25 * eps * (em / (1.0 + em)) ** 2
    K = max(1, math.ceil((1.0 + em) / em * math.log(4.0 * dist0_sq / eps)))
    return TheoremParams(eta=eta, p=1.0, b=b, tau=em / (1.0 + em), K=K)


def svrp_params(mu, delta, M, eps, dist0_sq=1.0) -> TheoremParams:
    """SVRP parameters: eta = mu/(2 delta^2), p = 1/M, b at its upper bound.

    tau = min{eta mu/(1+2 eta mu), p/2} and the budget K makes
    (1 + eta mu/p) e^{-tau K} dist0^2 <= eps/2, so the final expected squared
    distance is at most eps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if M < 1:
        raise ValueError("M must be at least 1")
    eta = _capped_eta(mu / (2.0 * delta ** 2) if delta > 0 else 0.0, mu)
    p = 1.0 / M
    em = eta * mu
    tau = min(em / (1.0 + 2.0 * em), p / 2.0)
    b = eps * tau * em ** 2 / (2.0 * (1.0 + em) ** 3)
    K = max(1, math.ceil(math.log(2.0 * dist0_sq * (1.0 + em / p) / eps) / tau))
    return TheoremParams(eta=eta, p=p, b=b, tau=tau, K=K)


def init_sppm(problem: FederatedProblem, x0) -> SppmState:
    return SppmState(np.asarray(x0, dtype=float).copy(), 0)


def init_svrp(problem: FederatedProblem, x0) -> SvrpState:
    x0 = np.asarray(x0, dtype=float).copy()
    return SvrpState(x0, x0, problem.full_grad(x0), 0)


def init_scaffold(problem: FederatedProblem, x0) -> ScaffoldState:
    x0 = np.asarray(x0, dtype=float).copy()
    return ScaffoldState(x0, np.zeros((problem.num_clients, problem.dim)),
                         np.zeros(problem.dim), 0)


def sppm_step(state: SppmState, problem, prox_spec, rng) -> SppmState:
    """One SPPM step: sample a client, apply its b-approximate prox."""
    m = int(rng.integers(problem.num_clients))
    result = _prox.evaluate(prox_spec, problem.clients[m], state.x)
    return SppmState(result.point, state.k + 1)


def svrp_step(state: SvrpState, problem, prox_spec, p, rng) -> SvrpState:
    """One SVRP step.

    Samples a client m, forms the correction g = grad f(w) - grad f_m(w),
    applies the client prox at x - eta*g, then flips the anchor coin: on
    success the anchor moves to the new iterate and the cached full gradient
    is recomputed. The returned state shares w/grad_w arrays with the input
    when the coin fails, which callers may use to detect refreshes.
    """
    m = int(rng.integers(problem.num_clients))
    client = problem.clients[m]
    g = state.grad_w - client.grad(state.w)
    z = state.x - prox_spec.eta * g
    result = _prox.evaluate(prox_spec, client, z)
    x_new = result.point
    if rng.random() < p:
        return SvrpState(x_new, x_new, problem.full_grad(x_new), state.k + 1)
    return SvrpState(x_new, state.w, state.grad_w, state.k + 1)


def svrp_composite_step(state: SvrpState, problem, reg: Regularizer,
                        prox_spec, p, rng) -> SvrpState:
    """SVRP step with the composite prox over eta*(f_m + R).

    With reg=none this delegates to svrp_step, so trajectories coincide
    bit-for-bit under a shared seed.
    """
    if reg is None or reg.is_none:
        return svrp_step(state, problem, prox_spec, p, rng)
    m = int(rng.integers(problem.num_clients))
    client = problem.clients[m]
    g = state.grad_w - client.grad(state.w)
    z = state.x - prox_spec.eta * g
    result = _prox.evaluate(prox_spec, client, z, reg=reg)
    x_new = result.point
    if rng.random() < p:
        return SvrpState(x_new, x_new, problem.full_grad(x_new), state.k + 1)
    return SvrpState(x_new, state.w, state.grad_w, state.k + 1)


def lyapunov(state: SvrpState, x_star, eta, mu, p) -> float:
    """V_k = ||x_k - x*||^2 + (eta*mu/p) ||w_k - x*||^2."""
    dx = state.x - x_star
    dw = state.w - x_star
    return float(dx @ dx) + (eta * mu / p) * float(dw @ dw)


def sgd_step(state: SppmState, problem, eta_sgd, rng) -> SppmState:
    """Plain SGD with uniform client sampling."""
    m = int(rng.integers(problem.num_clients))
    x_new = state.x - eta_sgd * problem.clients[m].grad(state.x)
    return SppmState(x_new, state.k + 1)


def lsvrg_step(state: SvrpState, problem, eta_sgd, p, rng) -> SvrpState:
    """Loopless SVRG: variance-reduced SGD with the Bernoulli anchor update."""
    m = int(rng.integers(problem.num_clients))
    client = problem.clients[m]
    estimator = client.grad(state.x) + (state.grad_w - client.grad(state.w))
    x_new = state.x - eta_sgd * estimator
    if rng.random() < p:
        return SvrpState(x_new, x_new, problem.full_grad(x_new), state.k + 1)
    return SvrpState(x_new, state.w, state.grad_w, state.k + 1)


def scaffold_step(state: ScaffoldState, problem, eta_sgd, rng) -> ScaffoldState:
    """Control-variate SGD: x <- x - eta [grad f_m(x) - c_m + c_bar].

    The sampled client's control is refreshed to its gradient at the current
    iterate, and the running mean is updated incrementally.
    """
    m = int(rng.integers(problem.num_clients))
    client = problem.clients[m]
    g = client.grad(state.x)
    x_new = state.x - eta_sgd * (g - state.controls[m] + state.c_bar)
    controls = state.controls.copy()
    c_bar = state.c_bar + (g - controls[m]) / problem.num_clients
    controls[m] = g
    return ScaffoldState(x_new, controls, c_bar, state.k + 1)


def iterate_recurrence(theta, c, r0, K) -> float:
    """Iterate r_{k+1} = (r_k + c) / (1 + theta) for K steps (the tight case)."""
    if theta <= 0 or c < 0 or r0 < 0:
        raise ValueError("need theta > 0, c >= 0, r0 >= 0")
    r = float(r0)
    for _ in range(int(K)):
        r = (r + c) / (1.0 + theta)
    return r


def recurrence_bound(theta, c, r0, K) -> float:
    """Closed-form envelope r0/(1+theta)^K + min{K/(1+theta), 1/theta} * c."""
    if theta <= 0:
        raise ValueError("need theta > 0")
    decay = r0 / (1.0 + theta) ** K
    return decay + min(K / (1.0 + theta), 1.0 / theta) * c
