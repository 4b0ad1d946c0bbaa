"""Catalyst acceleration wrapped around SVRP.

The outer loop repeatedly minimizes the smoothed objective
h_t(x) = f(x) + (gamma/2)||x - y_{t-1}||^2 with a fixed budget of inner SVRP
iterations, then extrapolates. Smoothing a finite sum shifts every client by
the same quadratic, so the clients' gradient deviations - and hence the
dissimilarity constant delta - are unchanged, which is what lets the inner
solver keep its rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import optim
from .fedsim import CommLedger, RunTrace
from .problem import FederatedProblem, UnsupportedObjectiveError
from .prox import ProxSpec

__all__ = [
    "CatalystParams",
    "OuterState",
    "catalyst_params",
    "alpha_update",
    "extrapolate",
    "shift_problem",
    "catalyzed_svrp_run",
]


@dataclass
class CatalystParams:
    """Smoothing, momentum, and budget schedule for the outer loop."""

    gamma: float
    q: float
    rho: float
    alpha0: float
    T_outer: int
    T_inner: int
    A: float          # inner linear-rate prefactor
    tau_inner: float  # inner linear rate
    eta_inner: float  # SVRP stepsize on the smoothed problem


@dataclass
class OuterState:
    x: np.ndarray
    y: np.ndarray
    alpha: float
    t: int = 0


def catalyst_params(mu, delta, M, L, eps, f0_gap=1.0) -> CatalystParams:
    """Select gamma and the budget schedule for a target function gap eps.

    gamma = delta/sqrt(M) - mu when delta/mu >= sqrt(M) (so gamma + mu =
    delta/sqrt(M) <= delta keeps the inner rate valid), and gamma = 0
    otherwise. rho = sqrt(q)/2. The inner budget T_inner comes from the
    fixed-budget schedule log(A * (2/(1-rho) + 2592 gamma / (mu (1-rho)^2
    (sqrt(q)-rho)^2))) / tau_inner; at gamma = 0 the second term vanishes and
    no division by zero occurs since sqrt(q) - rho = sqrt(q)/2 > 0.
    """
    if min(mu, delta, L) <= 0 or M < 1 or eps <= 0:
        raise ValueError("need positive mu, delta, L, eps and M >= 1")
    if delta / mu >= math.sqrt(M):
        gamma = delta / math.sqrt(M) - mu
    else:
        gamma = 0.0
    q = mu / (mu + gamma)
    sq = math.sqrt(q)
    rho = sq / 2.0
    A = (L + gamma) / (mu + gamma) * (1.0 + (gamma + mu) ** 2 * M / delta ** 2)
    tau_inner = 0.5 * min(1.0 / (delta ** 2 / (gamma + mu) ** 2 + 1.0), 1.0 / M)
    eta_inner = (mu + gamma) / (2.0 * delta ** 2)
    T_outer = max(1, math.ceil(
        2.0 * math.sqrt((mu + gamma) / mu)
        * math.log(32.0 * (mu + gamma) / mu * max(f0_gap, eps) / eps)))
    inner_log = math.log(A * (2.0 / (1.0 - rho)
                              + 2592.0 * gamma / (mu * (1.0 - rho) ** 2 * (sq - rho) ** 2)))
    T_inner = max(1, math.ceil(inner_log / tau_inner))
    return CatalystParams(gamma=gamma, q=q, rho=rho, alpha0=sq,
                          T_outer=T_outer, T_inner=T_inner, A=A,
                          tau_inner=tau_inner, eta_inner=eta_inner)


def alpha_update(alpha_prev, q) -> float:
    """Root in (0, 1] of alpha^2 = (1 - alpha) alpha_prev^2 + q alpha.

    Solved in closed form: alpha^2 + (alpha_prev^2 - q) alpha - alpha_prev^2 = 0.
    """
    if not (0.0 < alpha_prev <= 1.0) or not (0.0 < q <= 1.0):
        raise ValueError("alpha_prev and q must lie in (0, 1]")
    bcoef = alpha_prev ** 2 - q
    alpha = 0.5 * (-bcoef + math.sqrt(bcoef ** 2 + 4.0 * alpha_prev ** 2))
    return min(alpha, 1.0)


def extrapolate(x_t, x_prev, alpha_prev, alpha_t) -> np.ndarray:
    """y_t = x_t + beta_t (x_t - x_prev), beta_t = a(1-a)/(a^2 + alpha_t)."""
    beta = alpha_prev * (1.0 - alpha_prev) / (alpha_prev ** 2 + alpha_t)
    return x_t + beta * (x_t - x_prev)


def shift_problem(problem: FederatedProblem, gamma, center) -> FederatedProblem:
    """Every client plus (gamma/2)||x - center||^2; identity when gamma = 0.

    Client gradient deviations from the mean are untouched by the shift, so
    the shifted problem has the same delta as the original.
    """
    if gamma == 0.0:
        return problem
    clients = [c.shifted(gamma, center) for c in problem.clients]
    return FederatedProblem(clients, problem.regularizer, problem.meta)


def catalyzed_svrp_run(problem: FederatedProblem, eps, seed=0, x0=None,
                       budget_override=None, comm_budget=None,
                       stop_sq_dist=None, charge_initial_sync=True,
                       record_events=False) -> RunTrace:
    """Catalyst with SVRP as the inner solver, on a quadratic problem.

    eps is the target function gap used to size the schedule. Every outer step
    re-solves the smoothed problem around the current extrapolation point with
    exactly T_inner SVRP iterations (exact proxes, warm-started at the
    previous outer iterate) and logs one trace sample. budget_override caps
    the number of outer steps; comm_budget and stop_sq_dist stop the run early
    on ledger total or measured squared distance.
    """
    for c in problem.clients:
        if not c.is_quadratic:
            raise UnsupportedObjectiveError("catalyzed SVRP needs quadratic clients")
    if not problem.regularizer.is_none:
        raise UnsupportedObjectiveError("catalyzed SVRP handles regularizer=none only")
    consts = problem.constants()
    M = problem.num_clients
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    f0_gap = max(problem.value(x0) - consts.f_star, eps)
    params = catalyst_params(consts.mu, consts.delta, M, consts.L, eps, f0_gap)
    spec = ProxSpec("exact", eta=params.eta_inner, b=0.0)
    p = 1.0 / M

    rng = np.random.default_rng(seed)
    ledger = CommLedger(record_events=record_events)
    trace = RunTrace(algo="catalyzed-svrp", seed=seed, ledger=ledger)
    dx0 = x0 - consts.x_star
    trace.record(0, 0, float(dx0 @ dx0), f0_gap)

    # Shifted Hessians (and their prox caches) are shared across outer steps:
    # only the linear terms depend on the smoothing center.
    x_prev = x0
    y_prev = x0.copy()
    alpha_prev = params.alpha0
    T_outer = params.T_outer if budget_override is None else int(budget_override)
    total_inner = 0
    for t in range(1, T_outer + 1):
        inner_problem = shift_problem(problem, params.gamma, y_prev)
        state = optim.init_svrp(inner_problem, x_prev)
        if charge_initial_sync:
            ledger.charge_sync(M, step=total_inner)
        for _ in range(params.T_inner):
            new_state = optim.svrp_step(state, inner_problem, spec, p, rng)
            ledger.charge_exchange(total_inner, None)
            if new_state.w is not state.w:
                ledger.charge(total_inner, "notify", None, cost=0)
                ledger.charge_sync(M, step=total_inner)
            state = new_state
            total_inner += 1
        x_t = state.x
        alpha_t = alpha_update(alpha_prev, params.q)
        y_prev = extrapolate(x_t, x_prev, alpha_prev, alpha_t)
        x_prev = x_t
        alpha_prev = alpha_t
        dx = x_t - consts.x_star
        sq = float(dx @ dx)
        trace.record(ledger.total, total_inner, sq,
                     problem.value(x_t) - consts.f_star)
        if stop_sq_dist is not None and sq <= stop_sq_dist:
            break
        if comm_budget is not None and ledger.total >= comm_budget:
            break
    trace.final_x = x_prev
    trace.iterations = total_inner
    return trace
