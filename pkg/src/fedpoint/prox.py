"""Proximal oracles.

prox_{eta*h}(z) = argmin_y [eta*h(y) + 0.5||y - z||^2]. For quadratic clients
this is a linear solve; for the rest we run certified iterative solvers whose
exit test guarantees the returned point lies within squared distance b of the
exact prox (a "b-approximation"). The composite variant handles eta*(f_m + R)
for the supported regularizers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .problem import Regularizer, UnsupportedObjectiveError

__all__ = [
    "ProxSpec",
    "ProxResult",
    "ProxFailureWarning",
    "prox_exact_quadratic",
    "prox_gd",
    "prox_agd",
    "prox_regularizer",
    "prox_composite",
    "default_max_inner",
    "evaluate",
]

PROX_METHODS = ("exact", "gd", "agd", "composite-pg")

# Substitute accuracy when b=0 is requested for a client with no exact oracle.
EXACT_SUBSTITUTE_B = 1e-14


class ProxFailureWarning(UserWarning):
    """An iterative prox solver hit its iteration cap uncertified."""


@dataclass
class ProxSpec:
    """Which prox oracle a solver step should use, and how accurately.

    b is a squared-distance accuracy: the returned point y satisfies
    ||y - prox(z)||^2 <= b. b=0 means "exact": the closed form when the client
    is quadratic and the regularizer is absent, otherwise b=1e-14.
    """

    method: str = "exact"
    eta: float = 1.0
    b: float = 0.0
    max_inner: int | None = None

    def __post_init__(self):
        if self.method not in PROX_METHODS:
            raise ValueError(f"unknown prox method {self.method!r}")
        if self.eta <= 0:
            raise ValueError("stepsize eta must be positive")
        if self.b < 0:
            raise ValueError("accuracy b must be nonnegative")


@dataclass
class ProxResult:
    point: np.ndarray
    inner_iters: int
    certified: bool


def _check_inputs(eta, z):
    if eta <= 0:
        raise ValueError("stepsize eta must be positive")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("prox argument contains non-finite values")
    return z


def default_max_inner(eta, mu, L, b) -> int:
    """Iteration cap: 10x the accelerated-rate bound plus slack.

    Running past sqrt((eta*L+1)/(eta*mu+1)) * log(1/b) signals a bug, so we
    cap there (with headroom) and flag uncertified exits.
    """
    kappa = (eta * L + 1.0) / (eta * mu + 1.0)
    return 10 * math.ceil(math.sqrt(kappa) * math.log(1.0 / b + math.e)) + 100


def prox_exact_quadratic(client, eta, z) -> np.ndarray:
    """Closed-form prox of a quadratic client: solve (I + eta*H) y = z - eta*c."""
    z = _check_inputs(eta, z)
    if not client.is_quadratic:
        raise UnsupportedObjectiveError("exact prox needs a quadratic client")
    return client.shifted_inverse(eta) @ (z - eta * client.linear)


def _local_grad(client, eta, z, y):
    return client.grad(y) + (y - z) / eta


def prox_gd(client, eta, z, b, mu, L, max_inner=None) -> ProxResult:
    """Approximate prox by gradient descent on the eta-regularized local loss.

    Stepsize 1/(L + 1/eta); stops once ||grad||^2 <= b*(mu + 1/eta)^2, which by
    strong convexity certifies ||y - prox(z)||^2 <= b. Starts from y0 = z (not
    the origin): the exit test is state-based so any start is valid, and the
    prox argument is the better guess for small eta.
    """
    z = _check_inputs(eta, z)
    if b <= 0:
        raise ValueError("prox_gd needs b > 0")
    beta = 1.0 / (L + 1.0 / eta)
    threshold = b * (mu + 1.0 / eta) ** 2
    cap = default_max_inner(eta, mu, L, b) if max_inner is None else int(max_inner)
    y = z.copy()
    for t in range(cap):
        g = _local_grad(client, eta, z, y)
        if float(g @ g) <= threshold:
            return ProxResult(y, t, True)
        y = y - beta * g
    g = _local_grad(client, eta, z, y)
    certified = float(g @ g) <= threshold
    if not certified:
        warnings.warn(f"prox_gd hit the iteration cap ({cap}) uncertified",
                      ProxFailureWarning)
    return ProxResult(y, cap, certified)


def prox_agd(client, eta, z, b, mu, L, max_inner=None) -> ProxResult:
    """Like prox_gd but Nesterov-accelerated, with the same exit certificate.

    The local objective is (mu + 1/eta)-strongly convex and (L + 1/eta)-smooth,
    so the constant momentum (sqrt(kappa)-1)/(sqrt(kappa)+1) applies.
    """
    z = _check_inputs(eta, z)
    if b <= 0:
        raise ValueError("prox_agd needs b > 0")
    beta = 1.0 / (L + 1.0 / eta)
    threshold = b * (mu + 1.0 / eta) ** 2
    kappa = (L + 1.0 / eta) / (mu + 1.0 / eta)
    momentum = (math.sqrt(kappa) - 1.0) / (math.sqrt(kappa) + 1.0)
    cap = default_max_inner(eta, mu, L, b) if max_inner is None else int(max_inner)
    u = z.copy()
    v = z.copy()
    for t in range(cap):
        gu = _local_grad(client, eta, z, u)
        if float(gu @ gu) <= threshold:
            return ProxResult(u, t, True)
        u_next = v - beta * _local_grad(client, eta, z, v)
        v = u_next + momentum * (u_next - u)
        u = u_next
    gu = _local_grad(client, eta, z, u)
    certified = float(gu @ gu) <= threshold
    if not certified:
        warnings.warn(f"prox_agd hit the iteration cap ({cap}) uncertified",
                      ProxFailureWarning)
    return ProxResult(u, cap, certified)


def prox_regularizer(reg: Regularizer, eta, z) -> np.ndarray:
    """Closed-form prox_{eta*R}: identity, soft-threshold, or ball projection."""
    z = _check_inputs(eta, z)
    if reg.kind == "none":
        return z.copy()
    if reg.kind == "l1":
        t = eta * reg.weight
        return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    norm = float(np.linalg.norm(z))
    if norm <= reg.radius:
        return z.copy()
    return z * (reg.radius / norm)


def prox_composite(client, reg: Regularizer, eta, z, b, mu, L,
                   max_inner=None) -> ProxResult:
    """Approximate prox of eta*(f_m + R) by proximal gradient descent.

    Certifies through the gradient mapping G = (y - y_plus)/beta of the step
    y_plus = prox_{beta*R}(y - beta*grad phi(y)), phi being the smooth local
    objective. The test bounds ||G||^2 by (b/4)*(mu + 1/eta)^2: for beta = 1/L'
    the composite subgradient at y_plus is within a factor two of G, so the
    factor four makes the certificate imply ||y_plus - prox(z)||^2 <= b. The
    returned point is y_plus, hence always feasible for indicator
    regularizers.
    """
    z = _check_inputs(eta, z)
    if b <= 0:
        raise ValueError("prox_composite needs b > 0")
    beta = 1.0 / (L + 1.0 / eta)
    threshold = 0.25 * b * (mu + 1.0 / eta) ** 2
    cap = default_max_inner(eta, mu, L, b) if max_inner is None else int(max_inner)
    y = z.copy()
    for t in range(cap):
        g = _local_grad(client, eta, z, y)
        y_plus = prox_regularizer(reg, beta, y - beta * g)
        gap = (y - y_plus) / beta
        if float(gap @ gap) <= threshold:
            return ProxResult(y_plus, t + 1, True)
        y = y_plus
    warnings.warn(f"prox_composite hit the iteration cap ({cap}) uncertified",
                  ProxFailureWarning)
    return ProxResult(y, cap, False)


def evaluate(spec: ProxSpec, client, z, reg: Regularizer | None = None) -> ProxResult:
    """Dispatch a prox evaluation according to a ProxSpec.

    With b=0 and an iterative method, an exact oracle is substituted when the
    client is quadratic (and the regularizer absent); otherwise the solver runs
    at b=1e-14.
    """
    reg_active = reg is not None and not reg.is_none
    if spec.method == "exact" or (spec.b == 0.0 and not reg_active
                                  and client.is_quadratic):
        if reg_active:
            raise UnsupportedObjectiveError(
                "exact prox does not support a regularizer; use composite-pg")
        point = prox_exact_quadratic(client, spec.eta, z)
        return ProxResult(point, 0, True)
    b = spec.b if spec.b > 0 else EXACT_SUBSTITUTE_B
    mu = client.strong_convexity()
    L = client.smoothness()
    if spec.method == "composite-pg" or reg_active:
        reg = reg if reg is not None else Regularizer.none()
        return prox_composite(client, reg, spec.eta, z, b, mu, L, spec.max_inner)
    if spec.method == "agd":
        return prox_agd(client, spec.eta, z, b, mu, L, spec.max_inner)
    return prox_gd(client, spec.eta, z, b, mu, L, spec.max_inner)
