"""Client objectives, federated problems, and their measured constants.

A problem bundles M strongly convex client losses (quadratics, either explicit
or backed by a ridge-regression dataset) with an optional nonsmooth
regularizer. Besides value/gradient evaluation, this module measures the
constants that every stepsize formula downstream consumes: per-client strong
convexity mu, smoothness L of the average loss, the cross-client
Hessian-dissimilarity constant delta, the gradient spread sigma*^2 at the
optimum, and the minimizer itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClientObjective",
    "Regularizer",
    "FederatedProblem",
    "ProblemConstants",
    "DimensionMismatchError",
    "UnsupportedObjectiveError",
    "NoMinimizerError",
    "compute_constants",
    "estimate_delta",
    "sigma_star_sq",
    "power_iteration",
    "similarity_gap",
]

POWER_ITER_MAX = 10_000
POWER_ITER_TOL = 1e-8
SYMMETRY_RTOL = 1e-12
MAX_DENSE_DIM = 512


class DimensionMismatchError(ValueError):
    """Vector does not match the problem dimension."""


class UnsupportedObjectiveError(TypeError):
    """The operation needs quadratic clients (explicit or dataset-ridge)."""


class NoMinimizerError(RuntimeError):
    """The averaged quadratic system is singular or not strongly convex."""


def _as_vector(x, d, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and d == 1:
        x = x.reshape(1)
    if x.shape != (d,):
        raise DimensionMismatchError(f"{name} has shape {x.shape}, expected ({d},)")
    return x


class ClientObjective:
    """One client's loss function.

    Supported kinds:

    * ``explicit-quadratic``: f(x) = 0.5 x'Hx + c'x + c0 with H symmetric PSD.
    * ``dataset-ridge``: f(x) = (1/n) ||Zx - y||^2 + (lam/2) ||x||^2. The dense
      Hessian (2/n) Z'Z + lam*I and linear term -(2/n) Z'y are materialized at
      construction, so gradient and proximal evaluations cost O(d^2).
    * ``callback``: black-box value/gradient functions with user-declared
      strong convexity and smoothness. Usable by the iterative solvers but
      rejected by the constants oracle.

    Instances are immutable by convention; internal caches (spectrum, shifted
    inverses) are write-once per key and safe to share across threads.
    """

    def __init__(self, kind, dim, hessian=None, linear=None, offset=0.0,
                 features=None, labels=None, ridge=0.0, mu=None,
                 value_fn=None, grad_fn=None, _validate=True):
        self.kind = kind
        self.dim = int(dim)
        self.hessian = hessian
        self.linear = linear
        self.offset = float(offset)
        self.features = features
        self.labels = labels
        self.ridge = float(ridge)
        self.mu = mu
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self._eigs = None
        self._shifted_inverses = {}
        self._shift_shared = {}
        if _validate and self.is_quadratic:
            self._validate_quadratic()

    # -- constructors -------------------------------------------------------

    @classmethod
    def quadratic(cls, hessian, linear=None, offset=0.0, mu=None):
        """Explicit quadratic 0.5 x'Hx + c'x + c0."""
        hessian = np.atleast_2d(np.asarray(hessian, dtype=float))
        d = hessian.shape[0]
        linear = np.zeros(d) if linear is None else _as_vector(linear, d, "linear")
        return cls("explicit-quadratic", d, hessian=hessian, linear=linear,
                   offset=offset, mu=mu)

    @classmethod
    def ridge(cls, features, labels, lam, mu=None):
        """Ridge regression loss (1/n)||Zx - y||^2 + (lam/2)||x||^2."""
        Z = np.atleast_2d(np.asarray(features, dtype=float))
        y = np.asarray(labels, dtype=float).ravel()
        n, d = Z.shape
        if y.shape != (n,):
            raise DimensionMismatchError(f"labels have shape {y.shape}, expected ({n},)")
        if lam < 0:
            raise ValueError("ridge coefficient must be nonnegative")
        if d > MAX_DENSE_DIM:
            raise ValueError(f"dense Gram matrices are limited to d <= {MAX_DENSE_DIM}")
        H = (2.0 / n) * (Z.T @ Z) + lam * np.eye(d)
        c = -(2.0 / n) * (Z.T @ y)
        c0 = float(y @ y) / n
        return cls("dataset-ridge", d, hessian=H, linear=c, offset=c0,
                   features=Z, labels=y, ridge=lam, mu=mu)

    @classmethod
    def from_callbacks(cls, dim, value_fn, grad_fn, mu=None, smoothness=None):
        """Black-box objective. mu/smoothness must be supplied by the caller."""
        obj = cls("callback", dim, mu=mu, value_fn=value_fn, grad_fn=grad_fn)
        obj._declared_smoothness = smoothness
        return obj

    # -- basic queries -------------------------------------------------------

    @property
    def is_quadratic(self):
        return self.kind in ("explicit-quadratic", "dataset-ridge")

    def _validate_quadratic(self):
        H = np.asarray(self.hessian, dtype=float)
        if H.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f"hessian has shape {H.shape}")
        scale = max(1.0, float(np.abs(H).max()))
        if np.abs(H - H.T).max() > SYMMETRY_RTOL * scale:
            raise ValueError("hessian is not symmetric within 1e-12 relative")
        self.hessian = 0.5 * (H + H.T)
        self.linear = _as_vector(self.linear, self.dim, "linear")

    def value(self, x) -> float:
        x = _as_vector(x, self.dim)
        if self.is_quadratic:
            return float(0.5 * x @ (self.hessian @ x) + self.linear @ x + self.offset)
        return float(self._value_fn(x))

    def grad(self, x) -> np.ndarray:
        x = _as_vector(x, self.dim)
        if self.is_quadratic:
            return self.hessian @ x + self.linear
        return np.asarray(self._grad_fn(x), dtype=float)

    def spectrum(self):
        """(lambda_min, lambda_max) of the Hessian, cached."""
        if not self.is_quadratic:
            raise UnsupportedObjectiveError("spectrum needs a quadratic client")
        if self._eigs is None:
            w = np.linalg.eigvalsh(self.hessian)
            self._eigs = (float(w[0]), float(w[-1]))
        return self._eigs

    def strong_convexity(self) -> float:
        if self.mu is not None:
            return float(self.mu)
        return self.spectrum()[0]

    def smoothness(self) -> float:
        if not self.is_quadratic:
            if getattr(self, "_declared_smoothness", None) is None:
                raise UnsupportedObjectiveError("callback client has no declared smoothness")
            return float(self._declared_smoothness)
        return self.spectrum()[1]

    # -- helpers for proximal solvers and Catalyst shifts ---------------------

    def shifted_inverse(self, eta) -> np.ndarray:
        """Cached (I + eta*H)^{-1}; the workhorse of the exact prox."""
        if not self.is_quadratic:
            raise UnsupportedObjectiveError("exact prox needs a quadratic client")
        inv = self._shifted_inverses.get(eta)
        if inv is None:
            inv = np.linalg.inv(np.eye(self.dim) + eta * self.hessian)
            self._shifted_inverses[eta] = inv
        return inv

    def shifted(self, gamma, center):
        """The client loss plus (gamma/2)||x - center||^2.

        Children created with the same gamma share the shifted Hessian, its
        spectrum, and the prox-inverse cache, so only the linear term is new.
        """
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not self.is_quadratic:
            raise UnsupportedObjectiveError("shifting needs a quadratic client")
        if gamma == 0.0:
            return self
        center = _as_vector(center, self.dim, "center")
        shared = self._shift_shared.get(gamma)
        if shared is None:
            shared = {
                "hessian": self.hessian + gamma * np.eye(self.dim),
                "inverses": {},
            }
            self._shift_shared[gamma] = shared
        child = ClientObjective(
            self.kind, self.dim, hessian=shared["hessian"],
            linear=self.linear - gamma * center,
            offset=self.offset + 0.5 * gamma * float(center @ center),
            ridge=self.ridge, mu=None if self.mu is None else self.mu + gamma,
            _validate=False)
        child.linear = _as_vector(child.linear, self.dim, "linear")
        if self._eigs is not None:
            child._eigs = (self._eigs[0] + gamma, self._eigs[1] + gamma)
        child._shifted_inverses = shared["inverses"]
        return child


class Regularizer:
    """Nonsmooth part of a composite problem: none, l1, or a ball indicator."""

    def __init__(self, kind="none", weight=None, radius=None):
        if kind not in ("none", "l1", "ball"):
            raise ValueError(f"unknown regularizer kind {kind!r}")
        if kind == "l1" and (weight is None or weight <= 0):
            raise ValueError("l1 weight must be positive")
        if kind == "ball" and (radius is None or radius <= 0):
            raise ValueError("ball radius must be positive")
        self.kind = kind
        self.weight = None if weight is None else float(weight)
        self.radius = None if radius is None else float(radius)

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def l1(cls, weight):
        return cls("l1", weight=weight)

    @classmethod
    def ball(cls, radius):
        return cls("ball", radius=radius)

    @property
    def is_none(self):
        return self.kind == "none"

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            return 0.0
        if self.kind == "l1":
            return self.weight * float(np.abs(x).sum())
        # indicator: tolerate tiny numerical overshoot of the radius
        nx = float(np.linalg.norm(x))
        return 0.0 if nx <= self.radius * (1 + 1e-12) else float("inf")

    def __repr__(self):
        if self.kind == "l1":
            return f"Regularizer.l1({self.weight})"
        if self.kind == "ball":
            return f"Regularizer.ball({self.radius})"
        return "Regularizer.none()"


@dataclass
class ProblemConstants:
    """Measured constants of a federated problem (regularizer excluded)."""

    mu: float
    L: float
    delta: float
    sigma_star_sq: float
    x_star: np.ndarray
    f_star: float

    @property
    def kappa(self) -> float:
        return self.L / self.mu


class FederatedProblem:
    """M client objectives sharing a dimension plus an optional regularizer."""

    def __init__(self, clients, regularizer=None, meta=None):
        clients = list(clients)
        if not clients:
            raise ValueError("need at least one client")
        d = clients[0].dim
        for i, c in enumerate(clients):
            if c.dim != d:
                raise DimensionMismatchError(
                    f"client {i} has dimension {c.dim}, expected {d}")
        lams = {c.ridge for c in clients if c.kind == "dataset-ridge"}
        if len(lams) > 1:
            raise ValueError(f"ridge clients disagree on lambda: {sorted(lams)}")
        self.clients = clients
        self.regularizer = regularizer if regularizer is not None else Regularizer.none()
        self.meta = dict(meta) if meta else {}
        self._constants_cache = {}

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def value(self, x) -> float:
        """Smooth part f(x): the mean of the client losses."""
        x = _as_vector(x, self.dim)
        total = 0.0
        for c in self.clients:
            total += c.value(x)
        return total / self.num_clients

    def composite_value(self, x) -> float:
        return self.value(x) + self.regularizer.value(x)

    def full_grad(self, x) -> np.ndarray:
        """Mean of client gradients, reduced in ascending client order."""
        x = _as_vector(x, self.dim)
        total = self.clients[0].grad(x)
        for c in self.clients[1:]:
            total = total + c.grad(x)
        return total / self.num_clients

    def without_regularizer(self):
        if self.regularizer.is_none:
            return self
        return FederatedProblem(self.clients, Regularizer.none(), self.meta)

    def constants(self, tol=POWER_ITER_TOL, seed=0) -> ProblemConstants:
        key = (tol, seed)
        if key not in self._constants_cache:
            self._constants_cache[key] = compute_constants(self, tol=tol, seed=seed)
        return self._constants_cache[key]


def power_iteration(mat, tol=POWER_ITER_TOL, max_iters=POWER_ITER_MAX, seed=0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Deterministic: the start vector comes from a generator seeded with `seed`.
    Stops when the Rayleigh quotient changes by less than `tol` relative.
    """
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = mat @ v
        lam_new = float(v @ w)
        norm_w = float(np.linalg.norm(w))
        if norm_w <= 1e-300:
            return 0.0
        v = w / norm_w
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            return lam_new
        lam = lam_new
    return lam


def estimate_delta(problem, tol=POWER_ITER_TOL, seed=0) -> float:
    """Hessian-dissimilarity constant for quadratic clients.

    For constant Hessians the mean-squared gradient-deviation bound tightens
    to delta^2 = lambda_max(D) with D = (1/M) sum (H_m - Hbar)^2, which is what
    we compute (by power iteration on the PSD matrix D).
    """
    for c in problem.clients:
        if not c.is_quadratic:
            raise UnsupportedObjectiveError("delta estimation needs quadratic clients")
    M = problem.num_clients
    if M == 1:
        return 0.0
    hbar = sum(c.hessian for c in problem.clients) / M
    D = np.zeros_like(hbar)
    for c in problem.clients:
        dev = c.hessian - hbar
        D += dev @ dev
    D /= M
    return float(np.sqrt(max(power_iteration(D, tol=tol, seed=seed), 0.0)))


def sigma_star_sq(problem, x_star) -> float:
    """Mean squared client-gradient norm at the minimizer."""
    x_star = _as_vector(x_star, problem.dim, "x_star")
    total = 0.0
    for c in problem.clients:
        g = c.grad(x_star)
        total += float(g @ g)
    return total / problem.num_clients


def compute_constants(problem, tol=POWER_ITER_TOL, seed=0) -> ProblemConstants:
    """Measure (mu, L, delta, sigma*^2, x*, f*) for a quadratic problem.

    x* comes from a direct symmetric solve of the averaged system, L from
    power iteration on the averaged Hessian, mu from the minimum client
    lambda_min (dense eigensolve; dimensions are capped at 512), delta from
    `estimate_delta`, and sigma*^2 by definition at x*.
    """
    if not problem.regularizer.is_none:
        raise UnsupportedObjectiveError("constants are defined for regularizer=none")
    for c in problem.clients:
        if not c.is_quadratic:
            raise UnsupportedObjectiveError("constants need quadratic clients")
    M = problem.num_clients
    hbar = sum(c.hessian for c in problem.clients) / M
    cbar = sum(c.linear for c in problem.clients) / M
    try:
        x_star = np.linalg.solve(hbar, -cbar)
    except np.linalg.LinAlgError as exc:
        raise NoMinimizerError("averaged Hessian is singular") from exc
    resid = float(np.linalg.norm(hbar @ x_star + cbar))
    if not np.isfinite(x_star).all() or resid > 1e-8 * max(1.0, float(np.linalg.norm(cbar))):
        raise NoMinimizerError("averaged system is numerically singular")
    grad_norm = float(np.linalg.norm(problem.full_grad(x_star)))
    grad_scale = max(1.0, float(np.linalg.norm(problem.full_grad(np.zeros(problem.dim)))))
    if grad_norm > 1e-8 * grad_scale:
        raise NoMinimizerError(f"gradient at the solved point is {grad_norm:.3e}")

    mu = np.inf
    for i, c in enumerate(problem.clients):
        lo, _ = c.spectrum()
        if c.mu is not None and lo < c.mu - 1e-10 * max(1.0, abs(c.mu)):
            raise ValueError(
                f"client {i} declares mu={c.mu} but lambda_min={lo:.6g}")
        mu = min(mu, lo)
    if mu <= 0:
        raise NoMinimizerError(f"clients are not strongly convex (min eigenvalue {mu:.3e})")

    L = power_iteration(hbar, tol=tol, seed=seed)
    delta = estimate_delta(problem, tol=tol, seed=seed)
    sig = sigma_star_sq(problem, x_star)
    return ProblemConstants(mu=float(mu), L=float(L), delta=float(delta),
                            sigma_star_sq=float(sig), x_star=x_star,
                            f_star=problem.value(x_star))


def similarity_gap(problem, x, y) -> float:
    """Mean squared deviation of client gradient differences from the average.

    Evaluates (1/M) sum_m ||[grad f_m(x) - grad f(x)] - [grad f_m(y) - grad f(y)]||^2,
    the quantity bounded by delta^2 ||x - y||^2.
    """
    x = _as_vector(x, problem.dim)
    y = _as_vector(y, problem.dim, "y")
    gx = problem.full_grad(x)
    gy = problem.full_grad(y)
    total = 0.0
    for c in problem.clients:
        dev = (c.grad(x) - gx) - (c.grad(y) - gy)
        total += float(dev @ dev)
    return total / problem.num_clients
