"""Problem construction: synthetic instances with prescribed constants,
LIBSVM text-format ingestion, and client partitioning.

The synthetic generator works in Hessian space: client Hessians are
H_m = Hbar + delta * S_m with sum_m S_m = 0 and lambda_max((1/M) sum S_m^2)
normalized to 1, so the measured dissimilarity equals delta exactly and the
smoothness of the average equals the requested L exactly. The perturbations
act on the orthogonal complement of Hbar's bottom eigenvector, which pins the
strong convexity of every client at the ridge weight lam.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass

import numpy as np

from .problem import ClientObjective, FederatedProblem, Regularizer

__all__ = [
    "SyntheticSpec",
    "LibsvmDataset",
    "LibsvmFormatError",
    "InfeasibleSpecError",
    "generate_synthetic",
    "parse_libsvm",
    "serialize_libsvm",
    "partition",
    "problem_to_text",
    "problem_from_text",
]


class InfeasibleSpecError(ValueError):
    """The requested (delta, L, lam) combination admits no valid instance."""


class LibsvmFormatError(ValueError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic federated ridge problem.

    mode="hessian" (the default) plants client Hessians directly and hits
    delta_target and L_target exactly; mode="data" draws feature vectors and
    the resulting constants are measured, not targeted (n samples per client).
    """

    M: int
    d: int
    delta_target: float
    L_target: float
    lam: float = 1.0
    noise_std: float = 0.0
    seed: int = 0
    mode: str = "hessian"
    n: int | None = None

    def __post_init__(self):
        if self.M < 1 or self.d < 1:
            raise ValueError("M and d must be positive")
        if self.delta_target < 0 or self.L_target <= 0 or self.lam < 0:
            raise ValueError("need delta_target >= 0, L_target > 0, lam >= 0")
        if self.delta_target > self.L_target:
            raise InfeasibleSpecError("delta_target must not exceed L_target")
        if self.delta_target > 0 and self.M < 2:
            raise ValueError("nonzero delta needs at least two clients")
        if self.mode not in ("hessian", "data"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "data" and (self.n is None or self.n < 1):
            raise ValueError("data mode needs n >= 1 samples per client")


def _random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _perturbations(rng, M, d, basis):
    """Paired symmetric matrices supported on span(basis) with zero sum.

    Each base matrix is scaled to unit operator norm before the global
    normalization lambda_max((1/M) sum S_m^2) = 1.
    """
    mats = []
    for _ in range(M // 2):
        block = rng.standard_normal((d - 1, d - 1))
        block = 0.5 * (block + block.T)
        S = basis @ block @ basis.T
        S /= max(np.abs(np.linalg.eigvalsh(S)).max(), 1e-30)
        mats.extend([S, -S])
    if M % 2:
        mats.append(np.zeros((d, d)))
    mean_sq = sum(S @ S for S in mats) / M
    top = np.abs(np.linalg.eigvalsh(mean_sq)).max()
    scale = 1.0 / np.sqrt(top) if top > 0 else 1.0
    mats = [S * scale for S in mats]
    s_max = max(np.abs(np.linalg.eigvalsh(S)).max() for S in mats)
    return mats, float(s_max)


def generate_synthetic(spec: SyntheticSpec) -> FederatedProblem:
    """Build a problem whose measured (delta, L, mu) hit the spec exactly.

    Linear terms come from a planted minimizer plus centered noise, so the
    planted point stays the exact global minimizer and the gradient spread at
    the optimum is controlled by noise_std.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "data":
        return _generate_from_data(spec, rng)
    M, d = spec.M, spec.d
    if spec.delta_target > 0 and d < 2:
        raise InfeasibleSpecError("nonzero delta needs dimension >= 2")

    Q = _random_orthogonal(rng, d)
    if spec.delta_target > 0:
        mats, s_max = _perturbations(rng, M, d, Q[:, 1:])
    else:
        mats, s_max = [np.zeros((d, d)) for _ in range(M)], 0.0

    floor = spec.lam + spec.delta_target * s_max
    if d > 1 and floor >= spec.L_target:
        raise InfeasibleSpecError(
            f"delta_target={spec.delta_target} forces client eigenvalues below "
            f"lam={spec.lam}: need lam + delta*s_max = {floor:.6g} < L_target="
            f"{spec.L_target}")
    eigs = np.empty(d)
    eigs[0] = spec.lam
    if d > 1:
        eigs[1:] = rng.uniform(floor, spec.L_target, size=d - 1)
        eigs[-1] = spec.L_target
    hbar = (Q * eigs) @ Q.T
    hbar = 0.5 * (hbar + hbar.T)

    x_plant = rng.standard_normal(d)
    noise = spec.noise_std * rng.standard_normal((M, d))
    noise -= noise.mean(axis=0)  # keeps the planted point the exact minimizer

    clients = []
    for m in range(M):
        H = hbar + spec.delta_target * mats[m]
        H = 0.5 * (H + H.T)
        c = -(H @ x_plant) + noise[m]
        clients.append(ClientObjective.quadratic(H, c, mu=None))
    meta = {"kind": "synthetic-hessian", "seed": spec.seed, "planted": x_plant,
            "delta_target": spec.delta_target, "L_target": spec.L_target,
            "lam": spec.lam, "noise_std": spec.noise_std}
    return FederatedProblem(clients, Regularizer.none(), meta)


def _generate_from_data(spec, rng):
    """Draw i.i.d. feature vectors per client; constants are measured."""
    M, d, n = spec.M, spec.d, spec.n
    cov_basis = _random_orthogonal(rng, d)
    cov_eigs = rng.uniform(0.2, 1.0, size=d)
    cov_eigs[-1] = 1.0
    cov_eigs *= (spec.L_target - spec.lam) / 2.0
    cov_sqrt = cov_basis * np.sqrt(cov_eigs)
    x_plant = rng.standard_normal(d)
    clients = []
    for _ in range(M):
        Z = rng.standard_normal((n, d)) @ cov_sqrt.T
        y = Z @ x_plant + spec.noise_std * rng.standard_normal(n)
        clients.append(ClientObjective.ridge(Z, y, spec.lam))
    meta = {"kind": "synthetic-data", "seed": spec.seed, "planted": x_plant,
            "lam": spec.lam}
    return FederatedProblem(clients, Regularizer.none(), meta)


@dataclass
class LibsvmDataset:
    """Sparse rows parsed from LIBSVM text: label plus 1-based index:value pairs."""

    labels: np.ndarray
    feature_indices: list  # per row: int64 array, strictly increasing, >= 1
    feature_values: list   # per row: float64 array
    dim: int

    @property
    def n(self) -> int:
        return len(self.labels)

    def dense(self) -> np.ndarray:
        X = np.zeros((self.n, self.dim))
        for i, (idx, val) in enumerate(zip(self.feature_indices, self.feature_values)):
            X[i, idx - 1] = val
        return X


_TOKEN = re.compile(r"\S+")


def parse_libsvm(source, declared_dim=None) -> LibsvmDataset:
    """Parse LIBSVM text (``label idx:val idx:val ...`` per line).

    `source` is a path, a text stream, or a string. Blank lines are skipped.
    Malformed tokens, indices below 1, and non-increasing indices are rejected
    with their line and column. dim is the largest index observed unless
    `declared_dim` overrides it.
    """
    if isinstance(source, str) and "\n" not in source and ":" not in source:
        with open(source, "r", encoding="ascii") as fh:
            return parse_libsvm(fh, declared_dim)
    if isinstance(source, str):
        source = io.StringIO(source)

    labels = []
    all_indices = []
    all_values = []
    dim = 0
    for lineno, line in enumerate(source, start=1):
        tokens = list(_TOKEN.finditer(line))
        if not tokens:
            continue
        first = tokens[0]
        try:
            labels.append(float(first.group()))
        except ValueError:
            raise LibsvmFormatError(f"bad label {first.group()!r}",
                                    lineno, first.start() + 1) from None
        indices = []
        values = []
        prev = 0
        for tok in tokens[1:]:
            col = tok.start() + 1
            text = tok.group()
            idx_s, sep, val_s = text.partition(":")
            if not sep:
                raise LibsvmFormatError(f"expected index:value, got {text!r}",
                                        lineno, col)
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmFormatError(f"bad feature index {idx_s!r}",
                                        lineno, col) from None
            try:
                val = float(val_s)
            except ValueError:
                raise LibsvmFormatError(f"bad feature value {val_s!r}",
                                        lineno, col) from None
            if idx < 1:
                raise LibsvmFormatError(f"feature index {idx} below 1", lineno, col)
            if idx <= prev:
                raise LibsvmFormatError(
                    f"feature index {idx} not increasing (previous {prev})",
                    lineno, col)
            if not np.isfinite(val):
                raise LibsvmFormatError(f"non-finite value {val_s!r}", lineno, col)
            indices.append(idx)
            values.append(val)
            prev = idx
        dim = max(dim, prev)
        all_indices.append(np.asarray(indices, dtype=np.int64))
        all_values.append(np.asarray(values, dtype=np.float64))
    if declared_dim is not None:
        if declared_dim < dim:
            raise ValueError(f"declared_dim={declared_dim} below observed {dim}")
        dim = declared_dim
    return LibsvmDataset(np.asarray(labels, dtype=np.float64),
                         all_indices, all_values, dim)


def serialize_libsvm(dataset: LibsvmDataset) -> str:
    """Canonical text form; re-parsing yields an equal dataset."""
    lines = []
    for label, idx, val in zip(dataset.labels, dataset.feature_indices,
                               dataset.feature_values):
        parts = [f"{label:.17g}"]
        parts.extend(f"{i}:{v:.17g}" for i, v in zip(idx, val))
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def partition(dataset: LibsvmDataset, M, n_per_client, lam, seed=0,
              identity=False, remap01=False) -> FederatedProblem:
    """Sample n_per_client rows (with replacement) for each of M clients.

    identity=True instead assigns every client all rows in file order, which
    needs n_per_client == len(dataset). remap01=True maps labels {-1,+1} to
    {0,1}; by default labels are used directly as regression targets.
    """
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    if n_per_client <= 0:
        raise ValueError("n_per_client must be positive")
    X = dataset.dense()
    y = dataset.labels.copy()
    if remap01:
        y = 0.5 * (y + 1.0)
    rng = np.random.default_rng(seed)
    clients = []
    index_log = []
    for _ in range(M):
        if identity:
            if n_per_client != dataset.n:
                raise ValueError("identity partitioning needs n_per_client == len(dataset)")
            idx = np.arange(dataset.n)
        else:
            idx = rng.integers(dataset.n, size=n_per_client)
        index_log.append(idx.copy())
        clients.append(ClientObjective.ridge(X[idx], y[idx], lam))
    meta = {"kind": "libsvm-partition", "seed": seed, "lam": lam,
            "indices": index_log}
    return FederatedProblem(clients, Regularizer.none(), meta)


# -- plain-text problem serialization ---------------------------------------

_HEADER = "fedpoint-problem v1"


def problem_to_text(problem: FederatedProblem) -> str:
    """Locale-independent decimal dump: header, sizes, then dense matrices."""
    out = [_HEADER]
    reg = problem.regularizer
    if reg.kind == "l1":
        reg_s = f"l1 {reg.weight:.17g}"
    elif reg.kind == "ball":
        reg_s = f"ball {reg.radius:.17g}"
    else:
        reg_s = "none"
    out.append(f"clients {problem.num_clients} dim {problem.dim} regularizer {reg_s}")
    for c in problem.clients:
        if not c.is_quadratic:
            raise ValueError("only quadratic clients serialize")
        out.append(f"client {c.kind} offset {c.offset:.17g} ridge {c.ridge:.17g}")
        out.append(" ".join(f"{v:.17g}" for v in c.linear))
        for row in c.hessian:
            out.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(out) + "\n"


def problem_from_text(text: str) -> FederatedProblem:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ValueError("missing problem header")
    head = lines[1].split()
    M, d = int(head[1]), int(head[3])
    reg_kind = head[5]
    if reg_kind == "l1":
        reg = Regularizer.l1(float(head[6]))
    elif reg_kind == "ball":
        reg = Regularizer.ball(float(head[6]))
    else:
        reg = Regularizer.none()
    pos = 2
    clients = []
    for _ in range(M):
        tag = lines[pos].split()
        kind, offset, ridge = tag[1], float(tag[3]), float(tag[5])
        linear = np.array(lines[pos + 1].split(), dtype=float)
        rows = [np.array(lines[pos + 2 + i].split(), dtype=float) for i in range(d)]
        H = np.vstack(rows)
        client = ClientObjective.quadratic(H, linear, offset=offset)
        client.kind = kind
        client.ridge = ridge
        clients.append(client)
        pos += 2 + d
    return FederatedProblem(clients, reg)
