"""Client-server choreography as an event simulation with exact communication
accounting.

The cost unit is one vector exchanged between the server and a single client.
Per-iteration events:

* sppm / sgd: send-model + return-model = 2.
* svrp / svrp-composite / lsvrg: 2, plus on an anchor refresh a broadcast of
  the new anchor (M), gradient uploads (M), and a full-gradient broadcast (M),
  i.e. 3M more; the refresh notification itself carries no vector and costs 0.
  These algorithms also pay a one-off 3M synchronization before iteration 0.
* scaffold: 4 (model and control vector in each direction).

Scalar setup messages (stepsizes, accuracies) cost 0. Iterations are atomic:
the run stops before the first iteration whose events would exceed the budget.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .prox import ProxSpec

__all__ = [
    "CommEvent",
    "CommLedger",
    "RunTrace",
    "ALGORITHMS",
    "SETUP_STEP",
    "expected_comm_per_iter",
    "initial_sync_cost",
    "simulate",
    "TRACE_COLUMNS",
]

ALGORITHMS = ("sppm", "svrp", "svrp-composite", "sgd", "lsvrg", "scaffold",
              "catalyzed-svrp")

SVRP_FAMILY = ("svrp", "svrp-composite", "lsvrg")

# Step index used for the pre-loop synchronization round.
SETUP_STEP = -1

TRACE_COLUMNS = ("comm_steps", "iter", "sq_dist", "subopt", "seed", "algo")


@dataclass
class CommEvent:
    step: int
    kind: str
    client: int | None
    cost: int


class CommLedger:
    """Append-only log of communication events with running totals.

    Broadcast-style rounds are expanded into M unit-cost events, one per
    client. With record_events=False only the totals and the per-iteration
    histogram are kept (useful for long Monte-Carlo sweeps).
    """

    def __init__(self, record_events=True):
        self.record_events = record_events
        self.events: list[CommEvent] = []
        self.total = 0
        self.per_iteration: dict[int, int] = {}

    def charge(self, step, kind, client=None, cost=1):
        if self.record_events:
            self.events.append(CommEvent(step, kind, client, cost))
        self.total += cost
        self.per_iteration[step] = self.per_iteration.get(step, 0) + cost

    def charge_broadcast(self, step, kind, num_clients):
        for m in range(num_clients):
            self.charge(step, kind, client=m, cost=1)

    def charge_sync(self, num_clients, step=SETUP_STEP):
        """Anchor broadcast + gradient uploads + full-gradient broadcast."""
        self.charge_broadcast(step, "broadcast-anchor", num_clients)
        self.charge_broadcast(step, "upload-gradient", num_clients)
        self.charge_broadcast(step, "broadcast-full-gradient", num_clients)

    def charge_exchange(self, step, client):
        self.charge(step, "send-model", client=client, cost=1)
        self.charge(step, "return-model", client=client, cost=1)

    def iteration_costs(self, include_setup=False):
        return [cost for step, cost in sorted(self.per_iteration.items())
                if include_setup or step != SETUP_STEP]


@dataclass
class RunTrace:
    """Sampled (communication, iteration, error) curve of one seeded run."""

    algo: str
    seed: int
    comm: list = field(default_factory=list)
    iters: list = field(default_factory=list)
    sq_dist: list = field(default_factory=list)
    subopt: list = field(default_factory=list)
    final_x: np.ndarray | None = None
    iterations: int = 0
    wall_time: float = 0.0
    ledger: CommLedger | None = None

    def record(self, comm, k, sq, sub):
        self.comm.append(int(comm))
        self.iters.append(int(k))
        self.sq_dist.append(float(sq))
        self.subopt.append(float(sub))

    def rows(self):
        for c, k, sq, sub in zip(self.comm, self.iters, self.sq_dist, self.subopt):
            yield (c, k, sq, sub, self.seed, self.algo)

    def to_csv(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for c, k, sq, sub, seed, algo in self.rows():
                fh.write(f"{c},{k},{sq:.17g},{sub:.17g},{seed},{algo}\n")

    def first_crossing(self, sq_threshold):
        """Communication total at the first sample with sq_dist <= threshold."""
        for c, sq in zip(self.comm, self.sq_dist):
            if sq <= sq_threshold:
                return c
        return None


def expected_comm_per_iter(algorithm, p=None, M=None) -> float:
    """Expected vector exchanges per iteration under the cost model above."""
    if algorithm in ("sppm", "sgd"):
        return 2.0
    if algorithm in SVRP_FAMILY:
        if p is None or M is None:
            raise ValueError(f"{algorithm} needs p and M")
        return 2.0 + 3.0 * p * M
    if algorithm == "scaffold":
        return 4.0
    raise ValueError(f"unknown algorithm {algorithm!r}")


def initial_sync_cost(algorithm, M) -> int:
    """One-off pre-loop cost: 3M for the anchor-based family, else 0."""
    if algorithm in SVRP_FAMILY or algorithm == "catalyzed-svrp":
        return 3 * M
    if algorithm in ("sppm", "sgd", "scaffold"):
        return 0
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _resolve_run(algorithm, problem, epsilon, x0, prox_spec, p, eta_sgd):
    """Fill in theorem-default parameters for whatever the caller omitted."""
    smooth = problem.without_regularizer()
    consts = smooth.constants()
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    dist0_sq = float(np.sum((x0 - consts.x_star) ** 2))
    M = problem.num_clients
    if algorithm == "sppm":
        if prox_spec is None:
            params = optim.sppm_params(consts.mu, consts.sigma_star_sq, epsilon,
                                       max(dist0_sq, epsilon))
            prox_spec = ProxSpec("exact", eta=params.eta, b=params.b)
    elif algorithm in ("svrp", "svrp-composite", "lsvrg"):
        if p is None:
            p = 1.0 / M
        if algorithm == "lsvrg":
            if eta_sgd is None:
                eta_sgd = 1.0 / (6.0 * consts.L)
        elif prox_spec is None:
            params = optim.svrp_params(consts.mu, consts.delta, M, epsilon,
                                       max(dist0_sq, epsilon))
            method = "exact" if algorithm == "svrp" else "composite-pg"
            prox_spec = ProxSpec(method, eta=params.eta, b=params.b)
    elif algorithm in ("sgd", "scaffold"):
        if eta_sgd is None:
            eta_sgd = 1.0 / (2.0 * consts.L)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return consts, x0, prox_spec, p, eta_sgd


def simulate(algorithm, problem, budget, seed, record_cadence=1, *, x0=None,
             prox_spec=None, p=None, eta_sgd=None, epsilon=1e-6,
             charge_initial_sync=True, record_events=True,
             x_star=None, track_subopt=True, stop_sq_dist=None) -> RunTrace:
    """Run one seeded algorithm under a communication budget.

    Drives the optim step functions while charging the ledger; the produced
    trajectory is bit-identical to stepping the bare functions with the same
    seed. Parameters left as None default to the theorem-driven choices
    computed from the measured problem constants (targeting `epsilon`).
    Distances are measured to the smooth-part minimizer unless `x_star` is
    given (relevant for composite runs). Samples are recorded before the first
    iteration, every `record_cadence` iterations, and at the final iterate;
    track_subopt=False skips the per-sample function evaluation (the subopt
    column becomes NaN), which matters for long runs at cadence 1. With
    stop_sq_dist set, the run also ends at the first iteration whose squared
    distance falls below that threshold.
    """
    if algorithm == "catalyzed-svrp":
        from .catalyst import catalyzed_svrp_run
        return catalyzed_svrp_run(problem, epsilon, seed=seed, x0=x0,
                                  comm_budget=budget,
                                  charge_initial_sync=charge_initial_sync,
                                  record_events=record_events)
    if budget <= 0:
        raise ValueError("budget must be positive")
    consts, x0, prox_spec, p, eta_sgd = _resolve_run(
        algorithm, problem, epsilon, x0, prox_spec, p, eta_sgd)
    x_star = consts.x_star if x_star is None else np.asarray(x_star, dtype=float)
    f_star = consts.f_star
    rng = np.random.default_rng(seed)
    ledger = CommLedger(record_events=record_events)
    trace = RunTrace(algo=algorithm, seed=seed, ledger=ledger)
    started = time.perf_counter()
    M = problem.num_clients

    sync = initial_sync_cost(algorithm, M)
    if sync > budget:
        warnings.warn("budget is smaller than the initial synchronization; "
                      "no iterations were run")
        trace.wall_time = time.perf_counter() - started
        return trace
    if sync and charge_initial_sync:
        ledger.charge_sync(M)

    if algorithm in ("sppm", "sgd"):
        state = optim.init_sppm(problem, x0)
    elif algorithm == "scaffold":
        state = optim.init_scaffold(problem, x0)
    else:
        state = optim.init_svrp(problem, x0)

    def sample(k):
        dx = state.x - x_star
        sub = problem.value(state.x) - f_star if track_subopt else float("nan")
        trace.record(ledger.total, k, float(dx @ dx), sub)

    sample(0)
    k = 0
    warned = False
    while True:
        if algorithm == "sppm":
            new_state = optim.sppm_step(state, problem, prox_spec, rng)
            cost, refresh = 2, False
        elif algorithm == "sgd":
            new_state = optim.sgd_step(state, problem, eta_sgd, rng)
            cost, refresh = 2, False
        elif algorithm == "scaffold":
            new_state = optim.scaffold_step(state, problem, eta_sgd, rng)
            cost, refresh = 4, False
        elif algorithm == "svrp":
            new_state = optim.svrp_step(state, problem, prox_spec, p, rng)
            refresh = new_state.w is not state.w
            cost = 2 + (3 * M if refresh else 0)
        elif algorithm == "svrp-composite":
            new_state = optim.svrp_composite_step(state, problem,
                                                  problem.regularizer,
                                                  prox_spec, p, rng)
            refresh = new_state.w is not state.w
            cost = 2 + (3 * M if refresh else 0)
        else:  # lsvrg
            new_state = optim.lsvrg_step(state, problem, eta_sgd, p, rng)
            refresh = new_state.w is not state.w
            cost = 2 + (3 * M if refresh else 0)

        if ledger.total + cost > budget:
            if k == 0 and not warned:
                warnings.warn("budget is smaller than one iteration's cost; "
                              "the trace is empty")
            break
        state = new_state
        k += 1
        ledger.charge_exchange(k - 1, None)
        if algorithm == "scaffold":
            ledger.charge_exchange(k - 1, None)  # control vectors travel too
        elif refresh:
            ledger.charge(k - 1, "notify", None, cost=0)
            ledger.charge_sync(M, step=k - 1)
        if k % record_cadence == 0:
            sample(k)
        if stop_sq_dist is not None:
            dx = state.x - x_star
            if float(dx @ dx) <= stop_sq_dist:
                if k % record_cadence != 0:
                    sample(k)
                break

    if k % record_cadence != 0 and (not trace.iters or trace.iters[-1] != k):
        sample(k)
    trace.final_x = state.x
    trace.iterations = k
    trace.wall_time = time.perf_counter() - started
    return trace
