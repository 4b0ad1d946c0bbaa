"""Experiment runner and command-line interface.

Commands:

* ``fedpoint run <config.json>``: execute all (algorithm, seed) runs, writing
  one CSV per run, a summary CSV, a constants echo, and an SVG plot.
* ``fedpoint preset <name> [--emit-config]``: show or dump a bundled config.
* ``fedpoint constants <config.json>``: print the measured problem constants.
* ``fedpoint plot <report-dir>``: rebuild the SVG from per-run CSVs.

Configs are plain JSON; the schema is documented in the README. The output
directory can be overridden with the FEDPOINT_OUTPUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, fedsim
from .fedsim import RunTrace, TRACE_COLUMNS
from .data import InfeasibleSpecError, SyntheticSpec
from .problem import Regularizer

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "ConfigError",
    "PRESETS",
    "preset",
    "run_experiment",
    "emit_plot",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_INFEASIBLE = 4
EXIT_UNKNOWN_PRESET = 5

OUTPUT_DIR_ENV = "FEDPOINT_OUTPUT_DIR"

KNOWN_ALGORITHMS = fedsim.ALGORITHMS

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#17becf")


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


@dataclass
class ExperimentConfig:
    problem: dict
    algorithms: list
    budget: int
    seeds: list
    record_cadence: int = 1
    epsilon: float = 1e-8
    output_dir: str = "fedpoint-out"
    per_seed_lines: bool = False
    workers: int = 1

    def validate(self):
        if not self.algorithms:
            raise ConfigError("need at least one algorithm")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.record_cadence < 1:
            raise ConfigError("record_cadence must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        ptype = self.problem.get("type")
        if ptype not in ("synthetic", "libsvm"):
            raise ConfigError(f"problem type must be synthetic or libsvm, got {ptype!r}")
        names = set()
        for entry in self.algorithms:
            name = entry.get("name")
            if name not in KNOWN_ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}; known: {KNOWN_ALGORITHMS}")
            if name in names:
                raise ConfigError(f"algorithm {name!r} listed twice")
            names.add(name)
            for key in ("eta", "b", "p", "stepsize"):
                if key in entry and entry[key] is not None:
                    val = float(entry[key])
                    if key != "b" and val <= 0:
                        raise ConfigError(f"{name}: {key} must be positive")
                    if key == "b" and val < 0:
                        raise ConfigError(f"{name}: b must be nonnegative")
            if entry.get("prox") not in (None, "exact", "gd", "agd", "composite-pg"):
                raise ConfigError(f"{name}: unknown prox method {entry.get('prox')!r}")
        return self

    @classmethod
    def from_dict(cls, payload):
        try:
            cfg = cls(
                problem=dict(payload["problem"]),
                algorithms=[dict(a) for a in payload["algorithms"]],
                budget=int(payload["budget"]),
                seeds=[int(s) for s in payload["seeds"]],
                record_cadence=int(payload.get("record_cadence", 1)),
                epsilon=float(payload.get("epsilon", 1e-8)),
                output_dir=str(payload.get("output_dir", "fedpoint-out")),
                per_seed_lines=bool(payload.get("per_seed_lines", False)),
                workers=int(payload.get("workers", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cfg.validate()

    @classmethod
    def from_json(cls, text):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)

    def to_dict(self):
        return {
            "problem": self.problem,
            "algorithms": self.algorithms,
            "budget": self.budget,
            "seeds": self.seeds,
            "record_cadence": self.record_cadence,
            "epsilon": self.epsilon,
            "output_dir": self.output_dir,
            "per_seed_lines": self.per_seed_lines,
            "workers": self.workers,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    constants: dict
    traces: dict = field(default_factory=dict)  # (algo, seed) -> RunTrace
    summary: list = field(default_factory=list)

    def traces_for(self, algo):
        return [self.traces[(a, s)] for (a, s) in sorted(self.traces)
                if a == algo]


PRESETS = {}


def _register_preset(name, builder):
    PRESETS[name] = builder


def preset(name) -> ExperimentConfig:
    """Return a bundled configuration by name."""
    if name not in PRESETS:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return ExperimentConfig.from_dict(PRESETS[name]())


_register_preset("synthetic-small", lambda: {
    # Desk-scale variant of the synthetic comparison: 200 clients, 2000
    # communication steps, 5 seeds.
    "problem": {"type": "synthetic", "M": 200, "d": 50, "delta": 10.0,
                "L": 3000.0, "lam": 1.0, "noise_std": 1.0, "seed": 11},
    "algorithms": [{"name": "svrp"}, {"name": "lsvrg"}, {"name": "sgd"},
                   {"name": "scaffold"}],
    "budget": 2000,
    "seeds": [0, 1, 2, 3, 4],
    "record_cadence": 5,
    "epsilon": 1e-8,
    "output_dir": "fedpoint-out/synthetic-small",
})

_register_preset("synthetic-paper", lambda: {
    # Full-size synthetic setting: 1000 clients, 10000 communication steps.
    "problem": {"type": "synthetic", "M": 1000, "d": 50, "delta": 10.0,
                "L": 3330.0, "lam": 1.0, "noise_std": 1.0, "seed": 11},
    "algorithms": [{"name": "svrp"}, {"name": "lsvrg"}, {"name": "sgd"},
                   {"name": "scaffold"}],
    "budget": 10_000,
    "seeds": [0, 1, 2, 3, 4],
    "record_cadence": 10,
    "epsilon": 1e-8,
    "output_dir": "fedpoint-out/synthetic-paper",
})

_register_preset("a9a-paper", lambda: {
    # a9a, 20 clients x 2000 samples, ridge weight 0.1, 10000 steps.
    "problem": {"type": "libsvm", "path": "data/a9a", "M": 20,
                "n_per_client": 2000, "lam": 0.1, "seed": 1},
    "algorithms": [{"name": "svrp"}, {"name": "lsvrg"}, {"name": "sgd"},
                   {"name": "scaffold"}],
    "budget": 10_000,
    "seeds": [0, 1, 2, 3, 4],
    "record_cadence": 10,
    "epsilon": 1e-8,
    "output_dir": "fedpoint-out/a9a-paper",
})

_register_preset("catalyst-demo", lambda: {
    # High-dissimilarity regime where the accelerated outer loop pays off.
    "problem": {"type": "synthetic", "M": 16, "d": 4, "delta": 20.0,
                "L": 60.0, "lam": 1.0, "noise_std": 0.5, "seed": 3},
    "algorithms": [{"name": "svrp"}, {"name": "catalyzed-svrp"}],
    "budget": 150_000,
    "seeds": [0, 1, 2],
    "record_cadence": 200,
    "epsilon": 1e-8,
    "output_dir": "fedpoint-out/catalyst-demo",
})


def build_problem(problem_cfg):
    """Instantiate the problem described by the config's problem block."""
    ptype = problem_cfg.get("type")
    if ptype == "synthetic":
        spec = SyntheticSpec(
            M=int(problem_cfg["M"]), d=int(problem_cfg["d"]),
            delta_target=float(problem_cfg["delta"]),
            L_target=float(problem_cfg["L"]),
            lam=float(problem_cfg.get("lam", 1.0)),
            noise_std=float(problem_cfg.get("noise_std", 0.0)),
            seed=int(problem_cfg.get("seed", 0)),
            mode=problem_cfg.get("mode", "hessian"),
            n=problem_cfg.get("n"),
        )
        problem = data.generate_synthetic(spec)
    elif ptype == "libsvm":
        path = problem_cfg["path"]
        if not os.path.exists(path):
            raise FileNotFoundError(f"dataset file not found: {path}")
        dataset = data.parse_libsvm(path)
        problem = data.partition(
            dataset, M=int(problem_cfg["M"]),
            n_per_client=int(problem_cfg["n_per_client"]),
            lam=float(problem_cfg.get("lam", 0.1)),
            seed=int(problem_cfg.get("seed", 0)),
            remap01=bool(problem_cfg.get("remap01", False)),
        )
    else:
        raise ConfigError(f"unknown problem type {ptype!r}")
    reg_cfg = problem_cfg.get("regularizer")
    if reg_cfg:
        kind = reg_cfg.get("kind", "none")
        if kind == "l1":
            reg = Regularizer.l1(float(reg_cfg["weight"]))
        elif kind == "ball":
            reg = Regularizer.ball(float(reg_cfg["radius"]))
        elif kind == "none":
            reg = Regularizer.none()
        else:
            raise ConfigError(f"unknown regularizer kind {kind!r}")
        problem = data.FederatedProblem(problem.clients, reg, problem.meta)
    return problem


def _run_single(problem, entry, seed, budget, cadence, epsilon):
    from .prox import ProxSpec

    name = entry["name"]
    prox_spec = None
    if any(entry.get(k) is not None for k in ("eta", "b", "prox")) and \
            name in ("sppm", "svrp", "svrp-composite"):
        consts = problem.without_regularizer().constants()
        if name == "sppm":
            base = fedsim.optim.sppm_params(consts.mu, consts.sigma_star_sq,
                                            epsilon, max(1.0, consts.x_star @ consts.x_star))
        else:
            base = fedsim.optim.svrp_params(consts.mu, consts.delta,
                                            problem.num_clients, epsilon)
        method = entry.get("prox") or ("composite-pg" if name == "svrp-composite"
                                       else "exact")
        prox_spec = ProxSpec(method,
                             eta=float(entry.get("eta") or base.eta),
                             b=float(entry["b"]) if entry.get("b") is not None else base.b)
    eta_sgd = float(entry["stepsize"]) if entry.get("stepsize") is not None else None
    p = float(entry["p"]) if entry.get("p") is not None else None
    return fedsim.simulate(name, problem, budget, seed,
                           record_cadence=cadence, prox_spec=prox_spec, p=p,
                           eta_sgd=eta_sgd, epsilon=epsilon,
                           record_events=False)


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Execute every configured (algorithm, seed) run and write artifacts.

    Produces runs/<algo>_<seed>.csv, summary.csv, constants.json, config.json,
    and plot.svg under the output directory. Execution order is deterministic;
    with workers > 1 the runs fan out over processes but the report is
    assembled in sorted order regardless of completion order.
    """
    config.validate()
    out_dir = Path(out_dir or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir)
    problem = build_problem(config.problem)
    consts = problem.without_regularizer().constants()
    report = ExperimentReport(
        config=config,
        constants={"mu": consts.mu, "L": consts.L, "delta": consts.delta,
                   "sigma_star_sq": consts.sigma_star_sq,
                   "f_star": consts.f_star,
                   "M": problem.num_clients, "d": problem.dim},
    )

    jobs = [(entry, seed) for entry in config.algorithms for seed in config.seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {
                (entry["name"], seed): pool.submit(
                    _run_single, problem, entry, seed, config.budget,
                    config.record_cadence, config.epsilon)
                for entry, seed in jobs
            }
            for key in sorted(futures):
                report.traces[key] = futures[key].result()
    else:
        for entry, seed in jobs:
            report.traces[(entry["name"], seed)] = _run_single(
                problem, entry, seed, config.budget, config.record_cadence,
                config.epsilon)

    for entry in config.algorithms:
        algo = entry["name"]
        finals = [t.sq_dist[-1] for t in report.traces_for(algo)]
        report.summary.append({
            "algo": algo,
            "final_sq_dist_median": float(np.median(finals)),
            "final_sq_dist_q25": float(np.percentile(finals, 25)),
            "final_sq_dist_q75": float(np.percentile(finals, 75)),
            "seeds": len(finals),
        })

    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    for (algo, seed), trace in sorted(report.traces.items()):
        trace.to_csv(runs_dir / f"{algo}_{seed}.csv")
    with open(out_dir / "summary.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("algo,final_sq_dist_median,final_sq_dist_q25,final_sq_dist_q75,seeds\n")
        for row in report.summary:
            fh.write(f"{row['algo']},{row['final_sq_dist_median']:.17g},"
                     f"{row['final_sq_dist_q25']:.17g},"
                     f"{row['final_sq_dist_q75']:.17g},{row['seeds']}\n")
    with open(out_dir / "constants.json", "w", encoding="ascii") as fh:
        json.dump(report.constants, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "config.json", "w", encoding="ascii") as fh:
        fh.write(config.to_json())
    with open(out_dir / "plot.svg", "w", encoding="ascii", newline="\n") as fh:
        fh.write(emit_plot(report))
    return report


# -- SVG plotting -------------------------------------------------------------

SVG_W, SVG_H = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 160, 24, 56
FLOOR = 1e-300


def _median_curve(traces):
    """Index-wise medians after truncating all seeds to the shortest trace."""
    n = min(len(t.comm) for t in traces)
    comm = np.median([t.comm[:n] for t in traces], axis=0)
    sq = np.median([t.sq_dist[:n] for t in traces], axis=0)
    return comm, sq


def _nice_ticks(high, count=5):
    if high <= 0:
        return [0]
    raw = high / count
    mag = 10 ** math.floor(math.log10(raw))
    step = mag * min(s for s in (1, 2, 5, 10) if raw / mag <= s)
    ticks = []
    v = 0.0
    while v <= high * (1 + 1e-9):
        ticks.append(v)
        v += step
    return ticks


def emit_plot(report: ExperimentReport) -> str:
    """Deterministic SVG: squared distance (log scale) vs communication steps.

    One polyline per algorithm (index-wise median over seeds, or one line per
    seed when per_seed_lines is set). Non-positive values are floored at
    1e-300 before taking logs.
    """
    if not report.traces:
        raise ValueError("report has no traces to plot")
    curves = []
    algos = sorted({a for (a, _) in report.traces})
    for i, algo in enumerate(algos):
        traces = report.traces_for(algo)
        color = PALETTE[i % len(PALETTE)]
        if report.config.per_seed_lines:
            for t in traces:
                curves.append((f"{algo} seed {t.seed}", color,
                               np.asarray(t.comm, dtype=float),
                               np.asarray(t.sq_dist, dtype=float)))
        else:
            comm, sq = _median_curve(traces)
            curves.append((algo, color, comm, sq))

    x_max = max(float(c[2].max()) for c in curves if len(c[2])) or 1.0
    ys = np.concatenate([np.maximum(c[3], FLOOR) for c in curves])
    y_lo = math.floor(math.log10(ys.min()))
    y_hi = math.ceil(math.log10(ys.max()))
    if y_hi == y_lo:
        y_hi += 1

    plot_w = SVG_W - MARGIN_L - MARGIN_R
    plot_h = SVG_H - MARGIN_T - MARGIN_B

    def sx(v):
        return MARGIN_L + plot_w * (v / x_max if x_max else 0.0)

    def sy(v):
        lv = math.log10(max(v, FLOOR))
        return MARGIN_T + plot_h * (y_hi - lv) / (y_hi - y_lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">',
        f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black" stroke-width="1"/>',
    ]
    for tick in _nice_ticks(x_max):
        x = sx(tick)
        parts.append(f'<line x1="{x:.2f}" y1="{MARGIN_T + plot_h}" x2="{x:.2f}" '
                     f'y2="{MARGIN_T + plot_h + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{MARGIN_T + plot_h + 20}" '
                     f'font-size="11" text-anchor="middle">{tick:.6g}</text>')
    decade_step = max(1, (y_hi - y_lo) // 8)
    for e in range(y_lo, y_hi + 1, decade_step):
        y = sy(10.0 ** e)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{y:.2f}" x2="{MARGIN_L}" '
                     f'y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{y + 4:.2f}" font-size="11" '
                     f'text-anchor="end">1e{e}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w / 2:.2f}" y="{SVG_H - 12}" '
                 f'font-size="12" text-anchor="middle">communication steps</text>')
    parts.append(f'<text x="18" y="{MARGIN_T + plot_h / 2:.2f}" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 18 '
                 f'{MARGIN_T + plot_h / 2:.2f})">squared distance to optimum</text>')

    for label, color, comm, sq in curves:
        pts = " ".join(f"{sx(c):.2f},{sy(s):.2f}" for c, s in zip(comm, sq))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
    for i, (label, color, _, _) in enumerate(curves):
        ly = MARGIN_T + 16 + 18 * i
        lx = SVG_W - MARGIN_R + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _load_report_dir(report_dir):
    """Rebuild a minimal report (traces only) from per-run CSVs."""
    runs_dir = Path(report_dir) / "runs"
    if not runs_dir.is_dir():
        raise FileNotFoundError(f"no runs/ directory under {report_dir}")
    cfg_path = Path(report_dir) / "config.json"
    if cfg_path.exists():
        config = ExperimentConfig.from_json(cfg_path.read_text())
    else:
        config = ExperimentConfig(problem={"type": "synthetic"}, algorithms=[{}],
                                  budget=1, seeds=[0])
    report = ExperimentReport(config=config, constants={})
    for csv_path in sorted(runs_dir.glob("*.csv")):
        with open(csv_path, "r", encoding="ascii") as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != TRACE_COLUMNS:
                raise ValueError(f"{csv_path}: unexpected columns {header}")
            trace = None
            for line in fh:
                c, k, sq, sub, seed, algo = line.strip().split(",")
                if trace is None:
                    trace = RunTrace(algo=algo, seed=int(seed))
                trace.record(int(c), int(k), float(sq), float(sub))
            if trace is not None:
                report.traces[(trace.algo, trace.seed)] = trace
    if not report.traces:
        raise ValueError(f"no traces found under {runs_dir}")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedpoint",
        description="Federated proximal-point optimization laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--output-dir", default=None)

    p_preset = sub.add_parser("preset", help="show a bundled preset")
    p_preset.add_argument("name")
    p_preset.add_argument("--emit-config", action="store_true",
                          help="print the preset JSON instead of running it")

    p_const = sub.add_parser("constants", help="print measured constants")
    p_const.add_argument("config")

    p_plot = sub.add_parser("plot", help="rebuild plot.svg from a report dir")
    p_plot.add_argument("report_dir")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg_path = Path(args.config)
            if not cfg_path.exists():
                print(f"config not found: {cfg_path}", file=sys.stderr)
                return EXIT_MISSING_FILE
            config = ExperimentConfig.from_json(cfg_path.read_text())
            report = run_experiment(config, out_dir=args.output_dir)
            out = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir
            print(f"wrote {len(report.traces)} runs to {out}")
            for row in report.summary:
                print(f"  {row['algo']}: median final sq_dist = "
                      f"{row['final_sq_dist_median']:.3e}")
            return EXIT_OK
        if args.command == "preset":
            try:
                config = preset(args.name)
            except KeyError as exc:
                print(exc.args[0], file=sys.stderr)
                return EXIT_UNKNOWN_PRESET
            if args.emit_config:
                print(config.to_json(), end="")
                return EXIT_OK
            report = run_experiment(config)
            print(f"preset {args.name} finished; output in {config.output_dir}")
            for row in report.summary:
                print(f"  {row['algo']}: median final sq_dist = "
                      f"{row['final_sq_dist_median']:.3e}")
            return EXIT_OK
        if args.command == "constants":
            cfg_path = Path(args.config)
            if not cfg_path.exists():
                print(f"config not found: {cfg_path}", file=sys.stderr)
                return EXIT_MISSING_FILE
            config = ExperimentConfig.from_json(cfg_path.read_text())
            problem = build_problem(config.problem)
            consts = problem.without_regularizer().constants()
            print(f"M = {problem.num_clients}, d = {problem.dim}")
            print(f"mu       = {consts.mu:.6g}")
            print(f"L        = {consts.L:.6g}")
            print(f"delta    = {consts.delta:.6g}")
            print(f"sigma*^2 = {consts.sigma_star_sq:.6g}")
            return EXIT_OK
        if args.command == "plot":
            report = _load_report_dir(args.report_dir)
            out = Path(args.report_dir) / "plot.svg"
            with open(out, "w", encoding="ascii", newline="\n") as fh:
                fh.write(emit_plot(report))
            print(f"wrote {out}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING_FILE
    except InfeasibleSpecError as exc:
        print(f"infeasible synthetic spec: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
