"""Command-line front end.

    migan-opf solve case9 --rho 1.2
    migan-opf sample case39 --samples 500 --out samples.csv
    migan-opf train case9 --trials 5 --seed 1 --out results.csv
    migan-opf sweep-rho case9 --direction up --seed 1 --out sweep.csv
    migan-opf bench case9 case30 --out timing.csv

A ``--config`` file holds ``key = value`` lines using the long option names
(dashes or underscores); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .case_io import CaseError, resolve_case, write_results, _fmt
from .lp_reference import OPTIMAL, solve_lp
from .migan import TrainReport, TrialResult, adapt_to_load, mae_pct
from .neural import TrainHyper
from .opf_model import ModelError, OpfProblem, build_problem
from .recursive import NoFeasibleSolutionError, RecursiveConfig, run_recursive
from .sampler import DEFAULT_RELAX, SamplerConfig, SamplingExhaustedError, choose_relaxed_rows, sample_feasible

log = logging.getLogger("migan_opf")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_FAILED = 0, 1, 2, 3

RHO_UP = (1.05, 1.1, 1.15, 1.2, 1.25, 1.3, 1.4, 1.5)
RHO_DOWN = (0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.6, 0.5)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    case: str = "case9"
    rho: float = 1.0
    seed: int | None = None
    trials: int = 5
    relax: int | None = None  # None: per-case default
    samples: int = 3000
    eta: float = 1e-3
    iterations: int = 2000
    batch_size: int = 50
    learning_rate: float = 5e-5
    gradient_layer: bool = True
    m: int = 3000
    h: int = 1000
    max_outer: int = 12
    fresh_samples: int = 1000
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        if self.trials < 1:
            raise UsageError("trials must be >= 1")
        if self.format not in ("csv", "json"):
            raise UsageError(f"unknown format {self.format!r}")

    @property
    def case_name(self) -> str:
        return Path(self.case).stem

    def relax_count(self) -> int:
        return DEFAULT_RELAX.get(self.case_name, 0) if self.relax is None else self.relax

    def hyper(self) -> TrainHyper:
        return TrainHyper(learning_rate=self.learning_rate, batch_size=self.batch_size, iterations=self.iterations)

    def recursive(self) -> RecursiveConfig:
        return RecursiveConfig(m=self.m, h=self.h, max_outer=self.max_outer, eta=self.eta,
                               gradient_enabled=self.gradient_layer, hyper=self.hyper())


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(value, types[key], f"{path}:{lineno}")
    return out


def _coerce(value: str, typ: str, where: str):
    try:
        if "bool" in typ:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "int" in typ:
            return int(value)
        if "float" in typ:
            return float(value)
    except ValueError:
        raise UsageError(f"{where}: bad value {value!r}") from None
    return value


# -- experiment plumbing -------------------------------------------------------


def prepare_problem(cfg: RunConfig, seed: int) -> OpfProblem:
    problem = build_problem(resolve_case(cfg.case), rho=cfg.rho)
    return problem.with_relaxation(choose_relaxed_rows(problem, cfg.relax_count(), seed))


def run_trial(cfg: RunConfig, trial: int, seed: int) -> tuple[TrialResult, object]:
    """One seeded sample-train-recurse run against the oracle."""
    t0 = time.perf_counter()
    problem = prepare_problem(cfg, seed)
    oracle = solve_lp(problem)
    if oracle.status != OPTIMAL:
        raise NoFeasibleSolutionError(f"{cfg.case_name} at rho={cfg.rho}: oracle reports {oracle.status}")
    actual = sample_feasible(problem, SamplerConfig(n_samples=cfg.samples, relax_count=0, seed=seed))
    result = run_recursive(problem, actual, cfg.recursive(), seed=seed)
    return _trial_row(cfg.case_name, trial, problem, result, oracle.objective_opt, t0), result


def _trial_row(case: str, trial: int, problem: OpfProblem, result, oracle: float, t0: float) -> TrialResult:
    best = result.best
    strict = bool(problem.evaluate(best.p_g, honor_relaxation=False).feasible[0])
    return TrialResult(case, trial, float(problem.rho), best.objective, oracle, mae_pct(best.objective, oracle),
                       result.iterations, time.perf_counter() - t0, strict, best.p_g.tolist())


def run_train(cfg: RunConfig) -> TrainReport:
    report = TrainReport()
    for t in range(cfg.trials):
        row, _ = run_trial(cfg, t, cfg.seed + t)
        log.info("trial %d: objective %.6g, MAE %.4f%%, %d recursive iterations", t, row.objective, row.mae_pct,
                 row.recursive_iters)
        report.trials.append(row)
    return report


def run_sweep(cfg: RunConfig, rhos) -> TrainReport:
    """Train at ``cfg.rho``, then adapt through ``rhos`` in order, carrying the nets along."""
    seed = cfg.seed
    base_row, result = run_trial(cfg, 0, seed)
    base_problem = prepare_problem(cfg, seed)
    report = TrainReport([base_row])
    state = result.state
    for k, rho in enumerate(rhos, start=1):
        t0 = time.perf_counter()
        problem = base_problem.with_rho(rho)
        oracle = solve_lp(problem)
        if oracle.status != OPTIMAL:
            raise NoFeasibleSolutionError(f"{cfg.case_name} at rho={rho}: oracle reports {oracle.status}")
        state = adapt_to_load(state, problem, cfg.fresh_samples, seed + 1000 * k)
        result = run_recursive(problem, state.historical_pool, cfg.recursive(), seed=seed, state=state)
        state = result.state
        row = _trial_row(cfg.case_name, k, problem, result, oracle.objective_opt, t0)
        log.info("rho %.3g: objective %.6g, MAE %.4f%%", rho, row.objective, row.mae_pct)
        report.trials.append(row)
    return report


BENCH_COLUMNS = ("case", "method", "seconds", "objective")


def run_bench(cfg: RunConfig, cases) -> list[tuple]:
    rows = []
    for name in cases:
        c = replace(cfg, case=name, trials=1)
        problem = prepare_problem(c, c.seed)
        sol = solve_lp(problem)
        rows.append((c.case_name, "simplex", sol.seconds, sol.objective_opt))
        _, result = run_trial(c, 0, c.seed)
        per_iter = float(np.mean([s.seconds for s in result.steps]))
        rows.append((c.case_name, "migan", per_iter, result.best.objective))
    return rows


# -- argument handling ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, training: bool = True) -> None:
    p.add_argument("--config", help="key = value file with defaults for any long option")
    p.add_argument("--rho", type=float, help="net-load scaling coefficient")
    p.add_argument("--seed", type=int, help="master seed (default: fresh entropy, logged)")
    p.add_argument("--relax", type=int, help="number of inequality rows relaxed while sampling/training")
    p.add_argument("--samples", type=int, help="initial feasible samples (actual set)")
    p.add_argument("--out", help="output file")
    p.add_argument("--format", choices=("csv", "json"))
    if training:
        p.add_argument("--trials", type=int)
        p.add_argument("--eta", type=float, help="gradient-guided layer step size")
        p.add_argument("--iterations", type=int, help="training epochs per recursive iteration")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--m", type=int, help="actual-set size kept between recursive iterations")
        p.add_argument("--h", type=int, help="candidates emitted per recursive iteration")
        p.add_argument("--max-outer", type=int)
        p.add_argument("--no-gradient-layer", dest="gradient_layer", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="migan-opf", description="MI-GAN solver toolkit for DC optimal power flow")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="exact LP optimum")
    p.add_argument("case", nargs="?", help="built-in case name or path to a MATPOWER .m file")
    p.add_argument("--case", dest="case_opt")
    _add_common(p, training=False)

    p = sub.add_parser("sample", help="draw feasible dispatches")
    p.add_argument("case", nargs="?")
    p.add_argument("--case", dest="case_opt")
    _add_common(p, training=False)

    p = sub.add_parser("train", help="seeded MI-GAN trials against the oracle")
    p.add_argument("case", nargs="?")
    p.add_argument("--case", dest="case_opt")
    _add_common(p)

    p = sub.add_parser("sweep-rho", help="adapt a trained model through a list of load levels")
    p.add_argument("case", nargs="?")
    p.add_argument("--case", dest="case_opt")
    p.add_argument("--direction", choices=("up", "down"), default="up")
    p.add_argument("--rhos", help="comma-separated load levels (overrides --direction)")
    p.add_argument("--fresh-samples", type=int)
    _add_common(p)

    p = sub.add_parser("bench", help="timing table: simplex solve vs one MI-GAN recursive iteration")
    p.add_argument("cases", nargs="*")
    _add_common(p)
    return parser


def config_from_args(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    case = getattr(args, "case_opt", None) or getattr(args, "case", None)
    if case:
        values["case"] = case
    elif "case" not in values and args.command != "bench":
        raise UsageError("a case is required")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if f.name != "case" and v is not None:
            values[f.name] = v
    if values.get("seed") is None and args.command == "solve":
        values["seed"] = 0  # deterministic, no randomness involved
    elif values.get("seed") is None:
        values["seed"] = int(np.random.SeedSequence().entropy % 2**32)
        log.warning("no --seed given; using %d", values["seed"])
    return RunConfig(**values)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([_fmt(v) for v in r] for r in rows)


def cmd_solve(cfg: RunConfig) -> int:
    problem = build_problem(resolve_case(cfg.case), rho=cfg.rho)
    sol = solve_lp(problem)
    print(f"case {cfg.case_name}  rho {cfg.rho:g}  status {sol.status}")
    if sol.status != OPTIMAL:
        print(f"{sol.status}: no dispatch meets the scaled load within limits", file=sys.stderr)
        return EXIT_FAILED
    case = resolve_case(cfg.case)
    base = case.base_mva
    print(f"objective {sol.objective_opt:.6f}  ({sol.iterations} pivots, {sol.seconds * 1e3:.1f} ms)")
    print(f"{'gen':>4} {'bus':>5} {'p_mw':>12}")
    for k, (g, p) in enumerate(zip(case.generators, sol.x_opt)):
        print(f"{k:>4} {g.bus_id:>5} {p * base:>12.4f}")
    if cfg.out:
        rows = [(k, g.bus_id, float(p * base)) for k, (g, p) in enumerate(zip(case.generators, sol.x_opt))]
        if cfg.format == "json":
            doc = {"case": cfg.case_name, "rho": cfg.rho, "status": sol.status, "objective": sol.objective_opt,
                   "p_mw": [r[2] for r in rows]}
            Path(cfg.out).write_text(json.dumps(doc, indent=2) + "\n")
        else:
            _write_rows(cfg.out, ("gen", "bus", "p_mw"), rows)
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    problem = prepare_problem(cfg, cfg.seed)
    pool = sample_feasible(problem, SamplerConfig(n_samples=cfg.samples, seed=cfg.seed))
    print(f"{len(pool)} feasible samples, objective min {pool.objective.min():.6g} "
          f"mean {pool.objective.mean():.6g}")
    if cfg.out:
        header = [f"p{k}" for k in range(problem.n_g)] + ["objective"]
        rows = [list(map(float, p)) + [float(f)] for p, f in zip(pool.p_g, pool.objective)]
        if cfg.format == "json":
            Path(cfg.out).write_text(json.dumps({"columns": header, "rows": rows}) + "\n")
        else:
            _write_rows(cfg.out, header, rows)
    return EXIT_OK


def _report_out(report: TrainReport, cfg: RunConfig) -> int:
    for t in report.trials:
        print(f"{t.case} trial {t.trial} rho {t.rho:g}: objective {t.objective:.6g} oracle {t.oracle_objective:.6g} "
              f"MAE {t.mae_pct:.4f}% iters {t.recursive_iters} feasible {t.feasible} ({t.seconds:.1f}s)")
    mean, std = report.summary_mean(), report.summary_std()
    print(f"mean MAE {mean['mae_pct']:.4f}% (std {std['mae_pct']:.4f}), "
          f"mean recursive iterations {mean['recursive_iters']:.2f} (std {std['recursive_iters']:.2f})")
    if cfg.out:
        write_results(report, cfg.out, cfg.format)
    return EXIT_OK if report.all_feasible else EXIT_FAILED


def cmd_train(cfg: RunConfig) -> int:
    return _report_out(run_train(cfg), cfg)


def cmd_sweep(cfg: RunConfig, args) -> int:
    if args.rhos:
        try:
            rhos = [float(r) for r in args.rhos.split(",") if r.strip()]
        except ValueError:
            raise UsageError(f"bad --rhos list {args.rhos!r}") from None
    else:
        rhos = RHO_UP if args.direction == "up" else RHO_DOWN
    return _report_out(run_sweep(cfg, rhos), cfg)


def cmd_bench(cfg: RunConfig, cases) -> int:
    rows = run_bench(cfg, cases)
    for r in rows:
        print(f"{r[0]:>8} {r[1]:>8} {r[2]:>10.4f}s  objective {r[3]:.6g}")
    if cfg.out:
        _write_rows(cfg.out, BENCH_COLUMNS, rows)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep-rho":
            if args.fresh_samples is not None:
                cfg = replace(cfg, fresh_samples=args.fresh_samples)
            return cmd_sweep(cfg, args)
        return cmd_bench(cfg, args.cases)
    except UsageError as exc:
        print(f"migan-opf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseError, ModelError, FileNotFoundError) as exc:
        print(f"migan-opf: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NoFeasibleSolutionError, SamplingExhaustedError) as exc:
        print(f"migan-opf: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"migan-opf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
