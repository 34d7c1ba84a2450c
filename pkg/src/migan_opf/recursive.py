"""Outer recursive loop: train, emit, keep the best ``m``, stop after two non-improvements."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .migan import MiGanState, init_state, train, emit_candidates
from .neural import TrainHyper
from .opf_model import Candidate, OpfProblem, SolutionPool

log = logging.getLogger(__name__)


class NoFeasibleSolutionError(RuntimeError):
    pass


@dataclass
class RecursiveConfig:
    m: int = 3000
    h: int = 1000
    max_outer: int = 12
    eta: float = 1e-3
    gradient_enabled: bool = True
    hyper: TrainHyper = field(default_factory=TrainHyper)
    delta: float | None = None  # accepted for completeness, never used
    cold_start: bool = False
    emit_through_selector: bool = True

    def __post_init__(self):
        if self.m < 1 or self.h < 1:
            raise ValueError("m and h must be >= 1")
        if self.max_outer < 3:
            raise ValueError("max_outer must be >= 3")


@dataclass
class OuterStep:
    k: int
    f_min: float
    feasible_emitted: int
    seconds: float


@dataclass
class RecursiveResult:
    best: Candidate
    iterations: int  # index of the returned iterate
    history: list  # f_min per outer iteration
    steps: list
    state: MiGanState
    actual: SolutionPool
    hit_cap: bool = False


def merge_best(actual: SolutionPool, emitted: SolutionPool, m: int) -> SolutionPool:
    """``m`` smallest-objective entries; feasible first, ties by insertion order."""
    pool = SolutionPool.concat([actual, emitted])
    if len(pool) < m:
        raise ValueError(f"cannot keep {m} of {len(pool)} candidates")
    order = np.lexsort((np.arange(len(pool)), pool.objective, ~pool.feasible))
    return pool.take(order[:m])


def _f_min(pool: SolutionPool) -> float:
    return float(pool.objective[pool.feasible].min()) if pool.feasible.any() else np.inf


def _fully_feasible_best(problem: OpfProblem, preferred: Candidate, pool: SolutionPool) -> Candidate:
    if problem.evaluate(preferred.p_g, honor_relaxation=False).feasible[0]:
        return preferred
    strict = problem.evaluate(pool.p_g, honor_relaxation=False)
    ok = np.flatnonzero(strict.feasible)
    if ok.size == 0:
        raise NoFeasibleSolutionError(
            f"none of {len(pool)} kept candidates satisfies every constraint; "
            f"{int(pool.feasible.sum())} satisfy the relaxed set"
        )
    i = ok[np.argmin(strict.objective[ok])]
    log.info("relaxation-feasible best violates a relaxed row; returning next fully feasible candidate")
    return strict[int(i)]


def run_recursive(problem: OpfProblem, initial_actual: SolutionPool, cfg: RecursiveConfig | None = None,
                  seed: int = 0, state: MiGanState | None = None) -> RecursiveResult:
    cfg = cfg or RecursiveConfig()
    if len(initial_actual) < cfg.m:
        log.warning("actual set has %d candidates, fewer than m=%d", len(initial_actual), cfg.m)
    m = min(cfg.m, len(initial_actual))
    actual = merge_best(initial_actual, SolutionPool.empty(problem.n_g, problem.n_b), m)
    if state is None:
        state = init_state(problem, actual, cfg.hyper, seed, cfg.eta, cfg.gradient_enabled)
    history, best, steps = [], [], []
    k = 0
    while True:
        k += 1
        t0 = time.perf_counter()
        if cfg.cold_start and k > 1:
            state = init_state(problem, actual, cfg.hyper, seed + k, cfg.eta, cfg.gradient_enabled)
        state.historical_pool = actual
        train(state, problem)
        emitted = emit_candidates(state, problem, cfg.h, True, cfg.emit_through_selector)
        good = emitted.take(np.flatnonzero(emitted.feasible))
        actual = merge_best(actual, good, m)
        history.append(_f_min(actual))
        best.append(actual[0])
        steps.append(OuterStep(k, history[-1], len(good), time.perf_counter() - t0))
        log.debug("outer %d: f_min=%.6g, %d feasible emitted", k, history[-1], len(good))
        if k >= 3 and history[k - 3] <= history[k - 2] and history[k - 3] <= history[k - 1]:
            chosen, iters, cap = best[k - 3], k - 2, False
            break
        if k >= cfg.max_outer:
            log.warning("recursive loop hit max_outer=%d without meeting the stopping rule", cfg.max_outer)
            chosen, iters, cap = best[-1], k, True
            break
    if not np.isfinite(history[iters - 1]):
        raise NoFeasibleSolutionError("actual set never contained a feasible candidate")
    final = _fully_feasible_best(problem, chosen, actual)
    return RecursiveResult(final, iters, history, steps, state, actual, cap)


def write_outer_log(result: RecursiveResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "f_min", "feasible_emitted"])
        for s in result.steps:
            w.writerow([s.k, f"{s.f_min:.10g}", s.feasible_emitted])
