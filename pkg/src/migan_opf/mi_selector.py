"""Model-informed selector: filter, compare, gradient-guide, filter again.

Every layer works pairwise on equally long pools: slot ``i`` of one pool is
only ever compared with slot ``i`` of the other. Feasibility verdicts come
from the pools themselves, so the caller decides whether relaxed rows count.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from .opf_model import OpfProblem, SolutionPool

SLOPE_GUARD = 1e-9


class FeasLabel(IntEnum):
    GEN_FEAS_SAVED_INFEAS = 1
    BOTH_FEAS = 2
    BOTH_INFEAS = 3
    GEN_INFEAS_SAVED_FEAS = 4


def _same_length(*pools: SolutionPool) -> None:
    n = len(pools[0])
    if any(len(p) != n for p in pools):
        raise ValueError(f"pool length mismatch: {[len(p) for p in pools]}")


def pair_labels(gen: SolutionPool, saved: SolutionPool) -> np.ndarray:
    g, s = gen.feasible, saved.feasible
    labels = np.full(len(gen), FeasLabel.BOTH_INFEAS, dtype=np.int8)
    labels[g & ~s] = FeasLabel.GEN_FEAS_SAVED_INFEAS
    labels[g & s] = FeasLabel.BOTH_FEAS
    labels[~g & s] = FeasLabel.GEN_INFEAS_SAVED_FEAS
    return labels


def feasibility_filter(gen: SolutionPool, saved: SolutionPool) -> tuple[SolutionPool, np.ndarray]:
    """Keep the generated candidate unless it is infeasible and the saved one is not."""
    _same_length(gen, saved)
    labels = pair_labels(gen, saved)
    keep_gen = labels != FeasLabel.GEN_INFEAS_SAVED_FEAS
    return SolutionPool.choose(keep_gen, gen, saved), labels


def comparison_layer(filtered: SolutionPool, saved: SolutionPool, labels=None) -> SolutionPool:
    """Pass the lower-objective candidate of each pair unless that would trade feasible for infeasible.

    ``labels`` is accepted for symmetry with the filter output; the decision
    uses the feasibility verdicts stored on the two pools.
    """
    _same_length(filtered, saved)
    not_better = filtered.objective >= saved.objective
    take_saved = np.where(not_better, saved.feasible, ~filtered.feasible & saved.feasible)
    return SolutionPool.choose(~take_saved, filtered, saved)


def secant_update(p: np.ndarray, f: np.ndarray, p_hist: np.ndarray, f_hist: np.ndarray, eta: float) -> np.ndarray:
    """Per-coordinate secant step between each candidate and its historical partner."""
    df = f - f_hist
    dx = p - p_hist
    safe = np.abs(dx) >= SLOPE_GUARD
    slope = np.divide(df[:, None], dx, out=np.zeros_like(dx), where=safe)
    sign = np.where(df <= 0, 1.0, -1.0)[:, None]
    return p + sign * eta * slope


def gradient_guided_layer(pool: SolutionPool, historical: SolutionPool, eta: float, problem: OpfProblem,
                          rebalance: bool = False, honor_relaxation: bool = True) -> SolutionPool:
    """Move each candidate by the secant slope towards/away from its historical partner.

    With ``rebalance`` the slack generator is reset afterwards so the result
    honours the power balance; angles and verdicts are always recomputed.
    """
    _same_length(pool, historical)
    if eta <= 0:
        raise ValueError("eta must be positive")
    p = secant_update(pool.p_g, pool.objective, historical.p_g, historical.objective, eta)
    if rebalance:
        p = problem.rebalance(p)
    return problem.evaluate(p, honor_relaxation=honor_relaxation)


def select(gen: SolutionPool, saved: SolutionPool, historical: SolutionPool, problem: OpfProblem,
           eta: float = 1e-3, gradient_enabled: bool = True, rebalance: bool = True,
           honor_relaxation: bool = True) -> SolutionPool:
    """Full selector; returns the updated saved set."""
    _same_length(gen, saved, historical)
    first, labels = feasibility_filter(gen, saved)
    second = comparison_layer(first, saved, labels)
    if not gradient_enabled:
        third = second
    else:
        third = gradient_guided_layer(second, historical, eta, problem, rebalance, honor_relaxation)
    updated, _ = feasibility_filter(third, second)
    return updated
