"""Rejection sampling of feasible dispatches.

Dispatches are drawn uniformly from the generator box. In ``slack-adjust``
mode the slack generator is then reset to close the power balance before the
line and generator limits are checked; ``reject`` mode keeps the raw draw,
which almost never balances exactly and exists for completeness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .opf_model import OpfProblem, SolutionPool

log = logging.getLogger(__name__)

# relaxed-row counts per case, chosen by trial in the original experiments
DEFAULT_RELAX = {"case9": 0, "case30": 0, "case39": 6, "case57": 1, "case118": 19, "case162": 49}

SLACK_ADJUST = "slack-adjust"
REJECT = "reject"


class SamplingExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 3000
    max_attempts: int | None = None  # default 200 * n_samples
    relax_count: int = 0
    seed: int = 0
    balance_mode: str = SLACK_ADJUST
    chunk: int = 4096

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.relax_count < 0:
            raise ValueError("relax_count must be >= 0")
        if self.balance_mode not in (SLACK_ADJUST, REJECT):
            raise ValueError(f"unknown balance_mode {self.balance_mode!r}")

    @property
    def attempts(self) -> int:
        return self.max_attempts if self.max_attempts is not None else 200 * self.n_samples


def choose_relaxed_rows(problem: OpfProblem, relax_count: int, seed) -> np.ndarray:
    """Uniformly random subset of inequality rows to ignore during training."""
    if not 0 <= relax_count <= problem.n_ineq:
        raise ValueError(f"relax_count must be in [0, {problem.n_ineq}]")
    rng = np.random.default_rng(seed)
    mask = np.zeros(problem.n_ineq, dtype=bool)
    mask[rng.choice(problem.n_ineq, size=relax_count, replace=False)] = True
    return mask


def draw_dispatch(problem: OpfProblem, rng: np.random.Generator, size: int, balance_mode: str = SLACK_ADJUST):
    p = rng.uniform(problem.p_g_min, problem.p_g_max, size=(size, problem.n_g))
    if balance_mode == SLACK_ADJUST:
        p = problem.rebalance(p)
    return p


def sample_feasible(problem: OpfProblem, cfg: SamplerConfig) -> SolutionPool:
    """Return up to ``cfg.n_samples`` candidates feasible under the relaxation mask.

    The problem's own ``relaxed_mask`` is used; build it with
    :func:`choose_relaxed_rows` first when rows should be relaxed.
    """
    rng = np.random.default_rng(cfg.seed)
    kept = []
    found = 0
    tried = 0
    while found < cfg.n_samples and tried < cfg.attempts:
        size = min(cfg.chunk, cfg.attempts - tried)
        pool = problem.evaluate(draw_dispatch(problem, rng, size, cfg.balance_mode), honor_relaxation=True)
        tried += size
        good = pool.take(np.flatnonzero(pool.feasible)[: cfg.n_samples - found])
        kept.append(good)
        found += len(good)
    if found == 0:
        raise SamplingExhaustedError(
            f"no feasible sample in {tried} attempts; consider relaxing more constraints (relax_count)"
        )
    if found < cfg.n_samples:
        log.warning("only %d of %d feasible samples found in %d attempts", found, cfg.n_samples, tried)
    log.debug("sampled %d feasible of %d attempts", found, tried)
    return SolutionPool.concat(kept)
