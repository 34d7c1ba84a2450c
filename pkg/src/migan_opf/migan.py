"""Selector-wrapped WGAN training loop and load adaptation.

The generator emits raw vectors ``g`` which are decoded into dispatches by
resetting the slack generator (``p = g @ S + s0``); the decode is affine, so
the critic's gradient flows back to the generator exactly. The critic sees
full solution vectors ``[p_g, theta]``: real samples come from the
historical pool, fake samples are the selector output.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .mi_selector import select
from .neural import MlpNet, TrainHyper, make_discriminator, make_generator, rmsprop_step
from .opf_model import OpfProblem, SolutionPool
from .sampler import SamplerConfig, sample_feasible

log = logging.getLogger(__name__)

SENTINEL_DISPATCH = 1e6
SENTINEL_OBJECTIVE = 1e18


@dataclass
class MiGanState:
    generator: MlpNet
    discriminator: MlpNet
    saved_pool: SolutionPool
    historical_pool: SolutionPool
    hyper: TrainHyper
    rng: np.random.Generator
    seed: int = 0
    eta: float = 1e-3
    gradient_enabled: bool = True
    losses: list = field(default_factory=list)  # (loss_g, loss_d) per epoch


def sentinel_pool(n: int, n_g: int, n_b: int) -> SolutionPool:
    return SolutionPool(
        np.full((n, n_g), SENTINEL_DISPATCH),
        np.zeros((n, n_b)),
        np.full(n, SENTINEL_OBJECTIVE),
        np.zeros(n, dtype=bool),
        np.full(n, np.inf),
    )


def init_state(problem: OpfProblem, historical: SolutionPool, hyper: TrainHyper | None = None, seed: int = 0,
               eta: float = 1e-3, gradient_enabled: bool = True) -> MiGanState:
    if len(historical) == 0:
        raise ValueError("historical pool is empty")
    hyper = hyper or TrainHyper()
    rng = np.random.default_rng(seed)
    gen = make_generator(hyper.noise_dim, problem.n_g, rng, hyper.hidden, hyper.leaky_slope)
    disc = make_discriminator(problem.n_g + problem.n_b, rng, hyper.hidden, hyper.leaky_slope)
    saved = sentinel_pool(hyper.batch_size, problem.n_g, problem.n_b)
    return MiGanState(gen, disc, saved, historical, hyper, rng, seed, eta, gradient_enabled)


def decode(problem: OpfProblem, raw: np.ndarray) -> np.ndarray:
    return problem.rebalance(raw)


def historical_batch(state: MiGanState, n: int) -> SolutionPool:
    """Uniform draw of ``n`` historical solutions, without replacement when possible."""
    size = len(state.historical_pool)
    idx = state.rng.choice(size, size=n, replace=size < n)
    return state.historical_pool.take(idx)


def train_epoch(state: MiGanState, problem: OpfProblem) -> tuple[float, float]:
    hyper = state.hyper
    n = hyper.batch_size
    z = state.rng.standard_normal((n, hyper.noise_dim))
    raw = state.generator.forward(z)
    gen_pool = problem.evaluate(decode(problem, raw), honor_relaxation=True)
    hist = historical_batch(state, n)
    updated = select(gen_pool, state.saved_pool, hist, problem, state.eta, state.gradient_enabled)

    # critic: minimise mean D(fake) - mean D(real), then clip
    fake, real = updated.features(), hist.features()
    disc = state.discriminator
    for _ in range(hyper.n_critic):
        out = disc.forward(np.vstack([fake, real]))[:, 0]
        loss_d = float(out[:n].mean() - out[n:].mean())
        grad = np.concatenate([np.full(n, 1.0 / n), np.full(n, -1.0 / n)])[:, None]
        disc.backward(grad)
        rmsprop_step(disc, hyper, clip=True)

    loss_g = generator_backward(state, problem, gen_pool)
    rmsprop_step(state.generator, state.hyper)

    state.saved_pool = updated
    state.losses.append((loss_g, loss_d))
    return loss_g, loss_d


def generator_backward(state: MiGanState, problem: OpfProblem, gen_pool: SolutionPool) -> float:
    """Fill generator gradients of ``-mean D([p, theta])`` for the batch last pushed through it.

    The chain runs through the angle map and the slack-adjusting decode.
    """
    n = len(gen_pool)
    out = state.discriminator.forward(gen_pool.features())[:, 0]
    d_feat = state.discriminator.backward(np.full((n, 1), -1.0 / n))
    d_p = d_feat[:, : problem.n_g] + d_feat[:, problem.n_g:] @ problem.theta_gain
    S, _ = problem.rebalance_map()
    state.generator.backward(d_p @ S.T)
    return float(-out.mean())


def _converged(losses, window: int = 100, patience: int = 200, tol: float = 1e-4) -> bool:
    if len(losses) < window + patience:
        return False
    arr = np.asarray(losses[-(window + patience):])
    kernel = np.ones(window) / window
    for col in range(2):
        ma = np.convolve(arr[:, col], kernel, mode="valid")
        if np.abs(np.diff(ma)).max() >= tol:
            return False
    return True


def train(state: MiGanState, problem: OpfProblem, iterations: int | None = None,
          early_stop: bool = False) -> MiGanState:
    iterations = state.hyper.iterations if iterations is None else iterations
    for _ in range(iterations):
        train_epoch(state, problem)
        if early_stop and _converged(state.losses):
            log.debug("losses converged after %d epochs", len(state.losses))
            break
    return state


def emit_candidates(state: MiGanState, problem: OpfProblem, h: int, honor_relaxation: bool = False,
                    through_selector: bool = False) -> SolutionPool:
    """Draw ``h`` samples; infeasible ones are kept but flagged.

    By default these are raw generator samples. With ``through_selector`` the
    samples are pushed batch by batch through the selector against the saved
    pool (without touching the nets), i.e. drawn from the composed
    generator-plus-selector.
    """
    if h == 0:
        return SolutionPool.empty(problem.n_g, problem.n_b)
    z = state.rng.standard_normal((h, state.hyper.noise_dim))
    raw = problem.evaluate(decode(problem, state.generator.forward(z)), honor_relaxation=True)
    if through_selector:
        n = state.hyper.batch_size
        saved, chunks = state.saved_pool, []
        for start in range(0, h, n):
            part = raw.take(slice(start, start + n))
            k = len(part)
            if k < n:
                part = SolutionPool.concat([part, saved.take(slice(k, n))])
            saved = select(part, saved, historical_batch(state, n), problem, state.eta, state.gradient_enabled)
            chunks.append(saved.take(slice(0, k)))
        raw = SolutionPool.concat(chunks)
    if honor_relaxation:
        return raw
    return problem.evaluate(raw.p_g, honor_relaxation=False)


def rescale_to_load(problem: OpfProblem, p_g: np.ndarray) -> np.ndarray:
    """Scale unbalanced rows proportionally so they meet ``problem``'s total load."""
    p = np.array(p_g, dtype=float)
    total = p.sum(axis=1)
    off = (np.abs(total - problem.total_load) > problem.tol) & (total > 0)
    p[off] *= (problem.total_load / total[off])[:, None]
    return p


def adapt_to_load(state: MiGanState, problem_new: OpfProblem, fresh_samples: int, seed: int = 0) -> MiGanState:
    """Carry the pools over to a new load level and add feasibles of the new problem.

    Old dispatches keep their shape but are scaled to the new total load before being re-verdicted.
    """
    old = state.historical_pool
    pools = [problem_new.evaluate(rescale_to_load(problem_new, old.p_g))] if len(old) else []
    if fresh_samples > 0:
        pools.append(sample_feasible(problem_new, SamplerConfig(n_samples=fresh_samples, seed=seed)))
    state.historical_pool = SolutionPool.concat(pools)
    saved = state.saved_pool
    sentinel = saved.objective >= SENTINEL_OBJECTIVE
    moved = np.where(sentinel[:, None], 0.0, rescale_to_load(problem_new, saved.p_g))
    state.saved_pool = SolutionPool.choose(~sentinel, problem_new.evaluate(moved), saved)
    return state


def write_training_curve(state: MiGanState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss_g", "loss_d"])
        for i, (lg, ld) in enumerate(state.losses, start=1):
            w.writerow([i, f"{lg:.10g}", f"{ld:.10g}"])


# -- reporting ---------------------------------------------------------------


def mae_pct(objective: float, oracle: float) -> float:
    return 100.0 * abs(objective - oracle) / abs(oracle)


@dataclass
class TrialResult:
    case: str
    trial: int
    rho: float
    objective: float
    oracle_objective: float
    mae_pct: float
    recursive_iters: int
    seconds: float
    feasible: bool = True
    p_g: list = field(default_factory=list)


_NUMERIC = ("rho", "objective", "oracle_objective", "mae_pct", "recursive_iters", "seconds")


@dataclass
class TrainReport:
    trials: list = field(default_factory=list)

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.trials], dtype=float)

    def summary_mean(self) -> dict:
        return {k: float(self._column(k).mean()) if self.trials else math.nan for k in _NUMERIC}

    def summary_std(self) -> dict:
        # population std, matching a plain numpy .std()
        return {k: float(self._column(k).std()) if self.trials else math.nan for k in _NUMERIC}

    @property
    def all_feasible(self) -> bool:
        return all(t.feasible for t in self.trials)

    def to_dict(self) -> dict:
        return {
            "trials": [asdict(t) for t in self.trials],
            "mean": self.summary_mean(),
            "std": self.summary_std(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TrainReport:
        return cls([TrialResult(**t) for t in doc["trials"]])

    def without_timing(self) -> TrainReport:
        return TrainReport([replace(t, seconds=0.0) for t in self.trials])
