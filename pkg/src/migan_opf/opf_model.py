"""DC-OPF linear program, angle recovery and feasibility evaluation.

Decision variables are generator dispatch ``p_g``; bus angles are always
recovered from the dispatch by solving the power-balance equations with the
slack angle fixed at zero. Whatever imbalance remains is reported as the
balance residual (the slack-row mismatch) and counts against feasibility.

Inequality rows are ordered as::

    [ Bline theta <= p_line_max   (n_line rows)
     -Bline theta <= -p_line_min  (n_line rows)
      p_g <= p_g_max              (n_g rows)
     -p_g <= -p_g_min             (n_g rows) ]

and ``relaxed_mask`` indexes into that stacking.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from .case_io import PowerCase

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OpfProblem:
    c: np.ndarray
    Mg: np.ndarray
    Md: np.ndarray
    Bbus: np.ndarray
    Bline: np.ndarray
    p_d: np.ndarray
    rho: float
    p_line_min: np.ndarray
    p_line_max: np.ndarray
    p_g_min: np.ndarray
    p_g_max: np.ndarray
    slack_bus: int
    slack_gen: int
    relaxed_mask: np.ndarray
    tol: float = DEFAULT_TOL
    line_branches: np.ndarray = field(default=None)  # branch index of each Bline row
    name: str = ""
    # theta = theta_gain @ p_g + theta_load  (slack row is zero)
    theta_gain: np.ndarray = field(default=None, repr=False)
    theta_load: np.ndarray = field(default=None, repr=False)

    @property
    def n_g(self) -> int:
        return self.c.shape[0]

    @property
    def n_b(self) -> int:
        return self.Bbus.shape[0]

    @property
    def n_line(self) -> int:
        return self.Bline.shape[0]

    @property
    def n_ineq(self) -> int:
        return 2 * self.n_line + 2 * self.n_g

    @property
    def total_load(self) -> float:
        return float(self.rho * self.p_d.sum())

    def with_rho(self, rho: float) -> OpfProblem:
        if rho <= 0:
            raise ModelError("rho must be positive")
        scale = rho / self.rho
        return replace(self, rho=float(rho), theta_load=self.theta_load * scale)

    def with_relaxation(self, mask) -> OpfProblem:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_ineq,):
            raise ModelError(f"relaxed_mask must have {self.n_ineq} entries")
        return replace(self, relaxed_mask=mask.copy())

    def with_tol(self, tol: float) -> OpfProblem:
        return replace(self, tol=float(tol))

    # -- flows ------------------------------------------------------------

    @property
    def flow_gain(self) -> np.ndarray:
        """Line-flow sensitivity to dispatch (PTDF times generator incidence)."""
        return self.Bline @ self.theta_gain

    @property
    def flow_offset(self) -> np.ndarray:
        return self.Bline @ self.theta_load

    def inequality_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Inequality rows ``A p_g <= b`` in the documented row order."""
        H, h0 = self.flow_gain, self.flow_offset
        eye = np.eye(self.n_g)
        A = np.vstack([H, -H, eye, -eye])
        b = np.concatenate([self.p_line_max - h0, -(self.p_line_min - h0), self.p_g_max, -self.p_g_min])
        return A, b

    # -- batch evaluation -------------------------------------------------

    def rebalance(self, p_g: np.ndarray) -> np.ndarray:
        """Reset the slack generator so total generation meets the scaled load."""
        p = np.array(p_g, dtype=float, copy=True)
        others = p.sum(axis=-1) - p[..., self.slack_gen]
        p[..., self.slack_gen] = self.total_load - others
        return p

    def rebalance_map(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine form of :meth:`rebalance` acting on row vectors: ``p @ S + s0``."""
        S = np.eye(self.n_g)
        S[:, self.slack_gen] = -1.0
        S[self.slack_gen, self.slack_gen] = 0.0
        s0 = np.zeros(self.n_g)
        s0[self.slack_gen] = self.total_load
        return S, s0

    def violations(self, p_g: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Signed violation of every inequality row (positive = violated)."""
        flows = theta @ self.Bline.T
        return np.concatenate(
            [flows - self.p_line_max, self.p_line_min - flows, p_g - self.p_g_max, self.p_g_min - p_g], axis=-1
        )

    def feasible_mask(self, p_g, theta, residual, honor_relaxation: bool, tol: float | None = None) -> np.ndarray:
        tol = self.tol if tol is None else tol
        viol = self.violations(p_g, theta)
        if honor_relaxation and self.relaxed_mask.any():
            viol = viol[..., ~self.relaxed_mask]
        ok = np.abs(residual) <= tol
        if viol.shape[-1]:
            ok &= viol.max(axis=-1) <= tol
        return ok

    def evaluate(self, p_g: np.ndarray, honor_relaxation: bool = True) -> SolutionPool:
        """Recover angles, objective and feasibility for a batch of dispatches."""
        p = np.atleast_2d(np.asarray(p_g, dtype=float))
        theta, residual = recover_theta(self, p)
        feas = self.feasible_mask(p, theta, residual, honor_relaxation)
        return SolutionPool(p, theta, p @ self.c, feas, residual)


@dataclass
class Candidate:
    p_g: np.ndarray
    theta: np.ndarray
    objective: float = float("nan")
    feasible: bool | None = None  # None = not evaluated
    balance_residual: float = float("nan")


@dataclass
class SolutionPool:
    """Fixed-size ordered set of candidates stored column-wise."""

    p_g: np.ndarray  # (n, n_g)
    theta: np.ndarray  # (n, n_b)
    objective: np.ndarray  # (n,)
    feasible: np.ndarray  # (n,) bool
    residual: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.p_g.shape[0]

    def __getitem__(self, i: int) -> Candidate:
        return Candidate(
            self.p_g[i].copy(), self.theta[i].copy(), float(self.objective[i]), bool(self.feasible[i]),
            float(self.residual[i]),
        )

    def take(self, index) -> SolutionPool:
        return SolutionPool(
            self.p_g[index], self.theta[index], self.objective[index], self.feasible[index], self.residual[index]
        )

    def copy(self) -> SolutionPool:
        return self.take(slice(None))

    def features(self) -> np.ndarray:
        """Full solution vectors ``[p_g, theta]`` as seen by the discriminator."""
        return np.hstack([self.p_g, self.theta])

    @staticmethod
    def choose(mask: np.ndarray, a: SolutionPool, b: SolutionPool) -> SolutionPool:
        """Pairwise pick: slot ``i`` comes from ``a`` where ``mask[i]`` else from ``b``."""
        if len(a) != len(b):
            raise ValueError(f"pool length mismatch: {len(a)} vs {len(b)}")
        m = np.asarray(mask, dtype=bool)
        return SolutionPool(
            np.where(m[:, None], a.p_g, b.p_g),
            np.where(m[:, None], a.theta, b.theta),
            np.where(m, a.objective, b.objective),
            np.where(m, a.feasible, b.feasible),
            np.where(m, a.residual, b.residual),
        )

    @staticmethod
    def concat(pools) -> SolutionPool:
        pools = list(pools)
        return SolutionPool(*(np.concatenate([getattr(p, f) for p in pools]) for f in
                              ("p_g", "theta", "objective", "feasible", "residual")))

    @classmethod
    def empty(cls, n_g: int, n_b: int) -> SolutionPool:
        return cls(np.zeros((0, n_g)), np.zeros((0, n_b)), np.zeros(0), np.zeros(0, dtype=bool), np.zeros(0))


def _check_connected(n_b: int, f: np.ndarray, t: np.ndarray) -> None:
    adj = np.zeros((n_b, n_b))
    adj[f, t] = 1
    adj[t, f] = 1
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise ModelError(f"in-service branch graph has {n_comp} connected components")


def build_problem(case: PowerCase, rho: float = 1.0, tol: float = DEFAULT_TOL) -> OpfProblem:
    if rho <= 0:
        raise ModelError("rho must be positive")
    index = {b.id: k for k, b in enumerate(case.buses)}
    n_b, n_g, n_d = case.n_b, case.n_g, case.n_d
    if n_g == 0:
        raise ModelError("case has no dispatchable generators")

    live = [k for k, br in enumerate(case.branches) if br.status]
    f = np.array([index[case.branches[k].from_bus] for k in live], dtype=int)
    t = np.array([index[case.branches[k].to_bus] for k in live], dtype=int)
    x = np.array([case.branches[k].reactance for k in live], dtype=float)
    limit = np.array([case.branches[k].flow_limit for k in live], dtype=float)
    _check_connected(n_b, f, t)

    susceptance = 1.0 / x
    Bbus = np.zeros((n_b, n_b))
    np.add.at(Bbus, (f, f), susceptance)
    np.add.at(Bbus, (t, t), susceptance)
    np.add.at(Bbus, (f, t), -susceptance)
    np.add.at(Bbus, (t, f), -susceptance)

    if np.any(limit == 0):
        warnings.warn(f"{int(np.sum(limit == 0))} branch(es) with zero rating treated as unlimited", stacklevel=2)
    limited = np.flatnonzero(limit > 0)
    Bline = np.zeros((limited.size, n_b))
    rows = np.arange(limited.size)
    Bline[rows, f[limited]] = susceptance[limited]
    Bline[rows, t[limited]] = -susceptance[limited]

    Mg = np.zeros((n_b, n_g))
    for j, g in enumerate(case.generators):
        Mg[index[g.bus_id], j] = 1.0
    Md = np.zeros((n_b, n_d))
    for j, ld in enumerate(case.loads):
        Md[index[ld.bus_id], j] = 1.0

    if any(g.cost_quadratic != 0 for g in case.generators):
        log.warning("%s: quadratic cost terms ignored; the DC-OPF objective is linear", case.name or "case")

    slack_bus = next(k for k, b in enumerate(case.buses) if b.is_slack)
    at_slack = np.flatnonzero(Mg[slack_bus])
    if at_slack.size == 0:
        raise ModelError("no dispatchable generator at the slack bus")

    p_d = np.array([ld.p_demand for ld in case.loads], dtype=float)
    keep = np.arange(n_b) != slack_bus
    B_red = Bbus[np.ix_(keep, keep)]
    theta_gain = np.zeros((n_b, n_g))
    theta_load = np.zeros(n_b)
    if n_b > 1:
        try:
            sol = np.linalg.solve(B_red, np.hstack([Mg[keep], -(Md[keep] @ p_d)[:, None]]))
        except np.linalg.LinAlgError:
            raise ModelError("reduced admittance matrix is singular (disconnected network)") from None
        theta_gain[keep] = sol[:, :n_g]
        theta_load[keep] = rho * sol[:, n_g]

    return OpfProblem(
        c=np.array([g.cost_linear for g in case.generators], dtype=float),
        Mg=Mg,
        Md=Md,
        Bbus=Bbus,
        Bline=Bline,
        p_d=p_d,
        rho=float(rho),
        p_line_min=-limit[limited],
        p_line_max=limit[limited],
        p_g_min=np.array([g.p_min for g in case.generators], dtype=float),
        p_g_max=np.array([g.p_max for g in case.generators], dtype=float),
        slack_bus=slack_bus,
        slack_gen=int(at_slack[0]),
        relaxed_mask=np.zeros(2 * limited.size + 2 * n_g, dtype=bool),
        tol=float(tol),
        line_branches=np.array(live, dtype=int)[limited],
        name=case.name,
        theta_gain=theta_gain,
        theta_load=theta_load,
    )


def recover_theta(problem: OpfProblem, p_g: np.ndarray) -> tuple[np.ndarray, np.ndarray | float]:
    """Angles from dispatch with the slack angle pinned to zero.

    Works on a single vector or a batch of row vectors. Returns the angles and
    the balance residual (total generation minus total scaled load).
    """
    p = np.asarray(p_g, dtype=float)
    if p.shape[-1] != problem.n_g:
        raise ModelError(f"dispatch has {p.shape[-1]} entries, expected {problem.n_g}")
    theta = p @ problem.theta_gain.T + problem.theta_load
    residual = p.sum(axis=-1) - problem.total_load
    return theta, residual


def objective(problem: OpfProblem, p_g) -> float | np.ndarray:
    return np.asarray(p_g, dtype=float) @ problem.c


def evaluate_candidate(problem: OpfProblem, p_g, honor_relaxation: bool = False) -> Candidate:
    p = np.asarray(p_g, dtype=float)
    theta, residual = recover_theta(problem, p)
    cand = Candidate(p.copy(), theta, float(p @ problem.c), None, float(residual))
    cand.feasible = check_feasibility(problem, cand, honor_relaxation)
    return cand


def check_feasibility(problem: OpfProblem, candidate: Candidate, honor_relaxation: bool = False,
                      tol: float | None = None) -> bool:
    return bool(
        problem.feasible_mask(candidate.p_g, candidate.theta, candidate.balance_residual, honor_relaxation, tol)
    )
