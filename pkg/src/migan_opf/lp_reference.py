"""Exact LP oracle: a dense bounded-variable revised simplex.

The DC-OPF is solved in dispatch space only. Angles are eliminated through the
reduced admittance solve, which leaves one balance row and one dense flow row
per rated line::

    min  c @ p
    s.t. sum(p) = rho * sum(p_d)
         p_line_min - h0 <= H @ p <= p_line_max - h0
         p_g_min <= p <= p_g_max

Rows are turned into equalities with bounded slacks ``A x - s = 0`` and
Phase I starts from an all-artificial basis. Pricing is Dantzig's rule with a
switch to Bland's rule after a run of degenerate pivots.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .opf_model import OpfProblem

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"


class SimplexError(RuntimeError):
    pass


@dataclass
class LpSolution:
    x_opt: np.ndarray
    objective_opt: float
    status: str
    iterations: int
    duality_gap: float = float("nan")
    row_duals: np.ndarray = field(default=None, repr=False)
    seconds: float = 0.0


@dataclass
class KktReport:
    primal: float
    dual: float
    complementarity: float
    duality_gap: float
    tol: float = 1e-7

    @property
    def passed(self) -> bool:
        return max(self.primal, self.dual, self.complementarity) <= self.tol


@dataclass
class _Lp:
    c: np.ndarray
    A: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def opf_lp(problem: OpfProblem) -> _Lp:
    H, h0 = problem.flow_gain, problem.flow_offset
    A = np.vstack([np.ones((1, problem.n_g)), H])
    load = problem.total_load
    row_lo = np.concatenate([[load], problem.p_line_min - h0])
    row_hi = np.concatenate([[load], problem.p_line_max - h0])
    return _Lp(problem.c.astype(float), A, row_lo, row_hi, problem.p_g_min.astype(float),
               problem.p_g_max.astype(float))


def _solve_basis(B: np.ndarray, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
    if B.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.solve(B.T if transpose else B, rhs)


def _simplex(A, cost, lo, hi, x, basis, is_basic, max_iter, tol, counter):
    """Run bounded primal simplex from a feasible basis. Returns status."""
    m, n = A.shape
    degenerate_run = 0
    bland = False
    cscale = max(1.0, float(np.max(np.abs(cost)))) if n else 1.0
    dtol = 1e-9 * cscale
    while True:
        if counter[0] >= max_iter:
            raise SimplexError(f"iteration limit {max_iter} reached")
        B = A[:, basis]
        nonbasic = ~is_basic
        if m:
            x[basis] = _solve_basis(B, -(A[:, nonbasic] @ x[nonbasic]))
        y = _solve_basis(B, cost[basis], transpose=True)
        d = cost - A.T @ y
        d[is_basic] = 0.0
        can_up = nonbasic & (x < hi - tol) & (d < -dtol)
        can_down = nonbasic & (x > lo + tol) & (d > dtol)
        eligible = np.flatnonzero(can_up | can_down)
        if eligible.size == 0:
            return OPTIMAL
        j = int(eligible[0]) if bland else int(eligible[np.argmax(np.abs(d[eligible]))])
        direction = 1.0 if can_up[j] else -1.0

        w = -_solve_basis(B, A[:, j]) * direction  # rate of change of basic values
        xb = x[basis]
        lob, hib = lo[basis], hi[basis]
        ratios = np.full(m, np.inf)
        ptol = 1e-9 * max(1.0, float(np.max(np.abs(w)))) if m else 0.0
        dec = w < -ptol
        inc = w > ptol
        ratios[dec] = (xb[dec] - lob[dec]) / -w[dec]
        ratios[inc] = (hib[inc] - xb[inc]) / w[inc]
        ratios = np.maximum(ratios, 0.0)
        step_flip = hi[j] - x[j] if direction > 0 else x[j] - lo[j]
        step = ratios.min() if m else np.inf
        if step_flip <= step:
            if not np.isfinite(step_flip):
                return UNBOUNDED
            x[j] = hi[j] if direction > 0 else lo[j]
            x[basis] = xb + step_flip * w
            counter[0] += 1
            degenerate_run = 0
            bland = False
            continue
        if not np.isfinite(step):
            return UNBOUNDED
        ties = np.flatnonzero(ratios <= step + 1e-12)
        if bland:
            r = int(ties[np.argmin(basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(w[ties]))])
        leaving = basis[r]
        x[basis] = xb + step * w
        x[j] = x[j] + direction * step
        x[leaving] = lo[leaving] if w[r] < 0 else hi[leaving]
        basis[r] = j
        is_basic[leaving] = False
        is_basic[j] = True
        counter[0] += 1
        if step <= 1e-12:
            degenerate_run += 1
            if degenerate_run > 20:
                bland = True
        else:
            degenerate_run = 0
            bland = False


def solve_bounded_lp(c, A, row_lo, row_hi, lo, hi, max_iter: int | None = None, tol: float = 1e-10) -> LpSolution:
    """Minimise ``c @ x`` subject to ``row_lo <= A x <= row_hi`` and ``lo <= x <= hi``."""
    t0 = time.perf_counter()
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, c.size)
    m, n = A.shape
    row_lo = np.asarray(row_lo, dtype=float)
    row_hi = np.asarray(row_hi, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi) or np.any(row_lo > row_hi):
        return LpSolution(np.full(n, np.nan), np.nan, INFEASIBLE, 0, seconds=time.perf_counter() - t0)

    # columns: structural x (n) | slacks s (m) | artificials (m);  rows: A x - s + sign * a = 0
    start = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    s_start = np.clip(A @ start, row_lo, row_hi) if m else np.zeros(0)
    resid = -(A @ start - s_start) if m else np.zeros(0)
    sign = np.where(resid >= 0, 1.0, -1.0)
    full = np.hstack([A, -np.eye(m), np.diag(sign)])
    L = np.concatenate([lo, row_lo, np.zeros(m)])
    U = np.concatenate([hi, row_hi, np.full(m, np.inf)])
    x = np.concatenate([start, s_start, np.abs(resid)])
    basis = np.arange(n + m, n + 2 * m)
    is_basic = np.zeros(n + 2 * m, dtype=bool)
    is_basic[basis] = True
    max_iter = max_iter or 100 * (n + 2 * m + 10)
    counter = [0]

    phase1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    if m and np.abs(resid).max() > 0:
        _simplex(full, phase1, L, U, x, basis, is_basic, max_iter, tol, counter)
        infeas = x[n + m:].sum()
        if infeas > 1e-8 * max(1.0, np.abs(row_lo[np.isfinite(row_lo)]).max(initial=0.0)):
            return LpSolution(x[:n].copy(), np.nan, INFEASIBLE, counter[0], seconds=time.perf_counter() - t0)
    # artificials are pinned at zero for phase II
    U[n + m:] = 0.0
    x[n + m:] = 0.0
    x[basis] = _solve_basis(full[:, basis], -(full[:, ~is_basic] @ x[~is_basic])) if m else x[basis]

    cost = np.concatenate([c, np.zeros(2 * m)])
    status = _simplex(full, cost, L, U, x, basis, is_basic, max_iter, tol, counter)
    # final clean solve of basic values
    if m:
        x[basis] = _solve_basis(full[:, basis], -(full[:, ~is_basic] @ x[~is_basic]))
    xs = x[:n].copy()
    if status != OPTIMAL:
        return LpSolution(xs, -np.inf, status, counter[0], seconds=time.perf_counter() - t0)
    y = _solve_basis(full[:, basis], cost[basis], transpose=True)
    sol = LpSolution(xs, float(c @ xs), OPTIMAL, counter[0], row_duals=y, seconds=time.perf_counter() - t0)
    report = kkt_residuals(c, A, row_lo, row_hi, lo, hi, xs, y)
    sol.duality_gap = report.duality_gap
    return sol


def solve_lp(problem: OpfProblem) -> LpSolution:
    """Exact DC-OPF optimum (dispatch vector) for ``problem``."""
    lp = opf_lp(problem)
    return solve_bounded_lp(lp.c, lp.A, lp.row_lo, lp.row_hi, lp.lo, lp.hi)


def kkt_residuals(c, A, row_lo, row_hi, lo, hi, x, y, tol: float = 1e-7) -> KktReport:
    """KKT residuals for ``x`` with row multipliers ``y`` (positive = lower row bound active)."""
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, c.size)
    x = np.asarray(x, dtype=float)
    y = np.zeros(A.shape[0]) if y is None else np.asarray(y, dtype=float)
    ax = A @ x
    primal = max(
        np.max(row_lo - ax, initial=0.0), np.max(ax - row_hi, initial=0.0),
        np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0),
    )
    rc = c - A.T @ y
    z_lo, z_hi = np.maximum(rc, 0.0), np.maximum(-rc, 0.0)
    y_lo, y_hi = np.maximum(y, 0.0), np.maximum(-y, 0.0)

    def _fin(v):
        return np.where(np.isfinite(v), v, 0.0)

    dual = max(
        np.max(z_lo[~np.isfinite(lo)], initial=0.0), np.max(z_hi[~np.isfinite(hi)], initial=0.0),
        np.max(y_lo[~np.isfinite(row_lo)], initial=0.0), np.max(y_hi[~np.isfinite(row_hi)], initial=0.0),
    )
    comp = max(
        np.max(z_lo * np.abs(x - _fin(lo)) * np.isfinite(lo), initial=0.0),
        np.max(z_hi * np.abs(_fin(hi) - x) * np.isfinite(hi), initial=0.0),
        np.max(y_lo * np.abs(ax - _fin(row_lo)) * np.isfinite(row_lo), initial=0.0),
        np.max(y_hi * np.abs(_fin(row_hi) - ax) * np.isfinite(row_hi), initial=0.0),
    )
    primal_obj = float(c @ x)
    dual_obj = float(y_lo @ _fin(row_lo) - y_hi @ _fin(row_hi) + z_lo @ _fin(lo) - z_hi @ _fin(hi))
    gap = abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))
    return KktReport(float(primal), float(dual), float(comp), gap, tol)


def verify_kkt(problem: OpfProblem, solution: LpSolution, tol: float = 1e-7) -> KktReport:
    """Independent optimality certificate for an oracle solution."""
    lp = opf_lp(problem)
    return kkt_residuals(lp.c, lp.A, lp.row_lo, lp.row_hi, lp.lo, lp.hi, solution.x_opt, solution.row_duals, tol)
