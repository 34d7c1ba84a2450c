import numpy as np
import pytest
from scipy.optimize import linprog

from migan_opf.case_io import load_builtin
from migan_opf.opf_model import build_problem

CASES = ("case9", "case30", "case39", "case57", "case118")


@pytest.fixture(scope="session")
def problems():
    return {name: build_problem(load_builtin(name)) for name in CASES}


@pytest.fixture(scope="session")
def case9(problems):
    return problems["case9"]


def highs_dcopf(problem):
    """Independent oracle: the DC-OPF in joint (p_g, theta) space solved by HiGHS."""
    n_g, n_b = problem.n_g, problem.n_b
    c = np.concatenate([problem.c, np.zeros(n_b)])
    # nodal balance: Mg p - Bbus theta = rho * Md p_d
    A_eq = np.hstack([problem.Mg, -problem.Bbus])
    b_eq = problem.rho * (problem.Md @ problem.p_d)
    ref = np.zeros((1, n_g + n_b))
    ref[0, n_g + problem.slack_bus] = 1.0
    A_eq = np.vstack([A_eq, ref])
    b_eq = np.concatenate([b_eq, [0.0]])
    A_ub = np.vstack([np.hstack([np.zeros((problem.n_line, n_g)), problem.Bline]),
                      np.hstack([np.zeros((problem.n_line, n_g)), -problem.Bline])])
    b_ub = np.concatenate([problem.p_line_max, -problem.p_line_min])
    bounds = [(lo, hi) for lo, hi in zip(problem.p_g_min, problem.p_g_max)] + [(None, None)] * n_b
    return linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
