"""End-to-end acceptance checks. Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines."""

import csv
import time

import numpy as np
import pytest

from migan_opf.cli import RHO_DOWN, RHO_UP, RunConfig, main, run_sweep, run_train
from migan_opf.lp_reference import OPTIMAL, solve_lp, verify_kkt
from migan_opf.mi_selector import select
from migan_opf.neural import build_mlp, LEAKY_RELU, LINEAR
from migan_opf.recursive import RecursiveConfig, run_recursive
from migan_opf.sampler import SamplerConfig, sample_feasible

from selector_oracle import RandomLp, reference_select
from test_neural import finite_difference_check

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def trained():
    """Five default trials on case9 and on case30, shared by several checks."""
    return {name: run_train(RunConfig(case=name, seed=100, trials=5)) for name in ("case9", "case30")}


@pytest.fixture(scope="module")
def base9(trained):
    return float(trained["case9"].summary_mean()["mae_pct"])


@pytest.fixture(scope="module")
def sweeps():
    cfg = RunConfig(case="case9", seed=200)
    return {"up": run_sweep(cfg, RHO_UP), "down": run_sweep(cfg, RHO_DOWN)}


def test_c1_oracle_correctness(problems, trained, verdict):
    worst = {"kkt": 0.0, "gap": 0.0, "sec": 0.0}
    for name in ("case9", "case30", "case39", "case57"):
        p = problems[name]
        t0 = time.perf_counter()
        sol = solve_lp(p)
        worst["sec"] = max(worst["sec"], time.perf_counter() - t0)
        rep = verify_kkt(p, sol)
        assert sol.status == OPTIMAL
        worst["kkt"] = max(worst["kkt"], rep.primal, rep.dual, rep.complementarity)
        worst["gap"] = max(worst["gap"], abs(rep.duality_gap))
    below = 0
    for name, report in trained.items():
        oracle = solve_lp(problems[name]).objective_opt
        below += sum(t.objective < oracle - 1e-6 for t in report.trials)
    ok = worst["kkt"] <= 1e-7 and worst["gap"] <= 1e-8 and worst["sec"] < 1.0 and below == 0
    verdict("C1 oracle", ok, f"kkt {worst['kkt']:.2e}, gap {worst['gap']:.2e}, "
                             f"slowest {worst['sec']:.3f}s, below-oracle {below}")
    assert ok


def test_c2_accuracy_and_iterations(trained, verdict):
    limits = {"case9": 12.0, "case30": 3.0}
    parts, ok = [], True
    for name, report in trained.items():
        mean = report.summary_mean()
        slowest = max(t.seconds for t in report.trials)
        good = mean["mae_pct"] <= limits[name] and mean["recursive_iters"] <= 6 and slowest <= 600
        ok &= good
        parts.append(f"{name} MAE {mean['mae_pct']:.3f}% iters {mean['recursive_iters']:.1f} "
                     f"slowest {slowest:.1f}s")
    verdict("C2 accuracy", ok, "; ".join(parts))
    assert ok


def test_c3_final_feasibility(problems, trained, sweeps, verdict):
    runs = [t for r in trained.values() for t in r.trials] + [t for r in sweeps.values() for t in r.trials]
    bad = 0
    for t in runs:
        p = problems[t.case].with_rho(t.rho)
        bad += not (t.feasible and p.evaluate(np.array(t.p_g), honor_relaxation=False).feasible[0])
    ok = bad == 0
    verdict("C3 feasibility", ok, f"{len(runs) - bad}/{len(runs)} final dispatches meet every constraint at 1e-6")
    assert ok


def test_c4_selector_throughput(verdict):
    rng = np.random.default_rng(0)
    batches = []
    for _ in range(100):
        lp = RandomLp(rng)
        batches.append((lp, *(lp.random_pool(rng, 1000) for _ in range(3)), float(rng.uniform(1e-3, 1.0)),
                        bool(rng.random() < 0.8)))
    t0 = time.perf_counter()
    outs = [select(g, s, h, lp, eta=eta, gradient_enabled=grad) for lp, g, s, h, eta, grad in batches]
    elapsed = time.perf_counter() - t0
    broken = mismatched = 0
    for (lp, g, s, h, eta, grad), out in zip(batches, outs):
        broken += int(np.sum(~out.feasible[s.feasible]))
        ref = reference_select(g, s, h, lp, eta, grad)
        mismatched += int(np.sum(np.any(np.abs(out.p_g - np.array([r[0] for r in ref])) > 1e-12, axis=1)))
    ok = elapsed < 30 and broken == 0 and mismatched == 0
    verdict("C4 selector", ok, f"1e5 triples in {elapsed:.2f}s, feasibility losses {broken}, "
                               f"reference mismatches {mismatched}")
    assert ok


def test_c5_recursive_monotone(problems, verdict):
    p = problems["case9"]
    violations, iters = 0, []
    for seed in range(20):
        actual = sample_feasible(p, SamplerConfig(seed=seed))
        out = run_recursive(p, actual, RecursiveConfig(), seed=seed)
        violations += sum(b > a for a, b in zip(out.history, out.history[1:]))
        iters.append(out.iterations)
    ok = violations == 0
    verdict("C5 monotone", ok, f"20 runs, {violations} increases of the retained minimum, "
                               f"iterations {min(iters)}..{max(iters)}")
    assert ok


def test_c6_backprop(verdict):
    rng = np.random.default_rng(0)
    worst, shapes = 0.0, 0
    for depth in (1, 2, 3, 5):
        for width in (1, 3, 8, 17, 32):
            sizes = [int(rng.integers(1, 10))] + [width] * (depth - 1) + [int(rng.integers(1, 6))]
            acts = [LEAKY_RELU] * (depth - 1) + [LINEAR if rng.random() < 0.5 else LEAKY_RELU]
            net = build_mlp(sizes, acts, rng)
            x = rng.normal(size=(int(rng.integers(1, 6)), sizes[0]))
            worst = max(worst, finite_difference_check(net, x, rng))
            shapes += 1
    ok = shapes >= 20 and worst <= 1e-4
    verdict("C6 backprop", ok, f"{shapes} shapes, worst relative error {worst:.2e}")
    assert ok


def test_c7_load_sweeps(sweeps, base9, verdict):
    parts, ok = [], True
    for direction, report in sweeps.items():
        swept = report.trials[1:]
        worst = max(t.mae_pct for t in swept)
        most = max(t.recursive_iters for t in swept)
        good = all(t.feasible for t in swept) and worst <= 3 * base9 and most <= 8
        ok &= good
        parts.append(f"{direction}: worst MAE {worst:.3f}% iters<= {most}")
    verdict("C7 sweeps", ok, "; ".join(parts) + f" (bound {3 * base9:.3f}%)")
    assert ok


def test_c8_cli_determinism(tmp_path, verdict):
    outputs = []
    for run in ("a", "b"):
        train = tmp_path / f"train_{run}.csv"
        sweep = tmp_path / f"sweep_{run}.csv"
        assert main(["train", "case9", "--seed", "11", "--trials", "2", "--iterations", "300", "--out", str(train)]) == 0
        assert main(["sweep-rho", "case9", "--seed", "11", "--rhos", "1.1,0.9", "--iterations", "300",
                     "--out", str(sweep)]) == 0
        outputs.append([_without_seconds(train), _without_seconds(sweep)])
    ok = outputs[0] == outputs[1]
    verdict("C8 determinism", ok, "train and sweep-rho outputs identical apart from timing" if ok else "outputs differ")
    assert ok


def _without_seconds(path):
    rows = list(csv.reader(path.open()))
    col = rows[0].index("seconds")
    return "\n".join(",".join(r[:col] + r[col + 1:]) for r in rows)
