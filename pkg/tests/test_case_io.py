import io
import json

import pytest

from migan_opf.case_io import (
    CaseParseError,
    CaseValidationError,
    UnsupportedFeatureError,
    builtin_cases,
    load_builtin,
    parse_case,
    read_results,
    resolve_case,
    serialize_case,
    write_results,
)
from migan_opf.migan import TrainReport, TrialResult

TINY = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	345	1	1.1	0.9;
	2	1	50	0	0	0	1	1	0	345	1	1.1	0.9;  % load bus
];
mpc.gen = [
	1	0	0	0	0	1	100	1	200	10;
	2	0	0	0	0	1	100	0	200	10;
];
mpc.branch = [
	1	2	0	0.1	0	80	0	0	0	0	1;
];
mpc.gencost = [
	2	0	0	3	0.01	12	0;
	2	0	0	2	7	0	0;
];
"""


def test_tiny_case_per_unit_conversion():
    case = parse_case(TINY, "tiny")
    assert (case.n_b, case.n_g, case.n_d, case.n_line) == (2, 1, 1, 1)  # out-of-service unit dropped
    g = case.generators[0]
    assert g.p_max == pytest.approx(2.0) and g.p_min == pytest.approx(0.1)
    # $/MWh -> $/p.u.h and $/MW^2h -> $/(p.u.)^2 h
    assert g.cost_linear == pytest.approx(1200.0)
    assert g.cost_quadratic == pytest.approx(100.0)
    assert case.loads[0].p_demand == pytest.approx(0.5)
    assert case.branches[0].flow_limit == pytest.approx(0.8)
    assert case.slack_bus_id == 1


def test_stream_and_string_inputs_agree():
    assert parse_case(io.StringIO(TINY), "tiny") == parse_case(TINY, "tiny")


# dimensions and loading per case, as tabulated for the six benchmark systems
TABLE = {
    "case9": (9, 3, 3, 9, 315.0),
    "case30": (30, 2, 21, 41, 283.4),
    "case39": (39, 10, 21, 46, 6254.2),
    "case57": (57, 4, 42, 80, 1250.8),
    "case118": (118, 19, 99, 186, 4242.0),
}


@pytest.mark.parametrize("name", sorted(TABLE))
def test_builtin_case_dimensions(name):
    case = load_builtin(name)
    n_b, n_g, n_d, n_line, load_mw = TABLE[name]
    assert (case.n_b, case.n_g, case.n_d, case.n_line) == (n_b, n_g, n_d, n_line)
    assert case.total_load() * case.base_mva == pytest.approx(load_mw, abs=0.05)


def test_builtin_listing():
    assert set(TABLE) <= set(builtin_cases())


def test_truncated_row_reports_line_number():
    bad = TINY.replace("2	1	50	0	0	0	1	1	0	345	1	1.1	0.9;", "2	1	50;")
    with pytest.raises(CaseParseError, match="line 6") as err:
        parse_case(bad)
    assert err.value.line == 6


def test_garbage_token_reports_line_number():
    with pytest.raises(CaseParseError, match="line 9"):
        parse_case(TINY.replace("1	0	0	0	0	1	100	1	200	10;", "1	0	0	x	0	1	100	1	200	10;"))


def test_missing_slack_is_a_validation_error():
    with pytest.raises(CaseValidationError, match="slack"):
        parse_case(TINY.replace("	1	3	0", "	1	2	0"))


def test_piecewise_cost_is_unsupported():
    with pytest.raises(UnsupportedFeatureError):
        parse_case(TINY.replace("2	0	0	3	0.01	12	0;", "1	0	0	3	0.01	12	0;"))


def test_zero_reactance_rejected():
    with pytest.raises(CaseValidationError, match="reactance"):
        parse_case(TINY.replace("1	2	0	0.1", "1	2	0	0"))


@pytest.mark.parametrize("name", ["case9", "case57"])
def test_serialize_round_trip(name):
    case = load_builtin(name)
    again = parse_case(serialize_case(case), name)
    assert again.n_b == case.n_b and again.n_line == case.n_line
    for a, b in zip(again.generators, case.generators):
        assert (a.bus_id, a.p_min, a.p_max) == (b.bus_id, pytest.approx(b.p_min), pytest.approx(b.p_max))
        assert a.cost_linear == pytest.approx(b.cost_linear)
    assert again.total_load() == pytest.approx(case.total_load())


def test_resolve_case_accepts_paths(tmp_path):
    path = tmp_path / "tiny.m"
    path.write_text(TINY)
    assert resolve_case(str(path)).name == "tiny"
    assert resolve_case("case9").n_b == 9
    with pytest.raises(FileNotFoundError):
        resolve_case("case_nope")


def _report():
    rows = [
        TrialResult("case9", 0, 1.0, 370.0, 362.0, 100 * 8 / 362, 2, 1.5, True, [0.1, 0.5, 2.55]),
        TrialResult("case9", 1, 1.0, 366.0, 362.0, 100 * 4 / 362, 1, 2.5, True, [0.2, 0.4, 2.55]),
    ]
    return TrainReport(rows)


def test_results_csv_layout(tmp_path):
    path = tmp_path / "r.csv"
    write_results(_report(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "case,trial,rho,objective,oracle_objective,mae_pct,recursive_iters,seconds"
    assert lines[1].startswith("case9,0,1,370,362,")
    assert lines[3].split(",")[:4] == ["case9", "mean", "1", "368"]
    assert lines[4].split(",")[:4] == ["case9", "std", "0", "2"]


def test_results_json_round_trip(tmp_path):
    path = tmp_path / "r.json"
    report = _report()
    write_results(report, path, format="json")
    assert read_results(path) == report
    assert json.loads(path.read_text())["mean"]["mae_pct"] == pytest.approx(100 * 6 / 362)
