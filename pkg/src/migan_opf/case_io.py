"""MATPOWER case parsing and result serialization.

Only the fields a DC model needs are read: bus type and active demand,
generator active limits, branch reactance/rating/status and polynomial
costs. Voltage, reactive power and shunt columns are ignored.

Generators that are out of service or have no active-power range
(``Pmax <= 0``, e.g. synchronous condensers) are not dispatch variables
and are dropped while parsing.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, TextIO

if TYPE_CHECKING:
    from .migan import TrainReport


class CaseError(ValueError):
    """Base class for problems with case data."""


class CaseParseError(CaseError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CaseValidationError(CaseError):
    pass


class UnsupportedFeatureError(CaseError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_min: float
    p_max: float
    cost_linear: float
    cost_quadratic: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance: float
    flow_limit: float  # 0 means unlimited
    status: bool = True


@dataclass(frozen=True)
class Load:
    bus_id: int
    p_demand: float


@dataclass(frozen=True)
class PowerCase:
    """A parsed network. All power quantities are per-unit on ``base_mva``."""

    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...]
    name: str = ""

    @property
    def n_b(self) -> int:
        return len(self.buses)

    @property
    def n_g(self) -> int:
        return len(self.generators)

    @property
    def n_d(self) -> int:
        return len(self.loads)

    @property
    def n_line(self) -> int:
        return sum(1 for br in self.branches if br.status)

    @property
    def slack_bus_id(self) -> int:
        return next(b.id for b in self.buses if b.is_slack)

    def total_load(self) -> float:
        return sum(ld.p_demand for ld in self.loads)

    def validate(self) -> None:
        slacks = [b.id for b in self.buses if b.is_slack]
        if len(slacks) != 1:
            raise CaseValidationError(f"expected exactly one slack (type 3) bus, found {len(slacks)}")
        ids = {b.id for b in self.buses}
        if len(ids) != len(self.buses):
            raise CaseValidationError("duplicate bus ids")
        for k, br in enumerate(self.branches):
            if br.from_bus not in ids or br.to_bus not in ids:
                raise CaseValidationError(f"branch {k} references an unknown bus")
            if br.status and br.reactance == 0:
                raise CaseValidationError(f"branch {k} ({br.from_bus}-{br.to_bus}) has zero reactance")
        for k, g in enumerate(self.generators):
            if g.bus_id not in ids:
                raise CaseValidationError(f"generator {k} references an unknown bus")
            if g.p_min > g.p_max:
                raise CaseValidationError(f"generator {k} has p_min > p_max")
        for ld in self.loads:
            if ld.bus_id not in ids:
                raise CaseValidationError(f"load references unknown bus {ld.bus_id}")


# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD = 0, 1, 2
GEN_BUS, GEN_STATUS, PMAX, PMIN = 0, 7, 8, 9
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10

_MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}
_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_numbers(text: str, lineno: int) -> list[float]:
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise CaseParseError(f"non-numeric entry ({exc})", lineno) from None


def _read_matrices(source: TextIO) -> tuple[dict[str, list[tuple[int, list[float]]]], dict[str, float]]:
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    scalars: dict[str, float] = {}
    current: str | None = None
    for lineno, raw in enumerate(source, start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is None:
            m = _ASSIGN.match(line)
            if not m:
                continue
            name, rest = m.group(1), m.group(2).strip()
            if rest.startswith("["):
                current = name
                matrices[name] = []
                line = rest[1:]
            else:
                rest = rest.rstrip(";").strip()
                try:
                    scalars[name] = float(rest)
                except ValueError:
                    pass  # strings such as mpc.version
                continue
        closing = "]" in line
        if closing:
            line = line[: line.index("]")]
        for chunk in line.split(";"):
            if chunk.strip():
                matrices[current].append((lineno, _parse_numbers(chunk, lineno)))
        if closing:
            current = None
    if current is not None:
        raise CaseParseError(f"matrix mpc.{current} is not terminated")
    return matrices, scalars


def _checked_rows(matrices, name: str) -> list[tuple[int, list[float]]]:
    if name not in matrices:
        raise CaseParseError(f"missing matrix mpc.{name}")
    rows = matrices[name]
    if not rows:
        return rows
    width = len(rows[0][1])
    for lineno, row in rows:
        if len(row) != width or len(row) < _MIN_COLUMNS[name]:
            raise CaseParseError(
                f"mpc.{name} row has {len(row)} columns, expected {max(width, _MIN_COLUMNS[name])}", lineno
            )
    return rows


def parse_case(source: TextIO | str, name: str = "") -> PowerCase:
    """Parse MATPOWER case text (a stream or a string) into a validated PowerCase."""
    if isinstance(source, str):
        source = io.StringIO(source)
    matrices, scalars = _read_matrices(source)
    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    base = scalars["baseMVA"]
    if base <= 0:
        raise CaseValidationError("baseMVA must be positive")

    bus_rows = _checked_rows(matrices, "bus")
    gen_rows = _checked_rows(matrices, "gen")
    branch_rows = _checked_rows(matrices, "branch")
    cost_rows = _checked_rows(matrices, "gencost")
    if len(cost_rows) < len(gen_rows):
        raise CaseParseError(f"mpc.gencost has {len(cost_rows)} rows for {len(gen_rows)} generators")

    buses, loads = [], []
    for _, row in bus_rows:
        bus_id = int(row[BUS_I])
        buses.append(Bus(bus_id, int(row[BUS_TYPE]) == 3))
        if row[PD] != 0:
            loads.append(Load(bus_id, row[PD] / base))

    gens = []
    for (lineno, row), (clineno, cost) in zip(gen_rows, cost_rows):
        if int(cost[0]) != 2:
            raise UnsupportedFeatureError(f"line {clineno}: only polynomial cost rows (MODEL = 2) are supported")
        ncost = int(cost[3])
        coeffs = cost[4 : 4 + ncost]
        if len(coeffs) != ncost:
            raise CaseParseError(f"gencost row declares {ncost} coefficients", clineno)
        # coefficients run from the highest degree down to the constant
        by_degree = list(reversed(coeffs))
        c1 = by_degree[1] if ncost > 1 else 0.0
        c2 = by_degree[2] if ncost > 2 else 0.0
        if ncost > 3 and any(by_degree[3:]):
            raise UnsupportedFeatureError(f"line {clineno}: cost polynomials above degree 2 are not supported")
        if row[GEN_STATUS] <= 0 or row[PMAX] <= 0:
            continue
        gens.append(Generator(int(row[GEN_BUS]), row[PMIN] / base, row[PMAX] / base, c1 * base, c2 * base**2))

    branches = [
        Branch(int(row[F_BUS]), int(row[T_BUS]), row[BR_X], row[RATE_A] / base, row[BR_STATUS] > 0)
        for _, row in branch_rows
    ]
    case = PowerCase(base, tuple(buses), tuple(gens), tuple(branches), tuple(loads), name)
    case.validate()
    return case


def load_case(path: str | Path) -> PowerCase:
    path = Path(path)
    with open(path) as fh:
        return parse_case(fh, name=path.stem)


def builtin_cases() -> list[str]:
    return sorted(p.name[:-2] for p in resources.files("migan_opf.data").iterdir() if p.name.endswith(".m"))


def load_builtin(name: str) -> PowerCase:
    """Load one of the shipped cases (``case9``, ``case30``, ``case39``, ``case57``, ``case118``)."""
    res = resources.files("migan_opf.data") / f"{name}.m"
    if not res.is_file():
        raise FileNotFoundError(f"no built-in case named {name!r}; available: {builtin_cases()}")
    with res.open() as fh:
        return parse_case(fh, name=name)


def resolve_case(name_or_path: str) -> PowerCase:
    """Accept either a path to a ``.m`` file or the name of a built-in case."""
    p = Path(name_or_path)
    if p.suffix == ".m" or p.exists():
        return load_case(p)
    return load_builtin(name_or_path)


def serialize_case(case: PowerCase) -> str:
    """Write the supported subset back out as MATPOWER text."""
    base = case.base_mva
    demand = {}
    for ld in case.loads:
        demand[ld.bus_id] = demand.get(ld.bus_id, 0.0) + ld.p_demand * base
    out = [f"function mpc = {case.name or 'case'}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", "mpc.bus = ["]
    for b in case.buses:
        out.append(f"\t{b.id}\t{3 if b.is_slack else 1}\t{demand.get(b.id, 0.0)!r}\t0\t0\t0\t1\t1\t0\t1\t1\t1.1\t0.9;")
    out += ["];", "mpc.gen = ["]
    for g in case.generators:
        out.append(f"\t{g.bus_id}\t0\t0\t0\t0\t1\t{base!r}\t1\t{g.p_max * base!r}\t{g.p_min * base!r};")
    out += ["];", "mpc.branch = ["]
    for br in case.branches:
        out.append(
            f"\t{br.from_bus}\t{br.to_bus}\t0\t{br.reactance!r}\t0\t{br.flow_limit * base!r}\t0\t0\t0\t0\t{int(br.status)};"
        )
    out += ["];", "mpc.gencost = ["]
    for g in case.generators:
        out.append(f"\t2\t0\t0\t3\t{g.cost_quadratic / base**2!r}\t{g.cost_linear / base!r}\t0;")
    out += ["];", ""]
    return "\n".join(out)


# -- results -----------------------------------------------------------------

RESULT_COLUMNS = (
    "case",
    "trial",
    "rho",
    "objective",
    "oracle_objective",
    "mae_pct",
    "recursive_iters",
    "seconds",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.10g}"
    return str(value)


def result_rows(report: TrainReport) -> Iterable[list[str]]:
    for t in report.trials:
        yield [_fmt(getattr(t, col)) for col in RESULT_COLUMNS]
    if report.trials:
        for label, stats in (("mean", report.summary_mean()), ("std", report.summary_std())):
            row = []
            for col in RESULT_COLUMNS:
                if col == "case":
                    row.append(report.trials[0].case)
                elif col == "trial":
                    row.append(label)
                else:
                    row.append(_fmt(stats[col]))
            yield row


def write_results(report: TrainReport, path: str | Path, format: str = "csv") -> None:
    """Write a report as CSV (per-trial rows then mean/std rows) or JSON."""
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            writer.writerows(result_rows(report))
    elif format == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def read_results(path: str | Path) -> TrainReport:
    """Read back a report written with ``format='json'``."""
    from .migan import TrainReport

    with open(path) as fh:
        return TrainReport.from_dict(json.load(fh))
