"""Parameter sweeps over scenario files, written out as CSV tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .model import (Scenario, ScenarioError, load_scenario, relay_reduction,
                    scenario_from_dict, validate_scenario)
from .solver import residual_energies, solve

log = logging.getLogger(__name__)

COLUMNS = ("value", "mode_set", "throughput_nats", "residual_energy_S", "residual_energy_R1",
           "residual_energy_R2", "solver_status")

FIXTURES = ("symmetric", "fig3_br", "fig3_eh", "fig5", "fig6")

# default grids; each can be overridden by name
DEFAULT_GRID = {
    "lambda_step": 0.05,
    "er22_step": 0.02,
    "es1_step": 0.25,
    "bmax_points": 16,
    "bmax_min": 0.05,
    "bmax_max": 8.0,
}

_ARRIVAL = re.compile(r"^E_(s|r|r1|r2),(\d+)$", re.IGNORECASE)
_SINGLE_SETS = ("R1", "R2")


def fmt(x, digits: int = 12) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"
    return f"{x:.{digits}g}"


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("relay_harvest") / "data" / f"{name}.json"))


def load_fixture(name: str) -> Scenario:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return load_scenario(fixture_path(name))


def grid_values(start: float, stop: float, step: float) -> tuple:
    """``start, start + step, ...`` up to ``stop`` inclusive, free of float drift."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(math.floor((stop - start) / step + 1e-9))
    return tuple(round(start + k * step, 12) for k in range(n + 1))


def log_grid(lo: float, hi: float, n: int) -> tuple:
    return tuple(float(f"{v:.12g}") for v in np.geomspace(lo, hi, n))


# --- sweep specification ------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter over a base scenario, solved for each mode set.

    ``parameter`` is ``"lambda"`` (share of the relay energy vector given to
    R1), ``"B_max"``, or an arrival entry such as ``"E_r2,2"`` or ``"E_s,1"``
    (1-based epoch).  ``mode_sets`` holds shorthand names like ``"sr"``,
    ``"bc+sr"`` or ``"all"``; ``"R1"`` and ``"R2"`` solve the single-relay
    instance keeping only that relay.
    """
    base: Scenario
    parameter: str
    values: tuple
    mode_sets: tuple = ("all",)
    relay_energy: tuple | None = None
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "mode_sets", tuple(self.mode_sets))
        if not self.values:
            raise ValueError("a sweep needs at least one value")
        if not self.mode_sets:
            raise ValueError("a sweep needs at least one mode set")
        p = self.parameter
        if p == "lambda":
            if self.base.relay_count != 2:
                raise ScenarioError("a lambda sweep needs a two-relay base scenario")
            bad = [v for v in self.values if not 0.0 <= v <= 1.0]
            if bad:
                raise ValueError(f"lambda values outside [0, 1]: {bad}")
        elif p == "B_max":
            bad = [v for v in self.values if not v >= 0.0]
            if bad:
                raise ValueError(f"B_max values must be non-negative: {bad}")
        else:
            m = _ARRIVAL.match(p)
            if not m:
                raise ValueError(f"unknown sweep parameter {p!r}")
            if int(m.group(2)) < 1 or int(m.group(2)) > self.base.K:
                raise ValueError(f"{p}: epoch out of range 1..{self.base.K}")
            bad = [v for v in self.values if not (v >= 0.0 and math.isfinite(v))]
            if bad:
                raise ValueError(f"{p} values must be finite and non-negative: {bad}")

    def shared_relay_energy(self) -> np.ndarray:
        if self.relay_energy is not None:
            return np.asarray(self.relay_energy, dtype=float)
        return self.base.profile.arrivals("R1") + self.base.profile.arrivals("R2")

    def scenario_at(self, value: float) -> Scenario:
        s = self.base
        p = self.parameter
        if p == "lambda":
            er = self.shared_relay_energy()
            prof = replace(s.profile, arrivals_r1=tuple(value * er),
                           arrivals_r2=tuple((1.0 - value) * er))
            return validate_scenario(replace(s, profile=prof))
        if p == "B_max":
            return validate_scenario(replace(s, buffer_capacity=value))
        node, epoch = _ARRIVAL.match(p).groups()
        node = {"s": "S", "r": "R", "r1": "R1", "r2": "R2"}[node.lower()]
        return s.with_arrival(node, int(epoch) - 1, value)


def _instance(s: Scenario, mode_set: str) -> Scenario:
    if mode_set in _SINGLE_SETS:
        if s.relay_count != 2:
            raise ScenarioError(f"mode set {mode_set} needs a two-relay base scenario")
        return relay_reduction(s, int(mode_set[1]))
    if s.relay_count == 1:
        return s
    return s.with_modes(mode_set)


def _solve_row(task) -> dict:
    value, mode_set, s = task
    row = {"value": value, "mode_set": mode_set, "throughput_nats": math.nan,
           "residual_energy_S": None, "residual_energy_R1": None, "residual_energy_R2": None,
           "solver_status": ""}
    try:
        inst = _instance(s, mode_set)
        sol = solve(inst)
    except Exception as exc:  # a failed row is reported, never fatal
        row["solver_status"] = f"error:{type(exc).__name__}"
        return row
    # rounding noise below 1e-12 of a node's total prints as 0
    res = {n: (0.0 if abs(v) <= 1e-12 * max(inst.node_total(n), 1.0) else v)
           for n, v in residual_energies(sol.policy, inst).items()}
    row["throughput_nats"] = sol.throughput
    row["residual_energy_S"] = res["S"]
    if inst.relay_count == 2:
        row["residual_energy_R1"] = res["R1"]
        row["residual_energy_R2"] = res["R2"]
    elif mode_set == "R2":
        row["residual_energy_R2"] = res["R"]
    else:
        row["residual_energy_R1"] = res["R"]
    row["solver_status"] = sol.status if sol.certified else f"{sol.status}:uncertified"
    return row


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def series(self, mode_set: str, column: str = "throughput_nats") -> tuple:
        """``(values, column)`` arrays for one mode set, in row order."""
        rows = [r for r in self.rows if r["mode_set"] == mode_set]
        conv = [math.nan if r[column] is None else float(r[column]) for r in rows]
        return np.array([r["value"] for r in rows]), np.array(conv)

    def __add__(self, other: "SweepTable") -> "SweepTable":
        return SweepTable(self.rows + other.rows)


def _map(tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [_solve_row(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_solve_row, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepTable:
    """Solve every (value, mode set) pair; rows follow value order, then mode-set order."""
    tasks = []
    for v in spec.values:
        try:
            s = spec.scenario_at(v)
        except ScenarioError as exc:
            log.warning("sweep value %s rejected: %s", v, exc)
            s = exc
        for m in spec.mode_sets:
            tasks.append((v, m, s))
    ok = [t for t in tasks if isinstance(t[2], Scenario)]
    solved = iter(_map(ok, jobs))
    rows = []
    for v, m, s in tasks:
        if isinstance(s, Scenario):
            rows.append(next(solved))
        else:
            rows.append({"value": v, "mode_set": m, "throughput_nats": math.nan,
                         "residual_energy_S": None, "residual_energy_R1": None,
                         "residual_energy_R2": None,
                         "solver_status": f"error:{type(s).__name__}"})
    table = SweepTable(rows)
    if spec.output:
        table.write(spec.output)
    return table


def crossover(table: SweepTable, lower: str, upper: str, margin: float = 1e-6):
    """Smallest swept value where ``upper`` beats ``lower`` by more than ``margin``."""
    v_lo, t_lo = table.series(lower)
    v_up, t_up = table.series(upper)
    ref = dict(zip(v_lo, t_lo))
    for v, t in zip(v_up, t_up):
        if v in ref and t - ref[v] > margin:
            return float(v)
    return None


def _range(doc, key):
    if "values" in doc:
        return tuple(float(v) for v in doc["values"])
    r = doc.get("range")
    if not isinstance(r, dict) or set(r) != {"start", "stop", "step"}:
        raise ScenarioError(f"{key}: give either 'values' or 'range' with start, stop and step")
    return grid_values(float(r["start"]), float(r["stop"]), float(r["step"]))


_SPEC_KEYS = {"base", "parameter", "values", "range", "mode_sets", "relay_energy", "output"}


def sweep_spec_from_dict(doc: dict, root: Path | None = None) -> SweepSpec:
    """Parse a sweep file.

    ``base`` is a fixture name, a path to a scenario file or an inline
    scenario object.  Relative paths, including ``output``, resolve against
    ``root``.
    """
    if not isinstance(doc, dict):
        raise ScenarioError("sweep spec must be an object")
    extra = set(doc) - _SPEC_KEYS
    if extra:
        raise ScenarioError(f"unknown field(s) in sweep spec: {', '.join(sorted(extra))}")
    for key in ("base", "parameter"):
        if key not in doc:
            raise ScenarioError(f"sweep spec is missing {key!r}")
    base = doc["base"]
    if isinstance(base, dict):
        scen = scenario_from_dict(base)
    elif base in FIXTURES:
        scen = load_fixture(base)
    else:
        p = Path(base)
        if root is not None and not p.is_absolute():
            p = root / p
        scen = load_scenario(p)
    out = doc.get("output")
    if out is not None and root is not None and not Path(out).is_absolute():
        out = str(root / out)
    return SweepSpec(
        base=scen,
        parameter=doc["parameter"],
        values=_range(doc, "sweep spec"),
        mode_sets=tuple(doc.get("mode_sets", ("all",))),
        relay_energy=tuple(doc["relay_energy"]) if "relay_energy" in doc else None,
        output=out,
    )


def load_sweep_spec(path) -> SweepSpec:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return sweep_spec_from_dict(doc, root=path.parent)


# --- figures -----------------------------------------------------------------------


def _scaled(s: Scenario, factor: float) -> Scenario:
    if factor == 1.0:
        return s
    return validate_scenario(replace(s, profile=s.profile.scaled_energy(factor)))


def _lambda_figure(name, base, grid, jobs):
    lam = grid_values(0.0, 1.0, grid["lambda_step"])
    main = run_sweep(SweepSpec(base, "lambda", lam, ("all", "sr")), jobs)
    ends = run_sweep(SweepSpec(base, "lambda", (1.0,), ("R1",)), jobs)
    ends += run_sweep(SweepSpec(base, "lambda", (0.0,), ("R2",)), jobs)
    return {name: main + ends}


def _figure4(base, grid, jobs):
    bmax = log_grid(grid["bmax_min"], grid["bmax_max"], int(grid["bmax_points"])) + (math.inf,)
    lam = grid_values(0.0, 1.0, grid["lambda_step"])
    rows, picks = [], []
    for B in bmax:
        sB = validate_scenario(replace(base, buffer_capacity=B))
        t = run_sweep(SweepSpec(sB, "lambda", lam, ("all",)), jobs)
        thr = np.array([r["throughput_nats"] for r in t.rows], dtype=float)
        thr = np.where(np.isnan(thr), -np.inf, thr)
        k = int(np.argmax(thr))
        best = dict(t.rows[k], value=B)
        rows.append(best)
        picks.append({"value": B, "mode_set": "all", "lambda": t.rows[k]["value"],
                      "throughput_nats": best["throughput_nats"]})
        for m, l in (("R1", 1.0), ("R2", 0.0)):
            rows.extend(dict(r, value=B) for r in
                        run_sweep(SweepSpec(sB, "lambda", (l,), (m,)), jobs).rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("value", "mode_set", "lambda", "throughput_nats"))
    for p in picks:
        w.writerow([fmt(p["value"]), p["mode_set"], fmt(p["lambda"]), fmt(p["throughput_nats"])])
    return {"fig4": SweepTable(rows), "fig4_lambda": buf.getvalue()}


def _residual_csv(table: SweepTable, mode_set: str, node: str) -> str:
    col = f"residual_energy_{node}"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("value", col))
    for r in table.rows:
        if r["mode_set"] == mode_set:
            w.writerow([fmt(r["value"]), fmt(r[col])])
    return buf.getvalue()


def reproduce_figure(fig_id: int, outdir=None, jobs: int = 1, grid: dict | None = None,
                     energy_scale: float = 1.0) -> dict:
    """Compute the tables behind one figure; returns ``{name: csv text}``.

    When ``outdir`` is given each table is also written to ``<outdir>/<name>.csv``.
    ``energy_scale`` multiplies every arrival (0 gives a quick smoke run).
    """
    g = dict(DEFAULT_GRID)
    if grid:
        unknown = set(grid) - set(g)
        if unknown:
            raise ValueError(f"unknown grid keys: {', '.join(sorted(unknown))}")
        g.update({k: float(v) for k, v in grid.items()})
    if fig_id == 3:
        out = {}
        out.update(_lambda_figure("fig3_battery", _scaled(load_fixture("fig3_br"), energy_scale),
                                  g, jobs))
        out.update(_lambda_figure("fig3_harvesting", _scaled(load_fixture("fig3_eh"), energy_scale),
                                  g, jobs))
    elif fig_id == 4:
        out = _figure4(_scaled(load_fixture("fig3_eh"), energy_scale), g, jobs)
    elif fig_id == 5:
        base = _scaled(load_fixture("fig5"), energy_scale)
        t = run_sweep(SweepSpec(base, "E_r2,2", grid_values(0.5, 2.5, g["er22_step"]),
                                ("sr", "bc+sr")), jobs)
        out = {"fig5": t, "fig5_residual": _residual_csv(t, "sr", "R2")}
    elif fig_id == 6:
        base = _scaled(load_fixture("fig6"), energy_scale)
        out = {"fig6": run_sweep(SweepSpec(base, "E_s,1", grid_values(4.0, 10.0, g["es1_step"]),
                                           ("mac+sr", "sr")), jobs)}
    else:
        raise ValueError(f"no figure {fig_id!r}; choose 3, 4, 5 or 6")
    text = {k: (v.to_csv() if isinstance(v, SweepTable) else v) for k, v in out.items()}
    if outdir is not None:
        d = Path(outdir)
        d.mkdir(parents=True, exist_ok=True)
        for k, v in text.items():
            (d / f"{k}.csv").write_text(v, encoding="utf-8")
    return text


def figure_tables(fig_id: int, jobs: int = 1, grid: dict | None = None) -> dict:
    """Like :func:`reproduce_figure` but returns parsed tables for programmatic checks."""
    text = reproduce_figure(fig_id, jobs=jobs, grid=grid)
    return {k: list(csv.DictReader(io.StringIO(v))) for k, v in text.items()}


__all__ = ["SweepSpec", "SweepTable", "run_sweep", "reproduce_figure", "figure_tables",
           "crossover", "load_sweep_spec", "sweep_spec_from_dict", "load_fixture",
           "fixture_path", "grid_values", "log_grid", "COLUMNS", "FIXTURES"]
