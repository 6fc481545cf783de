"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 solve not certified, 3 a verified
property failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .kkt import Tolerances, check_structural_properties, classify_states, kkt_residuals
from .model import (DualVariables, ScenarioError, load_scenario, parse_mode_set,
                    policy_from_dict, scenario_from_dict, scenario_to_dict)
from .scheduler import Unschedulable, build_schedule, simulate_schedule, verify_traces
from .solver import (Solution, feasibility_violation, recover_powers, residual_energies, solve)

EXIT_OK, EXIT_INVALID, EXIT_UNCERTIFIED, EXIT_VIOLATION = 0, 1, 2, 3
DIGITS = 12
LN2 = math.log(2.0)

# diagnostics that vary from run to run are left out of result files
_VOLATILE = ("wall_time",)


class InputError(Exception):
    pass


def _clean(x):
    """JSON-ready copy with every float rounded to DIGITS significant digits."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.{DIGITS}g}")
    return x


def _dump(doc) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None


# --- solve ---------------------------------------------------------------------------


def _solution_doc(sol: Solution, s) -> dict:
    diag = {k: v for k, v in sol.diagnostics.items() if k not in _VOLATILE}
    return {
        "scenario": scenario_to_dict(s),
        "policy": sol.policy.as_dict(),
        "powers": recover_powers(sol, s).as_dict(),
        "throughput_nats": sol.throughput,
        "throughput_bits": sol.throughput / LN2,
        "residual_energy": residual_energies(sol.policy, s),
        "duals": sol.duals.as_dict() if sol.duals is not None else None,
        "diagnostics": diag,
        "certified": sol.certified,
        "status": sol.status,
    }


def cmd_solve(args) -> int:
    try:
        s = load_scenario(args.scenario)
    except OSError as exc:
        raise InputError(f"{args.scenario}: {exc.strerror}") from None
    if args.modes:
        if s.relay_count == 1:
            raise InputError("--modes applies to two-relay scenarios only")
        s = s.with_modes(parse_mode_set(args.modes))
    sol = solve(s)
    _emit(_dump(_solution_doc(sol, s)), args.output)
    if not sol.certified:
        print(f"solve not certified: {sol.status}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    return EXIT_OK


# --- verify --------------------------------------------------------------------------


def _load_result(path):
    doc = _read_json(path)
    try:
        s = scenario_from_dict(doc["scenario"])
        pol = policy_from_dict(doc["policy"])
        duals = DualVariables.from_dict(doc["duals"]) if doc.get("duals") else None
        stored = float(doc["throughput_nats"])
        diag = dict(doc.get("diagnostics") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed result file ({exc})") from None
    if pol.K != s.K:
        raise InputError(f"{path}: policy has {pol.K} epochs, scenario has {s.K}")
    sol = Solution(pol, stored, duals, diag, certified=bool(doc.get("certified", True)),
                   status=str(doc.get("status", "optimal")))
    return s, sol


def verify_solution(sol: Solution, s, tol: Tolerances, dt: float = 0.01) -> dict:
    """Run every available check; the returned document carries a ``passed`` flag."""
    problems = []
    actual = sol.policy.throughput()
    objective = {"stored": sol.throughput, "policy": actual,
                 "ok": abs(actual - sol.throughput) <= 1e-10 * max(1.0, abs(sol.throughput))}
    if not objective["ok"]:
        problems.append("objective_mismatch")
    feas = feasibility_violation(sol.policy, s)
    if feas > 1e-8:
        problems.append("infeasible_policy")
    report = {"objective": objective, "feasibility_violation": feas,
              "residual_energy": residual_energies(sol.policy, s)}
    if sol.duals is not None:
        flags = classify_states(sol, s, tol)
        props = check_structural_properties(sol, s, flags, tol)
        kr = kkt_residuals(sol, s, tol)
        report["states"] = flags.as_dict()
        report["properties"] = props.as_dict()
        report["kkt"] = {"certified": kr.certified, "max_deviation": kr.max_deviation,
                         "skipped": len(kr.skipped)}
        if not props.passed:
            problems.extend(f"property:{k}" for k, r in props.lemmas.items() if not r.passed)
        if not kr.certified:
            problems.append("kkt_deviation")
    else:
        problems.append("missing_duals")
    try:
        sch = build_schedule(sol.policy, s)
        tr = simulate_schedule(sch, s, dt)
        fr = verify_traces(tr, s, 1e-7, expected=sol.throughput)
        report["schedule"] = {"segments": len(sch.segments), **fr.as_dict()}
        problems.extend(v["kind"] for v in fr.violations if v["kind"] not in problems)
    except Unschedulable as exc:
        report["schedule"] = {"error": str(exc), "time": exc.time}
        problems.append("unschedulable")
    report["problems"] = problems
    report["passed"] = not problems
    return report


def cmd_verify(args) -> int:
    s, sol = _load_result(args.result)
    tol = Tolerances.from_env()
    report = verify_solution(sol, s, tol)
    _emit(_dump(report), args.output)
    if not report["passed"]:
        print("verification failed: " + ", ".join(report["problems"]), file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# --- sweeps and figures ---------------------------------------------------------------


def _with_bits(csv_text: str) -> str:
    lines = csv_text.splitlines()
    head = lines[0].split(",")
    k = head.index("throughput_nats")
    out = [lines[0] + ",throughput_bits"]
    for line in lines[1:]:
        cells = line.split(",")
        v = cells[k]
        bits = experiments.fmt(float(v) / LN2) if v not in ("", "nan") else ""
        out.append(line + "," + bits)
    return "\n".join(out) + "\n"


def cmd_sweep(args) -> int:
    try:
        spec = experiments.load_sweep_spec(args.spec)
    except OSError as exc:
        raise InputError(f"{args.spec}: {exc.strerror}") from None
    table = experiments.run_sweep(spec, jobs=args.jobs)
    text = table.to_csv()
    if args.bits:
        text = _with_bits(text)
    target = args.output or spec.output
    if spec.output and not args.bits and target == spec.output:
        return EXIT_OK  # already written by run_sweep
    _emit(text, target)
    return EXIT_OK


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"--grid expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            grid[k.strip()] = float(v)
        except ValueError:
            raise InputError(f"--grid {k}: {v!r} is not a number") from None
    return grid


def cmd_figure(args) -> int:
    grid = _parse_grid(args.grid)
    try:
        out = experiments.reproduce_figure(args.id, outdir=args.outdir, jobs=args.jobs, grid=grid)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    for name in out:
        print(str(Path(args.outdir) / f"{name}.csv"))
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relay-harvest",
                                description="Offline throughput-optimal policies for "
                                            "energy-harvesting two-hop relay networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("solve", help="solve a scenario file")
    a.add_argument("scenario")
    a.add_argument("--modes", help="mode set for two relays, e.g. sr, bc+sr, mac+sr, all")
    a.add_argument("-o", "--output", help="result file (default: stdout)")
    a.set_defaults(func=cmd_solve)

    a = sub.add_parser("verify", help="check a result file written by solve")
    a.add_argument("result")
    a.add_argument("-o", "--output", help="report file (default: stdout)")
    a.set_defaults(func=cmd_verify)

    a = sub.add_parser("sweep", help="run a sweep spec and write CSV")
    a.add_argument("spec")
    a.add_argument("-o", "--output", help="CSV file (default: the spec's output, else stdout)")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--bits", action="store_true", help="add a throughput_bits column")
    a.set_defaults(func=cmd_sweep)

    a = sub.add_parser("figure", help="write the CSV tables behind one figure")
    a.add_argument("id", type=int, choices=(3, 4, 5, 6))
    a.add_argument("--outdir", default=".")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--grid", action="append", metavar="KEY=VALUE",
                   help="override a sweep grid setting, e.g. lambda_step=0.1")
    a.set_defaults(func=cmd_figure)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
