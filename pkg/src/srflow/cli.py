"""Command-line interface.

Subcommands: validate, heat, dual-heat, wdist, geodesic, bochner, verify,
poincare.  Scenarios come from JSON files or from the built-in catalog via
``builtin:NAME``.  Every run writes a machine-readable JSON report plus an
aligned text summary into the output directory; heat and geodesic runs
additionally write CSV tables (header: time, vertex, value / a, vertex,
mass).  Exit codes: 0 pass, 1 violation found, 2 input or validation
error, 3 numerical failure.

Single-threaded execution is the only mode implemented (samples are
evaluated sequentially under pre-split seeds), so identical invocations
reproduce reports bit-for-bit; --threads is accepted and recorded for
interface compatibility and does not change results.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from srflow import __version__
from srflow.chain import check_probability
from srflow.curvature import check_bochner, check_reverse_poincare, verify_srf
from srflow.heatflow import propagate, propagate_dual
from srflow.report import VerificationReport
from srflow.scenario import (
    ScenarioError,
    ScenarioValidationError,
    flow_to_document,
    parse_scenario,
    probe_vector,
    scenario_digest,
)
from srflow.schedule import BUILTIN_NAMES, builtin_scenario, validate_flow
from srflow.transport import dual_w2_lower, geodesic, primal_w2

EXIT_PASS = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _load_flow(spec: str):
    """Resolve --scenario: 'builtin:NAME' or a JSON file path."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        return builtin_scenario(name), {}
    flow, probes, _ = parse_scenario(spec)
    return flow, probes


def _parse_vector(spec: str, states, probes, pi=None, kind="measures"):
    """Vertex vector from 'delta:STATE', 'uniform', 'pi', 'const:V',
    'probe:NAME' or an inline JSON array."""
    n = len(states)
    if spec == "uniform":
        return np.full(n, 1.0 / n)
    if spec == "pi":
        if pi is None:
            raise ValueError("'pi' vector needs a reference triple")
        return np.array(pi, dtype=float)
    if spec.startswith("delta:"):
        v = np.zeros(n)
        v[list(states).index(spec.split(":", 1)[1])] = 1.0
        return v
    if spec.startswith("const:"):
        return np.full(n, float(spec.split(":", 1)[1]))
    if spec.startswith("probe:"):
        return probe_vector(probes, kind, spec.split(":", 1)[1], states)
    return np.array(json.loads(spec), dtype=float)


def _write_report(out_dir: str, payload: dict, fmt: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = _text_report(payload)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print("\n".join(lines))


def _text_report(payload: dict) -> list:
    lines = [f"command   : {payload['command']}",
             f"scenario  : {payload['scenario']} ({payload['scenario_digest'][:12]})",
             f"seed      : {payload['seed']}"]
    for key, val in sorted(payload.get("results", {}).items()):
        if isinstance(val, dict) and "verdict" in val:
            lines.append(f"{key:10s}: {val['verdict']}"
                         + (f"  margin={val['margin']:.6e}" if isinstance(
                             val.get("margin"), float) else ""))
        else:
            lines.append(f"{key:10s}: {val}")
    lines.append(f"elapsed_s : {payload['timing']['elapsed_s']:.3f}")
    return lines


def _report_payload(args, flow, results: dict, started: float) -> dict:
    return {
        "command": args.command,
        "scenario": args.scenario,
        "scenario_digest": scenario_digest(flow),
        "seed": args.seed,
        "threads": args.threads,
        "tolerance": args.tol,
        "version": __version__,
        "results": results,
        "timing": {"elapsed_s": time.time() - started},
    }


def _write_trajectory(path: str, solution, states_of) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "vertex", "value"])
        for idx, ts, ys in solution.segments:
            states = states_of(idx)
            for row, t in enumerate(ts):
                for k, s in enumerate(states):
                    writer.writerow([repr(float(t)), s, repr(float(ys[row, k]))])


def _verdict_exit(report: VerificationReport) -> int:
    if report.verdict == "pass":
        return EXIT_PASS
    if report.verdict == "violation":
        return EXIT_VIOLATION
    return EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_validate(args, flow, probes, started):
    report = validate_flow(flow)
    payload = _report_payload(args, flow, {"validation": report.to_dict()}, started)
    _write_report(args.out, payload, args.format)
    return EXIT_PASS if report.passed else EXIT_INPUT


def _cmd_heat(args, flow, probes, started):
    states_from = flow.states_at(args.t_from)
    triple0, _ = (None, None)
    psi = _parse_vector(args.psi, states_from, probes, kind="potentials")
    sol = propagate(flow, args.t_from, args.t_to, psi, grid=args.grid)
    _write_trajectory(os.path.join(_ensure_out(args), "trajectory.csv"), sol,
                      lambda idx: flow.intervals[idx].states)
    results = {
        "final_time": args.t_to,
        "final_states": list(flow.states_at(args.t_to)),
        "final_values": [float(v) for v in sol.final_values],
        "min_initial": float(np.min(psi)),
        "max_initial": float(np.max(psi)),
        "diagnostics": {k: v for k, v in sol.diagnostics.items() if k != "steps"},
    }
    payload = _report_payload(args, flow, results, started)
    _write_report(args.out, payload, args.format)
    return EXIT_PASS


def _cmd_dual_heat(args, flow, probes, started):
    states_end = flow.states_at(args.t_to)
    sigma = _parse_vector(args.sigma, states_end, probes)
    sol = propagate_dual(flow, args.t_from, args.t_to, sigma, grid=args.grid)
    _write_trajectory(os.path.join(_ensure_out(args), "trajectory.csv"), sol,
                      lambda idx: flow.intervals[idx].states)
    masses = [float(ys.sum(axis=1).min()) for _, _, ys in sol.segments] + \
             [float(ys.sum(axis=1).max()) for _, _, ys in sol.segments]
    drift = max(abs(m - float(sigma.sum())) for m in masses) if masses else 0.0
    results = {
        "final_time": args.t_from,
        "final_states": list(flow.states_at(args.t_from)),
        "final_values": [float(v) for v in sol.final_values],
        "mass": float(sigma.sum()),
        "mass_drift": drift,
    }
    payload = _report_payload(args, flow, results, started)
    _write_report(args.out, payload, args.format)
    return EXIT_PASS


def _cmd_wdist(args, flow, probes, started):
    from srflow.schedule import eval_at
    triple, _ = eval_at(flow, args.at)
    mu0 = check_probability(_parse_vector(args.mu0, triple.states, probes,
                                          pi=triple.pi), tol=1e-9)
    mu1 = check_probability(_parse_vector(args.mu1, triple.states, probes,
                                          pi=triple.pi), tol=1e-9)
    upper, path = primal_w2(triple, mu0, mu1, args.grid)
    lower, witness = dual_w2_lower(triple, mu0, mu1, args.grid, path_hint=path)
    results = {
        "time": args.at,
        "grid": args.grid,
        "primal_upper": upper,
        "dual_lower": lower,
        "gap": upper - lower,
        "dual_rounds": witness.diagnostics.get("rounds"),
        "continuity_residual": path.continuity_residual(),
    }
    payload = _report_payload(args, flow, results, started)
    _write_report(args.out, payload, args.format)
    return EXIT_PASS


def _cmd_geodesic(args, flow, probes, started):
    from srflow.schedule import eval_at
    triple, _ = eval_at(flow, args.at)
    mu0 = check_probability(_parse_vector(args.mu0, triple.states, probes,
                                          pi=triple.pi), tol=1e-9)
    mu1 = check_probability(_parse_vector(args.mu1, triple.states, probes,
                                          pi=triple.pi), tol=1e-9)
    path = geodesic(triple, mu0, mu1, args.grid)
    out = _ensure_out(args)
    with open(os.path.join(out, "geodesic.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "vertex", "mass"])
        for j, node in enumerate(path.nodes):
            for k, s in enumerate(triple.states):
                writer.writerow([repr(j / path.grid), s, repr(float(node[k]))])
    results = {
        "time": args.at,
        "grid": args.grid,
        "distance": float(np.sqrt(max(path.action_value, 0.0))),
        "constant_speed_deviation": path.diagnostics.get("constant_speed_deviation"),
    }
    payload = _report_payload(args, flow, results, started)
    _write_report(args.out, payload, args.format)
    return EXIT_PASS


def _cmd_bochner(args, flow, probes, started):
    report = check_bochner(flow, time_points=args.t_points, mu_starts=args.samples,
                           seed=args.seed, tol=args.tol)
    payload = _report_payload(args, flow, {"bochner": report.to_dict()}, started)
    _write_report(args.out, payload, args.format)
    return _verdict_exit(report)


def _cmd_verify(args, flow, probes, started):
    budgets = {
        "bochner": {"time_points": args.t_points, "mu_starts": args.samples},
        "gradient": {"samples": args.samples},
        "transport": {"samples": max(4, args.samples // 5), "grid": args.grid},
        "convexity": {"grid": args.grid},
        "poincare": {"samples": args.samples},
    }
    report = verify_srf(flow, seed=args.seed, budgets=budgets)
    payload = _report_payload(args, flow, {"verify": report.to_dict()}, started)
    _write_report(args.out, payload, args.format)
    return _verdict_exit(report)


def _cmd_poincare(args, flow, probes, started):
    report = check_reverse_poincare(flow, samples=args.samples, seed=args.seed,
                                    tol=args.tol)
    payload = _report_payload(args, flow, {"poincare": report.to_dict()}, started)
    _write_report(args.out, payload, args.format)
    return _verdict_exit(report)


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srflow",
        description="Heat flow and super-Ricci-flow verification on singular "
                    "time-dependent weighted graphs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True,
                       help=f"JSON file or builtin:NAME (builtins: {', '.join(BUILTIN_NAMES)})")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--grid", type=int, default=64, help="curve grid size K")
        p.add_argument("--samples", type=int, default=100)
        p.add_argument("--out", default="srflow_out", help="output directory")
        p.add_argument("--format", choices=("json", "text"), default="text")
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get("SRF_THREADS", "1")),
                       help="recorded only; execution is sequential")

    p = sub.add_parser("validate", help="structural validation of a scenario")
    common(p)

    p = sub.add_parser("heat", help="forward heat flow on a function")
    common(p)
    p.add_argument("--from", dest="t_from", type=float, required=True)
    p.add_argument("--to", dest="t_to", type=float, required=True)
    p.add_argument("--psi", required=True,
                   help="delta:STATE | const:V | uniform | probe:NAME | JSON array")

    p = sub.add_parser("dual-heat", help="backward dual heat flow on a measure")
    common(p)
    p.add_argument("--from", dest="t_from", type=float, required=True)
    p.add_argument("--to", dest="t_to", type=float, required=True)
    p.add_argument("--sigma", required=True,
                   help="delta:STATE | uniform | probe:NAME | JSON array")

    p = sub.add_parser("wdist", help="transport distance with dual certificate")
    common(p)
    p.add_argument("--at", type=float, required=True, help="evaluation time")
    p.add_argument("--mu0", required=True)
    p.add_argument("--mu1", required=True)

    p = sub.add_parser("geodesic", help="constant-speed transport geodesic")
    common(p)
    p.add_argument("--at", type=float, required=True)
    p.add_argument("--mu0", required=True)
    p.add_argument("--mu1", required=True)

    p = sub.add_parser("bochner", help="Bochner inequality check")
    common(p)
    p.add_argument("--t-points", type=int, default=50)

    p = sub.add_parser("verify", help="all four criteria plus reverse Poincare")
    common(p)
    p.add_argument("--t-points", type=int, default=20)

    p = sub.add_parser("poincare", help="reverse Poincare inequality check")
    common(p)

    return parser


_COMMANDS = {
    "validate": _cmd_validate,
    "heat": _cmd_heat,
    "dual-heat": _cmd_dual_heat,
    "wdist": _cmd_wdist,
    "geodesic": _cmd_geodesic,
    "bochner": _cmd_bochner,
    "verify": _cmd_verify,
    "poincare": _cmd_poincare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        flow, probes = _load_flow(args.scenario)
    except (ScenarioError, ScenarioValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return _COMMANDS[args.command](args, flow, probes, started)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
