"""JSON scenario documents describing singular flows.

A scenario file is a UTF-8 JSON tree mirroring the flow structure:
intervals with vertex lists, per-edge schedules as tagged unions on a
"kind" key, vertex-weight schedules, and transitions with collapse/spawn
maps.  Singular-time limits are not duplicated in the file; they derive
from the schedule kinds (a collapse pole declares its own blow-up), which
keeps documents diff-able and prevents contradictory declarations.
Optional named probe inputs (measures, potentials) ride along for the CLI.

Parsing reports structured errors with document locations; a parsed flow
must additionally pass ``validate_flow`` to be usable.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from srflow.report import VerificationReport
from srflow.schedule import (
    IntervalSpec,
    SingularFlow,
    SingularTransition,
    schedule_from_dict,
    schedule_to_dict,
    validate_flow,
)

__all__ = [
    "ScenarioError",
    "ScenarioValidationError",
    "flow_to_document",
    "document_to_flow",
    "parse_scenario",
    "save_scenario",
    "scenario_digest",
]

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Schema or structural problem; carries (location, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in self.errors))


class ScenarioValidationError(ValueError):
    """The document parsed but the flow failed validation."""

    def __init__(self, report: VerificationReport):
        self.report = report
        details = "; ".join(r.criterion for r in report.failures())
        super().__init__(f"scenario failed flow validation: {details}")


def flow_to_document(flow: SingularFlow, probes: dict | None = None) -> dict:
    doc = {"schema": SCHEMA_VERSION, "name": flow.name, "intervals": [],
           "transitions": []}
    for iv in flow.intervals:
        doc["intervals"].append({
            "t_start": iv.t_start,
            "t_end": iv.t_end,
            "states": list(iv.states),
            "edges": [{"from": x, "to": y, "schedule": schedule_to_dict(s)}
                      for (x, y), s in sorted(iv.edge_schedules.items())],
            "pi": {x: schedule_to_dict(iv.pi_schedules[x]) for x in iv.states},
        })
    for tr in flow.transitions:
        entry = {"time": tr.time, "states": list(tr.states)}
        if tr.collapse_map is not None:
            entry["collapse_map"] = dict(sorted(tr.collapse_map.items()))
        if tr.spawn_map is not None:
            entry["spawn_map"] = dict(sorted(tr.spawn_map.items()))
        doc["transitions"].append(entry)
    if probes:
        doc["probes"] = probes
    return doc


def _require(doc, key, loc, errors, types=None):
    if key not in doc:
        errors.append((loc, f"missing required key {key!r}"))
        return None
    val = doc[key]
    if types is not None and not isinstance(val, types):
        errors.append((loc + "." + key, f"expected {types}, got {type(val).__name__}"))
        return None
    return val


def document_to_flow(doc: dict) -> tuple:
    """Build a flow from a document; raises ScenarioError on schema problems.

    Returns (flow, probes).
    """
    errors = []
    if not isinstance(doc, dict):
        raise ScenarioError([("$", "document must be a JSON object")])
    if doc.get("schema") != SCHEMA_VERSION:
        errors.append(("$.schema", f"unsupported schema version {doc.get('schema')!r}"))
    intervals_doc = _require(doc, "intervals", "$", errors, list) or []
    transitions_doc = _require(doc, "transitions", "$", errors, list) or []

    intervals = []
    for i, iv in enumerate(intervals_doc):
        loc = f"$.intervals[{i}]"
        t0 = _require(iv, "t_start", loc, errors, (int, float))
        t1 = _require(iv, "t_end", loc, errors, (int, float))
        states = _require(iv, "states", loc, errors, list)
        edges_doc = iv.get("edges", [])
        pi_doc = _require(iv, "pi", loc, errors, dict)
        if None in (t0, t1, states, pi_doc):
            continue
        edges = {}
        for j, e in enumerate(edges_doc):
            eloc = f"{loc}.edges[{j}]"
            x = _require(e, "from", eloc, errors, str)
            y = _require(e, "to", eloc, errors, str)
            sdoc = _require(e, "schedule", eloc, errors, dict)
            if None in (x, y, sdoc):
                continue
            try:
                edges[(x, y)] = schedule_from_dict(sdoc)
            except (ValueError, TypeError) as exc:
                errors.append((eloc + ".schedule", str(exc)))
        pis = {}
        for x, sdoc in pi_doc.items():
            try:
                pis[x] = schedule_from_dict(sdoc)
            except (ValueError, TypeError) as exc:
                errors.append((f"{loc}.pi.{x}", str(exc)))
        try:
            intervals.append(IntervalSpec(float(t0), float(t1),
                                          tuple(states), edges, pis))
        except ValueError as exc:
            errors.append((loc, str(exc)))

    transitions = []
    for i, tr in enumerate(transitions_doc):
        loc = f"$.transitions[{i}]"
        time = _require(tr, "time", loc, errors, (int, float))
        states = _require(tr, "states", loc, errors, list)
        if None in (time, states):
            continue
        transitions.append(SingularTransition(
            float(time), tuple(states),
            collapse_map=tr.get("collapse_map"),
            spawn_map=tr.get("spawn_map")))

    if errors:
        raise ScenarioError(errors)
    try:
        flow = SingularFlow(tuple(intervals), tuple(transitions),
                            name=str(doc.get("name", "scenario")))
    except ValueError as exc:
        raise ScenarioError([("$", str(exc))])

    probes = doc.get("probes", {})
    return flow, probes


def parse_scenario(path) -> tuple:
    """Load, parse and validate; returns (flow, probes, validation report).

    Raises ScenarioError for schema problems and ScenarioValidationError
    when the parsed flow violates the structural conditions.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError([("$", f"invalid JSON: {exc}")])
    flow, probes = document_to_flow(doc)
    report = validate_flow(flow)
    if not report.passed:
        raise ScenarioValidationError(report)
    return flow, probes, report


def save_scenario(flow: SingularFlow, path, probes: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(flow_to_document(flow, probes), fh, indent=2, sort_keys=True)
        fh.write("\n")


def scenario_digest(flow: SingularFlow) -> str:
    """Stable content hash of a flow's canonical document."""
    canon = json.dumps(flow_to_document(flow), sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def probe_vector(probes: dict, kind: str, name: str, states) -> np.ndarray:
    table = probes.get(kind, {})
    if name not in table:
        raise KeyError(f"no {kind[:-1]} probe named {name!r}")
    entry = table[name]
    return np.array([float(entry.get(s, 0.0)) for s in states])
