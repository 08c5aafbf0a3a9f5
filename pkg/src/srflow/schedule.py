"""Singular time-dependent Markov triples.

A flow is a partition 0 = t_0 < t_1 < ... < t_n = T together with, on each
open interval, a fixed vertex set, strictly positive Lipschitz vertex
weights, and per-edge rate schedules that are locally log-Lipschitz and
have limits in [0, +inf] at the interval ends.  At each singular time t_i
the graph structure may change: groups of vertices connected by rates that
blow up collapse to a single vertex (approaching from the left), and a
vertex may spawn a group (the time reversal, approaching from the right).
Collapse and spawn maps are the quotient maps of the equivalence relations
generated by the exploding rates, and the boundary triple at t_i is pinned
down by mass aggregation (vertex weights of a group add up) and by
flux aggregation of the finite cross-group rates.

Divergence conditions are decided symbolically from the schedule kind:
a rate exploding at a singular time must do so non-integrably (pole order
at least one), which is what forces the heat flow to equilibrate on a
collapsing group before the singular time.  The validator additionally
checks the growth conditions needed for the energy form Gamma to be
continuous across a singular time; these are vacuous when the whole graph
collapses to a single point.

Schedule kinds
--------------
constant, affine, soliton_scaled (c / (1 - 2 kappa R (t - t_ref))),
collapse_pole (c / (t_end - t)^order), spawn_pole (c / (t - t_start)^order)
and log_lipschitz_sampled (tabulated, interpolated in log space; no
analytic derivative, hence excluded from curvature checks).  Vertex-weight
schedules are constant, affine or tabulated_linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from srflow.chain import MarkovTriple, two_point_triple
from srflow.report import PASS, VIOLATION, VerificationReport, aggregate

__all__ = [
    "RateSchedule",
    "ConstantSchedule",
    "AffineSchedule",
    "SolitonSchedule",
    "CollapsePoleSchedule",
    "SpawnPoleSchedule",
    "TabulatedLogSchedule",
    "TabulatedLinearSchedule",
    "IntervalSpec",
    "SingularTransition",
    "SingularFlow",
    "eval_at",
    "validate_flow",
    "product_flow",
    "static_flow",
    "soliton_flow",
    "builtin_scenario",
    "BUILTIN_NAMES",
    "schedule_from_dict",
    "schedule_to_dict",
]

_TIME_TOL = 1e-9


# ---------------------------------------------------------------------------
# Rate schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateSchedule:
    """Base class; concrete kinds implement value/derivative/pole data."""

    kind = "abstract"
    analytic = True

    def value(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def pole_at(self, t_edge: float):
        """(order, coefficient) of a blow-up value ~ c/|t_edge - t|^order.

        Order 0 means the limit at t_edge is finite; the coefficient then
        holds that limit.
        """
        raise NotImplementedError

    def limit_at(self, t_edge: float) -> float:
        order, coeff = self.pole_at(t_edge)
        return math.inf if order > 0 else coeff

    def log_lipschitz_bound(self, a: float, b: float, samples: int = 64) -> float:
        """Sampled bound on |d/dt log Q| over the compact subinterval [a, b]."""
        ts = np.linspace(a, b, samples)
        vals = np.array([self.value(t) for t in ts])
        ders = np.array([self.derivative(t) for t in ts])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(ders) / vals
        return float(np.max(ratio))


@dataclass(frozen=True)
class ConstantSchedule(RateSchedule):
    c: float
    kind = "constant"

    def value(self, t):
        return self.c

    def derivative(self, t):
        return 0.0

    def pole_at(self, t_edge):
        return (0.0, self.c)


@dataclass(frozen=True)
class AffineSchedule(RateSchedule):
    a: float
    b: float
    kind = "affine"

    def value(self, t):
        return self.a + self.b * t

    def derivative(self, t):
        return self.b

    def pole_at(self, t_edge):
        return (0.0, self.a + self.b * t_edge)


@dataclass(frozen=True)
class SolitonSchedule(RateSchedule):
    """c * L_t with L_t = 1 / (1 - 2 kappa extra (t - t_ref)).

    For kappa*extra > 0 the value blows up at t_ref + 1/(2 kappa extra)
    like a first-order pole with coefficient c / (2 kappa extra).
    """

    c: float
    kappa: float
    t_ref: float = 0.0
    extra: float = 1.0
    kind = "soliton_scaled"

    @property
    def _slope(self):
        return 2.0 * self.kappa * self.extra

    @property
    def pole_time(self):
        if self._slope > 0.0:
            return self.t_ref + 1.0 / self._slope
        return None

    def value(self, t):
        denom = 1.0 - self._slope * (t - self.t_ref)
        if denom <= 0.0:
            raise ValueError(f"soliton schedule evaluated at/after its blow-up time ({t})")
        return self.c / denom

    def derivative(self, t):
        v = self.value(t)
        return self._slope * v * v / self.c

    def pole_at(self, t_edge):
        tp = self.pole_time
        if tp is not None and abs(t_edge - tp) <= _TIME_TOL * max(1.0, abs(tp)):
            return (1.0, self.c / self._slope)
        return (0.0, self.value(t_edge))


@dataclass(frozen=True)
class CollapsePoleSchedule(RateSchedule):
    """c / (t_end - t)^order for t < t_end."""

    c: float
    t_end: float
    order: float = 1.0
    kind = "collapse_pole"

    def value(self, t):
        dt = self.t_end - t
        if dt <= 0.0:
            raise ValueError(f"collapse_pole schedule evaluated at/after its pole ({t})")
        return self.c / dt ** self.order

    def derivative(self, t):
        return self.order * self.value(t) / (self.t_end - t)

    def pole_at(self, t_edge):
        if abs(t_edge - self.t_end) <= _TIME_TOL * max(1.0, abs(self.t_end)):
            return (self.order, self.c)
        return (0.0, self.value(t_edge))


@dataclass(frozen=True)
class SpawnPoleSchedule(RateSchedule):
    """c / (t - t_start)^order for t > t_start."""

    c: float
    t_start: float
    order: float = 1.0
    kind = "spawn_pole"

    def value(self, t):
        dt = t - self.t_start
        if dt <= 0.0:
            raise ValueError(f"spawn_pole schedule evaluated at/before its pole ({t})")
        return self.c / dt ** self.order

    def derivative(self, t):
        return -self.order * self.value(t) / (t - self.t_start)

    def pole_at(self, t_edge):
        if abs(t_edge - self.t_start) <= _TIME_TOL * max(1.0, abs(self.t_start)):
            return (self.order, self.c)
        return (0.0, self.value(t_edge))


@dataclass(frozen=True)
class TabulatedLogSchedule(RateSchedule):
    """Positive samples interpolated linearly in log space (log-Lipschitz)."""

    times: tuple
    values: tuple
    kind = "log_lipschitz_sampled"
    analytic = False

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ValueError("tabulated schedule needs matching times/values, length >= 2")
        if any(v <= 0.0 for v in self.values):
            raise ValueError("log-tabulated schedule requires positive values")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def value(self, t):
        logs = np.log(np.asarray(self.values))
        return float(np.exp(np.interp(t, self.times, logs)))

    def derivative(self, t):
        # piecewise slope of the log-linear interpolant, times the value
        ts = np.asarray(self.times)
        logs = np.log(np.asarray(self.values))
        idx = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
        slope = (logs[idx + 1] - logs[idx]) / (ts[idx + 1] - ts[idx])
        return float(slope) * self.value(t)

    def pole_at(self, t_edge):
        return (0.0, self.value(t_edge))


@dataclass(frozen=True)
class TabulatedLinearSchedule(RateSchedule):
    """Samples interpolated linearly (Lipschitz); used for vertex weights."""

    times: tuple
    values: tuple
    kind = "tabulated_linear"
    analytic = False

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ValueError("tabulated schedule needs matching times/values, length >= 2")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def value(self, t):
        return float(np.interp(t, self.times, self.values))

    def derivative(self, t):
        ts = np.asarray(self.times)
        vs = np.asarray(self.values)
        idx = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
        return float((vs[idx + 1] - vs[idx]) / (ts[idx + 1] - ts[idx]))

    def pole_at(self, t_edge):
        return (0.0, self.value(t_edge))


_SCHEDULE_KINDS = {
    "constant": ConstantSchedule,
    "affine": AffineSchedule,
    "soliton_scaled": SolitonSchedule,
    "collapse_pole": CollapsePoleSchedule,
    "spawn_pole": SpawnPoleSchedule,
    "log_lipschitz_sampled": TabulatedLogSchedule,
    "tabulated_linear": TabulatedLinearSchedule,
}

_PI_KINDS = ("constant", "affine", "tabulated_linear")


def schedule_to_dict(schedule: RateSchedule) -> dict:
    out = {"kind": schedule.kind}
    for name in schedule.__dataclass_fields__:
        val = getattr(schedule, name)
        out[name] = list(val) if isinstance(val, tuple) else val
    return out


def schedule_from_dict(doc: dict) -> RateSchedule:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    cls = _SCHEDULE_KINDS[kind]
    for name in ("times", "values"):
        if name in doc:
            doc[name] = tuple(doc[name])
    return cls(**doc)


# ---------------------------------------------------------------------------
# Intervals and transitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalSpec:
    """Fixed graph structure on an open time interval."""

    t_start: float
    t_end: float
    states: tuple
    edge_schedules: dict      # (x, y) state-name pairs -> RateSchedule
    pi_schedules: dict        # state name -> schedule

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("interval requires t_start < t_end")
        states = tuple(str(s) for s in self.states)
        object.__setattr__(self, "states", states)
        index = {s: i for i, s in enumerate(states)}
        for (x, y) in self.edge_schedules:
            if x not in index or y not in index or x == y:
                raise ValueError(f"edge ({x},{y}) does not match interval states")
        for x in states:
            if x not in self.pi_schedules:
                raise ValueError(f"missing vertex weight schedule for state {x}")
            if self.pi_schedules[x].kind not in _PI_KINDS:
                raise ValueError(
                    f"vertex weight schedule for {x} must be one of {_PI_KINDS}")
        edges = tuple((index[x], index[y], sched)
                      for (x, y), sched in sorted(self.edge_schedules.items()))
        object.__setattr__(self, "_edges", edges)

    @property
    def n(self) -> int:
        return len(self.states)

    def rates_at(self, t: float) -> np.ndarray:
        n = self.n
        q = np.zeros((n, n))
        for i, j, sched in self._edges:
            q[i, j] = sched.value(t)
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        return q

    def rate_derivatives_at(self, t: float) -> np.ndarray:
        n = self.n
        qd = np.zeros((n, n))
        for i, j, sched in self._edges:
            qd[i, j] = sched.derivative(t)
        return qd

    def pi_at(self, t: float) -> np.ndarray:
        return np.array([self.pi_schedules[s].value(t) for s in self.states])

    def triple_at(self, t: float, validate: bool = False) -> MarkovTriple:
        return MarkovTriple(self.states, self.rates_at(t), self.pi_at(t),
                            _validate=validate)

    def has_analytic_rates(self) -> bool:
        return all(s.analytic for _, _, s in self._edges)

    def edge_limits(self, t_edge: float) -> dict:
        """(x, y) -> limit value in [0, inf] of the rate at an endpoint."""
        return {key: sched.limit_at(t_edge)
                for key, sched in self.edge_schedules.items()}

    def pi_limits(self, t_edge: float) -> dict:
        return {s: self.pi_schedules[s].value(t_edge) for s in self.states}


def _divergence_classes(states, limits) -> dict:
    """Partition states by the graph of edges whose limit is +inf."""
    index = {s: i for i, s in enumerate(states)}
    parent = list(range(len(states)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for (x, y), lim in limits.items():
        if math.isinf(lim):
            a, b = find(index[x]), find(index[y])
            if a != b:
                parent[a] = b
    classes = {}
    for s, i in index.items():
        classes.setdefault(find(i), []).append(s)
    return {min(members): sorted(members) for members in classes.values()}


@dataclass
class SingularTransition:
    """Structure change at one singular time.

    ``collapse_map`` sends states of the preceding interval onto the
    boundary states, ``spawn_map`` sends states of the following interval
    onto the boundary states.  Outer transitions carry only one of the两
    maps.  Declared limits, local equilibrium weights and the boundary
    triple are derived from the adjoining interval schedules when the
    transition is wired into a flow.
    """

    time: float
    states: tuple
    collapse_map: dict | None = None
    spawn_map: dict | None = None

    # derived when the owning flow is constructed
    pi_collapse: dict = field(default_factory=dict)
    pi_spawn: dict = field(default_factory=dict)
    q_collapse: dict = field(default_factory=dict)
    q_spawn: dict = field(default_factory=dict)
    pibar_collapse: dict = field(default_factory=dict)
    pibar_spawn: dict = field(default_factory=dict)
    boundary_pi: np.ndarray | None = None
    boundary_rates: np.ndarray | None = None
    boundary_triple: MarkovTriple | None = None

    def __post_init__(self):
        self.states = tuple(str(s) for s in self.states)
        if self.collapse_map is not None:
            self.collapse_map = {str(k): str(v) for k, v in self.collapse_map.items()}
        if self.spawn_map is not None:
            self.spawn_map = {str(k): str(v) for k, v in self.spawn_map.items()}

    def collapse_classes(self) -> dict:
        out = {z: [] for z in self.states}
        for x, z in sorted(self.collapse_map.items()):
            out[z].append(x)
        return out

    def spawn_classes(self) -> dict:
        out = {z: [] for z in self.states}
        for x, z in sorted(self.spawn_map.items()):
            out[z].append(x)
        return out


def _aggregate_boundary(states, classes, pi_limits, q_limits, issues, label):
    """Boundary weights and rates from one side's declared limits."""
    pi_b = np.array([sum(pi_limits[x] for x in classes[z]) for z in states])
    nz = len(states)
    q_b = np.zeros((nz, nz))
    for a, z in enumerate(states):
        for b, z2 in enumerate(states):
            if a == b:
                continue
            acc = 0.0
            for x in classes[z]:
                for x2 in classes[z2]:
                    lim = q_limits.get((x, x2), 0.0)
                    if math.isinf(lim):
                        issues.append(
                            f"{label}: rate ({x},{x2}) diverges across distinct "
                            f"boundary classes {z},{z2}")
                        lim = 0.0
                    acc += lim * pi_limits[x]
            q_b[a, b] = acc / pi_b[a] if pi_b[a] > 0 else 0.0
    return pi_b, q_b


@dataclass
class SingularFlow:
    """Ordered intervals chained by singular transitions (one per endpoint).

    ``transitions[i]`` sits at the left end of ``intervals[i]``; the final
    transition closes the last interval.  Construction derives the declared
    limits and boundary triples from the schedules; structural
    inconsistencies are collected in ``construction_issues`` and surfaced by
    ``validate_flow`` rather than raised here.
    """

    intervals: tuple
    transitions: tuple
    name: str = "flow"

    def __post_init__(self):
        self.intervals = tuple(self.intervals)
        self.transitions = tuple(self.transitions)
        if len(self.transitions) != len(self.intervals) + 1:
            raise ValueError("need exactly one transition per interval boundary")
        issues = []
        for i, interval in enumerate(self.intervals):
            if abs(interval.t_start - self.transitions[i].time) > _TIME_TOL:
                issues.append(f"interval {i} start does not match transition time")
            if abs(interval.t_end - self.transitions[i + 1].time) > _TIME_TOL:
                issues.append(f"interval {i} end does not match transition time")
        for i, tr in enumerate(self.transitions):
            left = self.intervals[i - 1] if i > 0 else None
            right = self.intervals[i] if i < len(self.intervals) else None
            self._derive_transition(i, tr, left, right, issues)
        self.construction_issues = issues

    # -- derived transition data -------------------------------------------

    def _derive_transition(self, i, tr, left, right, issues):
        label = f"transition {i} (t={tr.time:g})"
        pi_from = {}
        if left is not None:
            if tr.collapse_map is None:
                issues.append(f"{label}: missing collapse map from preceding interval")
                return
            if set(tr.collapse_map) != set(left.states):
                issues.append(f"{label}: collapse map domain != preceding states")
                return
            if set(tr.collapse_map.values()) != set(tr.states):
                issues.append(f"{label}: collapse map is not surjective")
            tr.pi_collapse = left.pi_limits(tr.time)
            tr.q_collapse = left.edge_limits(tr.time)
            classes = tr.collapse_classes()
            derived = _divergence_classes(left.states, tr.q_collapse)
            if sorted(map(sorted, derived.values())) != sorted(map(sorted, classes.values())):
                issues.append(
                    f"{label}: collapse map does not match the equivalence classes "
                    f"of exploding rates")
            tr.pibar_collapse = {
                z: _normalized(tr.pi_collapse, members)
                for z, members in classes.items()}
            pi_c, q_c = _aggregate_boundary(tr.states, classes, tr.pi_collapse,
                                            tr.q_collapse, issues, label)
            pi_from["collapse"] = (pi_c, q_c)
        if right is not None:
            if tr.spawn_map is None:
                issues.append(f"{label}: missing spawn map into following interval")
                return
            if set(tr.spawn_map) != set(right.states):
                issues.append(f"{label}: spawn map domain != following states")
                return
            if set(tr.spawn_map.values()) != set(tr.states):
                issues.append(f"{label}: spawn map is not surjective")
            tr.pi_spawn = right.pi_limits(tr.time)
            tr.q_spawn = right.edge_limits(tr.time)
            classes = tr.spawn_classes()
            derived = _divergence_classes(right.states, tr.q_spawn)
            if sorted(map(sorted, derived.values())) != sorted(map(sorted, classes.values())):
                issues.append(
                    f"{label}: spawn map does not match the equivalence classes "
                    f"of exploding rates")
            tr.pibar_spawn = {
                z: _normalized(tr.pi_spawn, members)
                for z, members in classes.items()}
            pi_s, q_s = _aggregate_boundary(tr.states, classes, tr.pi_spawn,
                                            tr.q_spawn, issues, label)
            pi_from["spawn"] = (pi_s, q_s)

        if not pi_from:
            return
        if len(pi_from) == 2:
            pi_c, q_c = pi_from["collapse"]
            pi_s, q_s = pi_from["spawn"]
            if np.abs(pi_c - pi_s).max() > 1e-8 * max(1.0, np.abs(pi_c).max()):
                issues.append(
                    f"{label}: boundary vertex weights from the two sides disagree "
                    f"(mass aggregation mismatch)")
            if np.abs(q_c - q_s).max() > 1e-8 * max(1.0, np.abs(q_c).max()):
                issues.append(
                    f"{label}: boundary rates from the two sides disagree "
                    f"(rate aggregation mismatch)")
        pi_b, q_b = next(iter(pi_from.values())) if len(pi_from) == 1 else pi_from["collapse"]
        tr.boundary_pi = pi_b
        tr.boundary_rates = q_b
        try:
            tr.boundary_triple = MarkovTriple(tr.states, q_b, pi_b)
        except ValueError as exc:
            issues.append(f"{label}: boundary triple invalid ({exc})")
            tr.boundary_triple = None

    # -- time lookup ---------------------------------------------------------

    @property
    def t_start(self) -> float:
        return self.transitions[0].time

    @property
    def t_end(self) -> float:
        return self.transitions[-1].time

    @property
    def singular_times(self) -> tuple:
        return tuple(tr.time for tr in self.transitions[1:-1])

    def locate(self, t: float):
        """('transition', i) at singular/outer times, else ('interval', i)."""
        if t < self.t_start - _TIME_TOL or t > self.t_end + _TIME_TOL:
            raise ValueError(f"time {t} outside flow range [{self.t_start}, {self.t_end}]")
        for i, tr in enumerate(self.transitions):
            if abs(t - tr.time) <= _TIME_TOL * max(1.0, abs(tr.time)):
                return ("transition", i)
        for i, interval in enumerate(self.intervals):
            if interval.t_start < t < interval.t_end:
                return ("interval", i)
        raise ValueError(f"time {t} could not be located in the flow partition")

    def states_at(self, t: float) -> tuple:
        kind, i = self.locate(t)
        return self.transitions[i].states if kind == "transition" else self.intervals[i].states

    def has_analytic_rates(self) -> bool:
        return all(iv.has_analytic_rates() for iv in self.intervals)


def _normalized(weights: dict, members) -> dict:
    total = sum(weights[m] for m in members)
    return {m: weights[m] / total for m in members}


def eval_at(flow: SingularFlow, t: float):
    """Triple and analytic rate-derivative table at time t.

    At a singular time the boundary triple is returned and the derivative
    table is None (rates are not differentiable there).
    """
    kind, i = flow.locate(t)
    if kind == "transition":
        tr = flow.transitions[i]
        if tr.boundary_triple is None:
            raise ValueError(f"boundary triple at t={t} is not available (invalid flow)")
        return tr.boundary_triple, None
    interval = flow.intervals[i]
    return interval.triple_at(t), interval.rate_derivatives_at(t)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check(name, ok, detail=None, margin=None):
    return VerificationReport(
        criterion=name,
        verdict=PASS if ok else VIOLATION,
        margin=margin,
        witness={} if ok else {"detail": detail or name},
    )


def validate_flow(flow: SingularFlow, samples: int = 25, tol: float = 1e-8) -> VerificationReport:
    """Check the structural conditions of a singular flow.

    Per interval: positivity and Lipschitz sanity of the vertex weights,
    total mass one, detailed balance and irreducibility at sampled interior
    times.  Per transition: quotient-map consistency with the exploding-rate
    classes, two-sided agreement of the aggregated boundary weights and
    rates, validity of the boundary triple, the non-integrable-divergence
    requirement for exploding rates, and the symbolic growth conditions
    (collapse: minimal diverging rate must dominate, 2 c_min > max pole
    order, vacuous when the boundary graph is a single vertex; spawn: pole
    order below two).  Failures are report entries, never exceptions.
    """
    checks = []
    for issue in flow.construction_issues:
        checks.append(_check(f"structure: {issue}", False, issue))

    for idx, interval in enumerate(flow.intervals):
        length = interval.t_end - interval.t_start
        ts = interval.t_start + length * np.linspace(0.02, 0.98, samples)
        ok_db, ok_pi, ok_sum, ok_irr, ok_pos = True, True, True, True, True
        worst_db = 0.0
        for t in ts:
            q = interval.rates_at(t)
            pi = interval.pi_at(t)
            if np.any(pi <= 0.0):
                ok_pi = False
            if abs(pi.sum() - 1.0) > 1e-8:
                ok_sum = False
            off = q.copy()
            np.fill_diagonal(off, 0.0)
            if np.any(off < 0.0):
                ok_pos = False
            flux = q * pi[:, None]
            scale = max(np.abs(flux).max(), 1e-30)
            rel = np.abs(flux - flux.T).max() / scale
            worst_db = max(worst_db, rel)
            if rel > tol:
                ok_db = False
            try:
                MarkovTriple(interval.states, q, pi)
            except ValueError:
                ok_irr = False
        label = f"interval {idx} ({interval.t_start:g},{interval.t_end:g})"
        checks.append(_check(f"{label}: vertex weights strictly positive", ok_pi))
        checks.append(_check(f"{label}: vertex weights sum to one", ok_sum))
        checks.append(_check(f"{label}: rates nonnegative", ok_pos))
        checks.append(_check(f"{label}: detailed balance at sampled times", ok_db,
                             margin=-worst_db))
        checks.append(_check(f"{label}: irreducible at sampled times", ok_irr))

    for i, tr in enumerate(flow.transitions):
        label = f"transition {i} (t={tr.time:g})"
        sides = []
        if i > 0:
            sides.append(("collapse", flow.intervals[i - 1], tr.collapse_map,
                          tr.q_collapse, tr.collapse_classes() if tr.collapse_map else {}))
        if i < len(flow.intervals):
            sides.append(("spawn", flow.intervals[i], tr.spawn_map,
                          tr.q_spawn, tr.spawn_classes() if tr.spawn_map else {}))
        for side, interval, mapping, q_limits, classes in sides:
            if mapping is None:
                continue
            # non-integrable divergence for every exploding rate
            for (x, y), lim in sorted(q_limits.items()):
                if math.isinf(lim):
                    sched = interval.edge_schedules[(x, y)]
                    order, _ = sched.pole_at(tr.time)
                    checks.append(_check(
                        f"{label}: accumulated rate of ({x},{y}) diverges "
                        f"(pole order {order:g} >= 1)",
                        order >= 1.0,
                        detail="exploding rate with integrable accumulation "
                               "(finite expected number of jumps before the "
                               "singular time)"))
            # growth conditions (symbolic, per class)
            for z, members in sorted(classes.items()):
                div_pairs = [(x, y) for x in members for y in members
                             if x != y and math.isinf(q_limits.get((x, y), 0.0))]
                if not div_pairs:
                    continue
                poles = [interval.edge_schedules[p].pole_at(tr.time) for p in div_pairs]
                orders = [o for o, _ in poles]
                o_min, o_max = min(orders), max(orders)
                if side == "collapse":
                    if len(tr.states) <= 1:
                        checks.append(_check(
                            f"{label}: collapse growth condition vacuous for class "
                            f"{z} (boundary graph is a single vertex)", True))
                        continue
                    c_min = min(c for o, c in poles if o == o_min)
                    ok = (o_min > 1.0) or (2.0 * c_min > o_max)
                    checks.append(_check(
                        f"{label}: collapse growth condition for class {z} "
                        f"(max rate times squared equilibration decay vanishes)",
                        ok,
                        detail=f"min pole order {o_min:g}, min coefficient {c_min:g}, "
                               f"max pole order {o_max:g}: decay exponent "
                               f"{2 * c_min - o_max:g} <= 0"))
                else:
                    ok = o_max < 2.0
                    checks.append(_check(
                        f"{label}: spawn growth condition for class {z} "
                        f"(squared time damps the exploding rate)",
                        ok,
                        detail=f"max pole order {o_max:g} >= 2"))
    return aggregate(f"flow-validation: {flow.name}", checks)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def static_flow(triple: MarkovTriple, t_end: float = 1.0, t_start: float = 0.0,
                name: str = "static") -> SingularFlow:
    """Time-constant flow as a single interval with identity outer maps."""
    edges = {}
    for i, x in enumerate(triple.states):
        for j, y in enumerate(triple.states):
            if i != j and triple.rates[i, j] > 0.0:
                edges[(x, y)] = ConstantSchedule(float(triple.rates[i, j]))
    pis = {x: ConstantSchedule(float(triple.pi[i])) for i, x in enumerate(triple.states)}
    interval = IntervalSpec(t_start, t_end, triple.states, edges, pis)
    ident = {x: x for x in triple.states}
    return SingularFlow(
        intervals=(interval,),
        transitions=(
            SingularTransition(t_start, triple.states, spawn_map=dict(ident)),
            SingularTransition(t_end, triple.states, collapse_map=dict(ident)),
        ),
        name=name,
    )


def soliton_flow(triple: MarkovTriple, kappa: float, extra: float = 1.0,
                 horizon: float | None = None, collapse_label: str = "z",
                 name: str = "soliton") -> SingularFlow:
    """Rates scaled by 1/(1 - 2 kappa extra t); vertex weights frozen.

    For kappa*extra > 0 every edge weight blows up at t1 = 1/(2 kappa extra)
    and the whole (connected) graph collapses to a single vertex, after
    which the flow continues as the static one-point chain up to the
    horizon (default 1.5 t1).
    """
    slope = 2.0 * kappa * extra
    edges = {}
    for i, x in enumerate(triple.states):
        for j, y in enumerate(triple.states):
            if i != j and triple.rates[i, j] > 0.0:
                edges[(x, y)] = SolitonSchedule(float(triple.rates[i, j]), kappa,
                                                t_ref=0.0, extra=extra)
    pis = {x: ConstantSchedule(float(triple.pi[i])) for i, x in enumerate(triple.states)}
    ident = {x: x for x in triple.states}
    if slope <= 0.0:
        t_end = 1.0 if horizon is None else horizon
        interval = IntervalSpec(0.0, t_end, triple.states, edges, pis)
        return SingularFlow(
            intervals=(interval,),
            transitions=(
                SingularTransition(0.0, triple.states, spawn_map=dict(ident)),
                SingularTransition(t_end, triple.states, collapse_map=dict(ident)),
            ),
            name=name,
        )
    t1 = 1.0 / slope
    t_end = 1.5 * t1 if horizon is None else horizon
    if t_end <= t1:
        raise ValueError("horizon must lie beyond the collapse time")
    first = IntervalSpec(0.0, t1, triple.states, edges, pis)
    point = (collapse_label,)
    second = IntervalSpec(t1, t_end, point, {}, {collapse_label: ConstantSchedule(1.0)})
    return SingularFlow(
        intervals=(first, second),
        transitions=(
            SingularTransition(0.0, triple.states, spawn_map=dict(ident)),
            SingularTransition(t1, point,
                               collapse_map={x: collapse_label for x in triple.states},
                               spawn_map={collapse_label: collapse_label}),
            SingularTransition(t_end, point, collapse_map={collapse_label: collapse_label}),
        ),
        name=name,
    )


def _combine_pi(sa: RateSchedule, sb: RateSchedule):
    """Product of two vertex-weight schedules (at most one non-constant)."""
    if isinstance(sa, ConstantSchedule):
        if isinstance(sb, ConstantSchedule):
            return ConstantSchedule(sa.c * sb.c)
        if isinstance(sb, AffineSchedule):
            return AffineSchedule(sa.c * sb.a, sa.c * sb.b)
        if isinstance(sb, TabulatedLinearSchedule):
            return TabulatedLinearSchedule(sb.times, tuple(sa.c * v for v in sb.values))
    if isinstance(sb, ConstantSchedule):
        return _combine_pi(sb, sa)
    raise NotImplementedError(
        "product flows require at least one factor with constant vertex weights")


def _as_flow(obj, t_start, t_end):
    if isinstance(obj, SingularFlow):
        return obj
    if isinstance(obj, MarkovTriple):
        return static_flow(obj, t_end=t_end, t_start=t_start)
    raise TypeError("product factors must be SingularFlow or MarkovTriple")


def product_flow(factor_a, factor_b, sep: str = "|", name: str = "product") -> SingularFlow:
    """Independent product of two flows (or static triples) on a common range.

    States are pairs, jumps move along one factor at a time with that
    factor's rate schedule, and vertex weights multiply.  The merged
    partition is the union of the factors' singular times; collapse and
    spawn maps act factorwise (identity on the factor that is not singular
    at that time).
    """
    if isinstance(factor_a, SingularFlow) or isinstance(factor_b, SingularFlow):
        ref = factor_a if isinstance(factor_a, SingularFlow) else factor_b
        t0, t1 = ref.t_start, ref.t_end
    else:
        t0, t1 = 0.0, 1.0
    fa = _as_flow(factor_a, t0, t1)
    fb = _as_flow(factor_b, t0, t1)
    if abs(fa.t_start - fb.t_start) > _TIME_TOL or abs(fa.t_end - fb.t_end) > _TIME_TOL:
        raise ValueError("product factors must share the same time range")

    cuts = sorted({tr.time for tr in fa.transitions} | {tr.time for tr in fb.transitions})
    merged = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        ia = fa.intervals[fa.locate(mid)[1]]
        ib = fb.intervals[fb.locate(mid)[1]]
        states = tuple(f"{x}{sep}{y}" for x in ia.states for y in ib.states)
        edges = {}
        for (x, x2), sched in ia.edge_schedules.items():
            for y in ib.states:
                edges[(f"{x}{sep}{y}", f"{x2}{sep}{y}")] = sched
        for (y, y2), sched in ib.edge_schedules.items():
            for x in ia.states:
                edges[(f"{x}{sep}{y}", f"{x}{sep}{y2}")] = sched
        pis = {f"{x}{sep}{y}": _combine_pi(ia.pi_schedules[x], ib.pi_schedules[y])
               for x in ia.states for y in ib.states}
        merged.append(IntervalSpec(lo, hi, states, edges, pis))

    def factor_maps(flow, t, side):
        kind, i = flow.locate(t)
        if kind == "transition":
            tr = flow.transitions[i]
            mapping = tr.collapse_map if side == "collapse" else tr.spawn_map
            return tr.states, mapping
        states = flow.intervals[i].states
        return states, {x: x for x in states}

    transitions = []
    for k, t in enumerate(cuts):
        side = "collapse" if k > 0 else "spawn"
        sa, _ = factor_maps(fa, t, side)
        sb, _ = factor_maps(fb, t, side)
        states = tuple(f"{x}{sep}{y}" for x in sa for y in sb)
        collapse = spawn = None
        if k > 0:
            _, map_a = factor_maps(fa, t, "collapse")
            _, map_b = factor_maps(fb, t, "collapse")
            collapse = {}
            for x in fa.intervals[fa.locate(0.5 * (cuts[k - 1] + t))[1]].states:
                for y in fb.intervals[fb.locate(0.5 * (cuts[k - 1] + t))[1]].states:
                    collapse[f"{x}{sep}{y}"] = f"{map_a[x]}{sep}{map_b[y]}"
        if k < len(cuts) - 1:
            _, smap_a = factor_maps(fa, t, "spawn")
            _, smap_b = factor_maps(fb, t, "spawn")
            spawn = {}
            for x in fa.intervals[fa.locate(0.5 * (t + cuts[k + 1]))[1]].states:
                for y in fb.intervals[fb.locate(0.5 * (t + cuts[k + 1]))[1]].states:
                    spawn[f"{x}{sep}{y}"] = f"{smap_a[x]}{sep}{smap_b[y]}"
        transitions.append(SingularTransition(t, states, collapse_map=collapse,
                                              spawn_map=spawn))
    return SingularFlow(tuple(merged), tuple(transitions), name=name)


# ---------------------------------------------------------------------------
# Built-in scenarios
# ---------------------------------------------------------------------------

def _builtin_static(p: float = 1.0, t_end: float = 1.0) -> SingularFlow:
    return static_flow(two_point_triple(p), t_end=t_end, name="static")


def _builtin_two_point_soliton(p0: float = 1.0, horizon: float | None = None) -> SingularFlow:
    # optimal two-point shrinker: rate p0/(1 - 4 p0 t), collapse at 1/(4 p0)
    return soliton_flow(two_point_triple(p0), kappa=2.0 * p0, horizon=horizon,
                        name="two_point_soliton")


def _builtin_supercritical(p0: float = 1.0, horizon: float | None = None) -> SingularFlow:
    # rate p0/(1 - 5 p0 t): shrinks faster than the optimal curvature allows
    return soliton_flow(two_point_triple(p0), kappa=2.5 * p0, horizon=horizon,
                        name="supercritical_two_point")


def _builtin_collapse_product(kappa: float = 1.0, p_y: float = 1.0,
                              p_z: float | None = None,
                              horizon: float | None = None) -> SingularFlow:
    """Static two-point factor times a shrinking two-point factor.

    The shrinking factor has rate p_z/(1 - 2 kappa t) with p_z default
    2 kappa, collapsing at t1 = 1/(2 kappa); afterwards the product is the
    static factor alone (times a point).
    """
    if kappa <= 0.0:
        raise ValueError("collapse_product needs kappa > 0")
    p_z = 2.0 * kappa if p_z is None else p_z
    t1 = 1.0 / (2.0 * kappa)
    t_end = 1.5 * t1 if horizon is None else horizon
    y = two_point_triple(p_y, states=("y0", "y1"))
    z = two_point_triple(p_z, states=("z0", "z1"))
    zflow = soliton_flow(z, kappa=kappa, horizon=t_end, collapse_label="zc")
    flow = product_flow(static_flow(y, t_end=t_end), zflow, name="collapse_product")
    return flow


def _builtin_explosion_product(kappa: float = -1.0, p_y: float = 1.0,
                               p_z: float = 1.0, t1: float = 0.25,
                               horizon: float | None = None) -> SingularFlow:
    """Static factor until t1, then each vertex spawns an expanding factor.

    The new factor carries rates p_z scaled by -1/(2 kappa (t - t1)) with
    kappa < 0, a first-order spawn pole.
    """
    if kappa >= 0.0:
        raise ValueError("explosion_product needs kappa < 0")
    t_end = t1 + 1.0 if horizon is None else horizon
    ys = ("y0", "y1")
    zs = ("z0", "z1")
    coeff = -p_z / (2.0 * kappa)
    first = IntervalSpec(
        0.0, t1, ys,
        {("y0", "y1"): ConstantSchedule(p_y), ("y1", "y0"): ConstantSchedule(p_y)},
        {s: ConstantSchedule(0.5) for s in ys})
    prod_states = tuple(f"{x}|{z}" for x in ys for z in zs)
    edges = {}
    for x in ys:
        edges[(f"{x}|z0", f"{x}|z1")] = SpawnPoleSchedule(coeff, t1)
        edges[(f"{x}|z1", f"{x}|z0")] = SpawnPoleSchedule(coeff, t1)
    for z in zs:
        edges[(f"y0|{z}", f"y1|{z}")] = ConstantSchedule(p_y)
        edges[(f"y1|{z}", f"y0|{z}")] = ConstantSchedule(p_y)
    second = IntervalSpec(t1, t_end, prod_states, edges,
                          {s: ConstantSchedule(0.25) for s in prod_states})
    return SingularFlow(
        intervals=(first, second),
        transitions=(
            SingularTransition(0.0, ys, spawn_map={x: x for x in ys}),
            SingularTransition(t1, ys,
                               collapse_map={x: x for x in ys},
                               spawn_map={f"{x}|{z}": x for x in ys for z in zs}),
            SingularTransition(t_end, prod_states,
                               collapse_map={s: s for s in prod_states}),
        ),
        name="explosion_product",
    )


def _builtin_toy_singular(t1: float = 0.5, t2: float | None = None) -> SingularFlow:
    """Three vertices collapsing to one, then another vertex spawning two.

    A triangle of rates 1/(t1 - t) collapses onto a single vertex v at t1
    while a fourth vertex w stays; after t1, w splits into two vertices
    tied by a rate 1/(t - t1).  Not a curvature example; exercises both
    singular mechanisms for the heat flow.
    """
    t2 = t1 + 0.5 if t2 is None else t2
    tri = ("x1", "x2", "x3")
    first_states = tri + ("w",)
    edges = {}
    for a in tri:
        for b in tri:
            if a != b:
                edges[(a, b)] = CollapsePoleSchedule(1.0, t1)
        edges[(a, "w")] = ConstantSchedule(1.0)
        edges[("w", a)] = ConstantSchedule(0.5)
    pis = {a: ConstantSchedule(0.2) for a in tri}
    pis["w"] = ConstantSchedule(0.4)
    first = IntervalSpec(0.0, t1, first_states, edges, pis)

    mid_states = ("v", "w")
    second_states = ("v", "w1", "w2")
    edges2 = {
        ("w1", "w2"): SpawnPoleSchedule(1.0, t1),
        ("w2", "w1"): SpawnPoleSchedule(1.0, t1),
        ("v", "w1"): ConstantSchedule(0.5),
        ("v", "w2"): ConstantSchedule(0.5),
        ("w1", "v"): ConstantSchedule(1.5),
        ("w2", "v"): ConstantSchedule(1.5),
    }
    pis2 = {"v": ConstantSchedule(0.6), "w1": ConstantSchedule(0.2),
            "w2": ConstantSchedule(0.2)}
    second = IntervalSpec(t1, t2, second_states, edges2, pis2)
    return SingularFlow(
        intervals=(first, second),
        transitions=(
            SingularTransition(0.0, first_states, spawn_map={s: s for s in first_states}),
            SingularTransition(t1, mid_states,
                               collapse_map={"x1": "v", "x2": "v", "x3": "v", "w": "w"},
                               spawn_map={"v": "v", "w1": "w", "w2": "w"}),
            SingularTransition(t2, second_states,
                               collapse_map={s: s for s in second_states}),
        ),
        name="toy_singular",
    )


def _builtin_soliton(p: float = 1.0, kappa: float = 1.0, extra: float = 1.0,
                     horizon: float | None = None) -> SingularFlow:
    return soliton_flow(two_point_triple(p), kappa=kappa, extra=extra,
                        horizon=horizon, name="soliton")


_BUILTINS = {
    "static": _builtin_static,
    "two_point_soliton": _builtin_two_point_soliton,
    "supercritical_two_point": _builtin_supercritical,
    "collapse_product": _builtin_collapse_product,
    "explosion_product": _builtin_explosion_product,
    "toy_singular": _builtin_toy_singular,
    "soliton": _builtin_soliton,
}

BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin_scenario(name: str, **params) -> SingularFlow:
    """Construct and validate one of the built-in flows by name."""
    if name not in _BUILTINS:
        raise ValueError(f"unknown scenario {name!r}; known: {', '.join(BUILTIN_NAMES)}")
    flow = _BUILTINS[name](**params)
    report = validate_flow(flow)
    if not report.passed:
        details = "; ".join(r.criterion for r in report.failures())
        raise ValueError(f"builtin scenario {name!r} failed validation: {details}")
    return flow
