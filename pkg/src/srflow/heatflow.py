"""Heat propagator on functions and dual propagator on measures.

Within an interval of constant graph structure, the forward equation
d psi/dt = L_t psi and the backward (dual) equation d sigma/ds =
-L_t^* sigma are integrated with an adaptive high-order Runge-Kutta pair.
At a singular time the solution is continued by the projection rules that
the exact solution satisfies in the limit:

  forward,  collapse: the collapsing group has equilibrated, the boundary
            value is the local-equilibrium-weighted average of the group;
  forward,  spawn:    the boundary value is copied to every spawned vertex;
  backward, collapse: mass on a boundary vertex splits over the collapsing
            group proportionally to the local equilibrium weights;
  backward, spawn:    masses of a spawn group add up on the boundary vertex.

Since rates blow up at singular times, integration stops a small epsilon
before the singularity (and restarts a small epsilon after it when the
adjacent rates diverge); both the epsilon and the measured residual
disequilibrium of each projection are recorded in the solver diagnostics.
The collapse average and the measure split use the same weight matrix
(transposed), and the spawn copy and the measure sum likewise, so the two
propagators remain exactly adjoint up to the ODE tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from srflow.schedule import IntervalSpec, SingularFlow, SingularTransition

__all__ = ["HeatSolution", "propagate", "propagate_dual", "singular_transition_apply"]

FORWARD = "forward-on-functions"
BACKWARD = "backward-on-measures"


def _transition_matrices(flow: SingularFlow, i: int):
    """(collapse_avg, spawn_copy) for transition i, cached on the transition."""
    tr = flow.transitions[i]
    if getattr(tr, "_proj_cache", None) is not None:
        return tr._proj_cache
    avg = None
    copy = None
    if i > 0:
        prev_states = flow.intervals[i - 1].states
        avg = np.zeros((len(tr.states), len(prev_states)))
        for z_idx, z in enumerate(tr.states):
            for x, w in tr.pibar_collapse.get(z, {}).items():
                avg[z_idx, prev_states.index(x)] = w
    if i < len(flow.intervals):
        next_states = flow.intervals[i].states
        copy = np.zeros((len(next_states), len(tr.states)))
        for x_idx, x in enumerate(next_states):
            copy[x_idx, tr.states.index(tr.spawn_map[x])] = 1.0
    tr._proj_cache = (avg, copy)
    return avg, copy


def singular_transition_apply(transition: SingularTransition, state: np.ndarray,
                              direction: str, side: str,
                              flow: SingularFlow | None = None,
                              index: int | None = None) -> np.ndarray:
    """Apply one projection/extension rule of a singular transition.

    direction is "function" or "measure", side is "collapse" or "spawn".
    Functions average over a collapsing group (local-equilibrium weights)
    and copy onto a spawned group; measures split by the same weights and
    sum over a spawned group.  Linear in the state.

    Standalone use (without a flow) builds the matrices from the
    transition's derived data; inside the propagators the flow caches them.
    """
    if flow is not None and index is not None:
        avg, copy = _transition_matrices(flow, index)
    else:
        avg, copy = _standalone_matrices(transition)
    state = np.asarray(state, dtype=float)
    if direction == "function" and side == "collapse":
        mat = avg
    elif direction == "function" and side == "spawn":
        mat = copy
    elif direction == "measure" and side == "collapse":
        mat = avg.T if avg is not None else None
    elif direction == "measure" and side == "spawn":
        mat = copy.T if copy is not None else None
    else:
        raise ValueError(f"unknown direction/side combination ({direction}, {side})")
    if mat is None:
        raise ValueError(f"transition has no {side} side")
    if state.shape != (mat.shape[1],):
        raise ValueError(
            f"state defined on the wrong vertex set: expected length {mat.shape[1]}, "
            f"got {state.shape}")
    return mat @ state


def _standalone_matrices(tr: SingularTransition):
    avg = None
    copy = None
    if tr.collapse_map is not None and tr.pibar_collapse:
        prev_states = sorted(tr.collapse_map)
        avg = np.zeros((len(tr.states), len(prev_states)))
        for z_idx, z in enumerate(tr.states):
            for x, w in tr.pibar_collapse.get(z, {}).items():
                avg[z_idx, prev_states.index(x)] = w
    if tr.spawn_map is not None:
        next_states = sorted(tr.spawn_map)
        copy = np.zeros((len(next_states), len(tr.states)))
        for x_idx, x in enumerate(next_states):
            copy[x_idx, tr.states.index(tr.spawn_map[x])] = 1.0
    return avg, copy


@dataclass
class HeatSolution:
    """Space-time solution produced by one of the propagators.

    ``segments`` holds per traversed interval a (interval_index, times,
    values) triple with times ascending and values of shape (len(times),
    n_states); ``boundary_values`` maps transition indices to the state on
    the boundary vertex set.  ``final_values`` lives on the vertex set at
    the requested end (forward) resp. start (backward) time.
    """

    flow: SingularFlow
    direction: str
    time_from: float
    time_to: float
    segments: list = field(default_factory=list)
    boundary_values: dict = field(default_factory=dict)
    final_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def values_at(self, time: float) -> np.ndarray:
        """Sampled solution at a stored time (grid interpolation between)."""
        kind, i = self.flow.locate(time)
        if kind == "transition" and i in self.boundary_values:
            return self.boundary_values[i]
        for idx, ts, ys in self.segments:
            if ts[0] - 1e-12 <= time <= ts[-1] + 1e-12:
                out = np.array([np.interp(time, ts, ys[:, k])
                                for k in range(ys.shape[1])])
                return out
        raise ValueError(f"time {time} not covered by this solution")

    def states_at(self, time: float) -> tuple:
        return self.flow.states_at(time)


def _interval_eps(interval: IntervalSpec, eps_rel: float) -> float:
    return max(eps_rel * (interval.t_end - interval.t_start), 1e-13)


def _diverges(interval: IntervalSpec, t_edge: float) -> bool:
    return any(np.isinf(v) for v in interval.edge_limits(t_edge).values())


def _integrate(interval: IntervalSpec, sign: str, t_from: float, t_to: float,
               y0: np.ndarray, rtol: float, atol: float, grid: int, diag: dict):
    """Integrate the (dual) heat equation on [t_from, t_to] within one interval."""
    if sign == "forward":
        def rhs(t, y):
            return interval.rates_at(t) @ y
    else:
        def rhs(t, y):
            return -(interval.rates_at(t).T @ y)
    if t_from == t_to:
        ts = np.array([t_from])
        return ts, y0[None, :].copy(), y0.copy()
    t_eval = np.linspace(t_from, t_to, max(2, grid))
    sol = solve_ivp(rhs, (t_from, t_to), y0, method="DOP853", rtol=rtol, atol=atol,
                    t_eval=t_eval, dense_output=False)
    if not sol.success:
        raise RuntimeError(f"heat integration failed on [{t_from}, {t_to}]: {sol.message}")
    diag["steps"] = diag.get("steps", 0) + sol.nfev
    ts = sol.t
    ys = sol.y.T
    if sign == "backward":
        ts = ts[::-1]
        ys = ys[::-1]
    return ts, ys, sol.y[:, -1].copy()


def _class_spread(tr: SingularTransition, values: np.ndarray, states: tuple,
                  side: str, densities: np.ndarray | None = None) -> float:
    """Largest within-class spread at a projection point (equilibration residual)."""
    classes = tr.collapse_classes() if side == "collapse" else tr.spawn_classes()
    ref = values if densities is None else densities
    worst = 0.0
    for members in classes.values():
        if len(members) > 1:
            vals = [ref[states.index(x)] for x in members]
            worst = max(worst, max(vals) - min(vals))
    return worst


def propagate(flow: SingularFlow, s: float, t: float, psi: np.ndarray, *,
              grid: int = 256, rtol: float = 1e-11, atol: float = 1e-14,
              eps_rel: float = 1e-9) -> HeatSolution:
    """Forward propagator on functions from time s to time t >= s.

    Preserves constants, obeys the maximum principle, and is continuous
    through singular times: a collapsing group is averaged with the local
    equilibrium weights, a spawning vertex copies its value to the group.
    """
    if not flow.t_start - 1e-12 <= s <= t <= flow.t_end + 1e-12:
        raise ValueError("need flow start <= s <= t <= flow end")
    sol = HeatSolution(flow, FORWARD, s, t, diagnostics={"eps": {}, "projection_residual": {}})
    psi = np.asarray(psi, dtype=float).copy()
    kind, pos = flow.locate(s)

    if kind == "transition":
        tr = flow.transitions[pos]
        if psi.shape != (len(tr.states),):
            raise ValueError("initial function has wrong length for the start vertex set")
        sol.boundary_values[pos] = psi.copy()
        if t <= s + 1e-15 * max(1.0, abs(s)) or pos == len(flow.intervals):
            sol.final_values = psi.copy()
            return sol
        psi = singular_transition_apply(tr, psi, "function", "spawn", flow, pos)
        interval_idx = pos
        cur = flow.transitions[pos].time
        if _diverges(flow.intervals[pos], cur):
            eps = _interval_eps(flow.intervals[pos], eps_rel)
            cur = cur + eps
            sol.diagnostics["eps"][f"{pos}:spawn"] = eps
    else:
        interval_idx = pos
        if psi.shape != (flow.intervals[pos].n,):
            raise ValueError("initial function has wrong length for the start vertex set")
        cur = s

    while True:
        interval = flow.intervals[interval_idx]
        tol_end = 1e-9 * max(1.0, abs(interval.t_end))
        ends_here = t < interval.t_end - tol_end
        if ends_here:
            target = t
        else:
            target = interval.t_end
            if _diverges(interval, interval.t_end):
                eps = _interval_eps(interval, eps_rel)
                target = interval.t_end - eps
                sol.diagnostics["eps"][f"{interval_idx + 1}:collapse"] = eps
        target = max(target, cur)
        ts, ys, psi = _integrate(interval, "forward", cur, target, psi,
                                 rtol, atol, grid, sol.diagnostics)
        sol.segments.append((interval_idx, ts, ys))
        if ends_here:
            sol.final_values = psi
            return sol
        tr_idx = interval_idx + 1
        tr = flow.transitions[tr_idx]
        sol.diagnostics["projection_residual"][tr_idx] = _class_spread(
            tr, psi, interval.states, "collapse")
        psi = singular_transition_apply(tr, psi, "function", "collapse", flow, tr_idx)
        sol.boundary_values[tr_idx] = psi.copy()
        if abs(t - tr.time) <= tol_end or tr_idx == len(flow.intervals):
            sol.final_values = psi
            return sol
        psi = singular_transition_apply(tr, psi, "function", "spawn", flow, tr_idx)
        interval_idx = tr_idx
        cur = tr.time
        if _diverges(flow.intervals[interval_idx], cur):
            eps = _interval_eps(flow.intervals[interval_idx], eps_rel)
            cur = cur + eps
            sol.diagnostics["eps"][f"{tr_idx}:spawn"] = eps


def propagate_dual(flow: SingularFlow, s: float, t: float, sigma: np.ndarray, *,
                   grid: int = 256, rtol: float = 1e-11, atol: float = 1e-14,
                   eps_rel: float = 1e-9) -> HeatSolution:
    """Dual propagator on measures: terminal data at t, solved back to s <= t.

    Preserves total mass exactly up to the solver tolerance (projections
    are mass-exact); probability measures map to probability measures.
    Through singular times mass splits over a collapsing group by the local
    equilibrium weights and adds up over a spawning group.
    """
    if not flow.t_start - 1e-12 <= s <= t <= flow.t_end + 1e-12:
        raise ValueError("need flow start <= s <= t <= flow end")
    sol = HeatSolution(flow, BACKWARD, t, s, diagnostics={"eps": {}, "projection_residual": {}})
    sigma = np.asarray(sigma, dtype=float).copy()
    kind, pos = flow.locate(t)

    if kind == "transition":
        tr = flow.transitions[pos]
        if sigma.shape != (len(tr.states),):
            raise ValueError("terminal measure has wrong length for the end vertex set")
        sol.boundary_values[pos] = sigma.copy()
        if s >= t - 1e-15 * max(1.0, abs(t)) or pos == 0:
            sol.final_values = sigma.copy()
            return sol
        sigma = singular_transition_apply(tr, sigma, "measure", "collapse", flow, pos)
        interval_idx = pos - 1
        cur = tr.time
        if _diverges(flow.intervals[interval_idx], cur):
            eps = _interval_eps(flow.intervals[interval_idx], eps_rel)
            cur = cur - eps
            sol.diagnostics["eps"][f"{pos}:collapse"] = eps
    else:
        interval_idx = pos
        if sigma.shape != (flow.intervals[pos].n,):
            raise ValueError("terminal measure has wrong length for the end vertex set")
        cur = t

    while True:
        interval = flow.intervals[interval_idx]
        tol_start = 1e-9 * max(1.0, abs(interval.t_start))
        ends_here = s > interval.t_start + tol_start
        if ends_here:
            target = s
        else:
            target = interval.t_start
            if _diverges(interval, interval.t_start):
                eps = _interval_eps(interval, eps_rel)
                target = interval.t_start + eps
                sol.diagnostics["eps"][f"{interval_idx}:spawn"] = eps
        target = min(target, cur)
        ts, ys, sigma = _integrate(interval, "backward", cur, target, sigma,
                                   rtol, atol, grid, sol.diagnostics)
        sol.segments.append((interval_idx, ts, ys))
        if ends_here:
            sol.final_values = sigma
            return sol
        tr_idx = interval_idx
        tr = flow.transitions[tr_idx]
        pi_here = interval.pi_at(target)
        sol.diagnostics["projection_residual"][tr_idx] = _class_spread(
            tr, sigma, interval.states, "spawn", densities=sigma / pi_here)
        sigma = singular_transition_apply(tr, sigma, "measure", "spawn", flow, tr_idx)
        sol.boundary_values[tr_idx] = sigma.copy()
        if abs(s - tr.time) <= tol_start or tr_idx == 0:
            sol.final_values = sigma
            return sol
        sigma = singular_transition_apply(tr, sigma, "measure", "collapse", flow, tr_idx)
        interval_idx = tr_idx - 1
        cur = tr.time
        if _diverges(flow.intervals[interval_idx], cur):
            eps = _interval_eps(flow.intervals[interval_idx], eps_rel)
            cur = cur - eps
            sol.diagnostics["eps"][f"{tr_idx}:collapse"] = eps
