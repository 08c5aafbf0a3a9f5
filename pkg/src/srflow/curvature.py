"""Numerical verifiers for the four super-Ricci-flow criteria.

A time-dependent Markov triple is a super Ricci flow when any of the
following equivalent properties holds (they are checked independently and
cross-compared):

  (I)   Bochner:   Gamma2_t(mu, psi) >= (1/2) d/dt Gamma_t(mu, psi),
  (II)  gradient:  Gamma_t(mu, P_{t,s} psi) <= Gamma_s(dualP_{t,s} mu, psi),
  (III) transport: W_s(dualP mu, dualP nu) <= W_t(mu, nu),
  (IV)  dynamic convexity of the relative entropy along W_t-geodesics,

plus the reverse Poincare inequality implied by them.  All quantifiers over
measures, potentials and times are realized by sampling: the suite refutes
(with a reproducible witness that re-evaluates negative) or reports
"pass (not disproved)" at a stated budget; it is not a proof assistant.

Criterion (I) is a generalized eigenvalue problem: at fixed (t, mu) both
Gamma2 - (1/2) dGamma/dt and Gamma are quadratic forms in the potential,
assembled on the quotient modulo constants (potentials pinned at the first
state), and the Bochner gap is the smallest eigenvalue of the pencil
restricted to the range of the Gamma form.  The gap is then minimized over
interior measures by projected gradient descent from multiple starts
(random Dirichlet, corner mixes, the invariant measure itself).

Sampling for (II), (III) and the reverse Poincare always includes pairs
straddling every singular time: validity across structure changes is the
defining feature being tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from srflow._opt import project_simplex, spg_minimize
from srflow.chain import (
    MarkovTriple,
    dt_gamma_matrix,
    entropy,
    gamma,
    gamma_matrix,
    gamma2_matrix,
)
from srflow.heatflow import propagate, propagate_dual
from srflow.report import (
    INCONCLUSIVE,
    PASS,
    VIOLATION,
    VerificationReport,
    aggregate,
)
from srflow.schedule import SingularFlow, eval_at
from srflow.transport import dual_w2_lower, geodesic, primal_w2

__all__ = [
    "BochnerForm",
    "bochner_forms",
    "bochner_gap",
    "check_bochner",
    "static_ricci_bound",
    "check_gradient_estimate",
    "check_transport_estimate",
    "check_dynamic_convexity",
    "check_reverse_poincare",
    "verify_srf",
]


# ---------------------------------------------------------------------------
# Bochner pencil
# ---------------------------------------------------------------------------

@dataclass
class BochnerForm:
    """Quadratic forms (on potentials) of the Bochner inequality at (t, mu)."""

    a_form: np.ndarray   # Gamma2 - (1/2) dGamma/dt
    b_form: np.ndarray   # Gamma


def bochner_forms(triple: MarkovTriple, qdot: np.ndarray | None,
                  mu: np.ndarray) -> BochnerForm:
    a = gamma2_matrix(triple, mu)
    if qdot is not None:
        a = a - 0.5 * dt_gamma_matrix(triple, qdot, mu)
    b = gamma_matrix(triple, mu)
    return BochnerForm(a_form=a, b_form=b)


def _pencil_min_eig(a: np.ndarray, b: np.ndarray, rank_tol: float = 1e-11):
    """Smallest eigenvalue of (A, B) on the range of B, quotient mod constants.

    Returns (eigenvalue, potential) or (None, None) when the quotient is
    empty (single state or fully degenerate mobility).
    """
    n = a.shape[0]
    if n <= 1:
        return None, None
    a_red = a[1:, 1:]
    b_red = b[1:, 1:]
    w, v = np.linalg.eigh(b_red)
    keep = w > rank_tol * max(w.max(), 1e-300)
    if not np.any(keep):
        return None, None
    v_k = v[:, keep]
    w_k = w[keep]
    white = v_k / np.sqrt(w_k)[None, :]
    a_w = white.T @ a_red @ white
    vals, vecs = np.linalg.eigh(0.5 * (a_w + a_w.T))
    psi = np.zeros(n)
    psi[1:] = white @ vecs[:, 0]
    norm = math.sqrt(max(float(psi @ b @ psi), 1e-300))
    return float(vals[0]), psi / norm


def bochner_gap(flow: SingularFlow, t: float, mu: np.ndarray) -> tuple:
    """min over nonconstant psi of (Gamma2 - (1/2) dGamma/dt) / Gamma at (t, mu).

    Nonnegative gap means the Bochner inequality holds at this time and
    measure.  Raises at singular times (rates are not differentiable there)
    and for measures with nonpositive entries.
    """
    kind, _ = flow.locate(t)
    if kind == "transition":
        raise ValueError(f"t={t} is a singular/outer time; the gap needs d/dt rates")
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0.0):
        raise ValueError("bochner_gap requires an interior measure; mix with pi first")
    triple, qdot = eval_at(flow, t)
    forms = bochner_forms(triple, qdot, mu / mu.sum())
    return _pencil_min_eig(forms.a_form, forms.b_form)


def _min_gap_over_mu(triple: MarkovTriple, qdot, *, starts: int, rng,
                     max_iter: int = 120, floor: float = 1e-9):
    """Multistart projected-gradient minimization of the Bochner gap over mu.

    The gap is zero-homogeneous in mu, so an ambient finite-difference
    gradient is projected onto the simplex tangent.  Returns the worst
    (gap, mu, psi) found, or (None, ...) when the quotient is degenerate.
    """
    n = triple.n

    def gap_of(mu):
        forms = bochner_forms(triple, qdot, mu)
        val, psi = _pencil_min_eig(forms.a_form, forms.b_form)
        return val, psi

    if n == 1:
        return None, None, None

    def fun_grad(mu):
        val, _ = gap_of(mu)
        if val is None:
            return 0.0, np.zeros(n)
        h = 1e-6
        grad = np.zeros(n)
        for z in range(n):
            lo = mu.copy()
            hi = mu.copy()
            hi[z] += h
            lo[z] = max(lo[z] - h, floor * 0.5)
            v_hi, _ = gap_of(hi / hi.sum())
            v_lo, _ = gap_of(lo / lo.sum())
            grad[z] = (v_hi - v_lo) / (hi[z] - lo[z])
        return val, grad

    start_list = [triple.pi.copy(), np.full(n, 1.0 / n)]
    eps = 1e-4
    for z in range(n):
        e = np.full(n, eps / max(n - 1, 1))
        e[z] = 1.0 - eps
        start_list.append(e)
    while len(start_list) < starts:
        start_list.append(rng.dirichlet(np.ones(n)))
    start_list = start_list[:max(starts, 2)]

    best = (math.inf, None, None)
    for s0 in start_list:
        mu, val, _ = spg_minimize(fun_grad, s0,
                                  lambda v: project_simplex(v, floor),
                                  max_iter=max_iter, gtol=1e-9, ftol=1e-13)
        val, psi = gap_of(mu)
        if val is not None and val < best[0]:
            best = (val, mu, psi)
    if best[1] is None:
        return None, None, None
    return best


def _time_grid(flow: SingularFlow, points: int) -> np.ndarray:
    """Interior sample times proportional to interval lengths, never singular."""
    lengths = np.array([iv.t_end - iv.t_start for iv in flow.intervals])
    total = lengths.sum()
    counts = np.maximum(1, np.round(points * lengths / total).astype(int))
    times = []
    for iv, c in zip(flow.intervals, counts):
        fr = (np.arange(c) + 0.5) / c
        times.extend(iv.t_start + fr * (iv.t_end - iv.t_start))
    return np.array(sorted(times))


def check_bochner(flow: SingularFlow, *, time_points: int = 50,
                  mu_starts: int = 32, seed: int = 0,
                  tol: float = 1e-8) -> VerificationReport:
    """Criterion (I): the Bochner gap is nonnegative at sampled (t, mu).

    Violation requires a witness that re-evaluates below -tol.  Times on
    single-vertex intervals are degenerate (no nonconstant potentials) and
    are skipped with a note.
    """
    if not flow.has_analytic_rates():
        return VerificationReport("bochner", INCONCLUSIVE,
                                  witness={"detail": "rates without analytic derivative"})
    rng = np.random.default_rng(seed)
    worst = (math.inf, None, None, None)
    degenerate = 0
    for t in _time_grid(flow, time_points):
        triple, qdot = eval_at(flow, t)
        gap, mu, psi = _min_gap_over_mu(triple, qdot, starts=mu_starts, rng=rng)
        if gap is None:
            degenerate += 1
            continue
        if gap < worst[0]:
            worst = (gap, t, mu, psi)
    if worst[1] is None:
        return VerificationReport("bochner", PASS, margin=None, tolerance=tol,
                                  diagnostics={"degenerate_times": degenerate,
                                               "note": "no nonconstant directions"})
    gap, t, mu, psi = worst
    verdict = PASS
    witness = {}
    if gap < -tol:
        recheck, _ = bochner_gap(flow, t, mu)
        if recheck < -tol:
            verdict = VIOLATION
            witness = {"t": t, "mu": mu.tolist(), "psi": psi.tolist(),
                       "recomputed_gap": recheck}
    return VerificationReport("bochner", verdict, margin=gap, tolerance=tol,
                              witness=witness,
                              diagnostics={"time_points": time_points,
                                           "mu_starts": mu_starts,
                                           "degenerate_times": degenerate})


def static_ricci_bound(triple: MarkovTriple, *, budget: int = 32,
                       seed: int = 0) -> float:
    """Estimated optimal lower Ricci bound of a static triple.

    Infimum over interior measures of the smallest eigenvalue of the
    (Gamma2, Gamma) pencil; an upper bound of the true constant, reliable
    at desk scale with the multistart budget.
    """
    rng = np.random.default_rng(seed)
    gap, _, _ = _min_gap_over_mu(triple, None, starts=budget, rng=rng,
                                 max_iter=250)
    if gap is None:
        raise ValueError("triple has no nonconstant potentials")
    return gap


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def _straddling_pairs(flow: SingularFlow, deltas=(1e-2, 1e-3)):
    pairs = []
    for i, t_sing in enumerate(flow.singular_times, start=1):
        left = flow.intervals[i - 1]
        right = flow.intervals[i]
        for d in deltas:
            lo = min(d, 0.45 * (left.t_end - left.t_start))
            hi = min(d, 0.45 * (right.t_end - right.t_start))
            pairs.append((t_sing - lo, t_sing + hi))
    return pairs


def _random_pair(flow: SingularFlow, rng) -> tuple:
    while True:
        s, t = sorted(rng.uniform(flow.t_start, flow.t_end, size=2))
        if t - s < 1e-6:
            continue
        try:
            if flow.locate(s)[0] == "interval" and flow.locate(t)[0] == "interval":
                return s, t
        except ValueError:
            continue


def _interior_probability(n: int, rng, eps: float = 1e-3) -> np.ndarray:
    mu = rng.dirichlet(np.ones(n))
    return (1.0 - eps) * mu + eps / n


def _sample_pairs(flow: SingularFlow, budget: int, rng):
    pairs = _straddling_pairs(flow)
    while len(pairs) < budget:
        pairs.append(_random_pair(flow, rng))
    return pairs[:max(budget, len(_straddling_pairs(flow)))]


# ---------------------------------------------------------------------------
# Criterion (II): gradient estimate
# ---------------------------------------------------------------------------

def check_gradient_estimate(flow: SingularFlow, *, samples: int = 100,
                            seed: int = 0, tol: float = 1e-8,
                            rtol: float = 1e-11) -> VerificationReport:
    """Gamma_t(mu, P psi) <= Gamma_s(dual-P mu, psi) on sampled (s,t,mu,psi)."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    witness = {}
    inconclusive = 0
    for s, t in _sample_pairs(flow, samples, rng):
        triple_t, _ = eval_at(flow, t)
        triple_s, _ = eval_at(flow, s)
        psi = rng.normal(size=triple_s.n)
        mu = _interior_probability(triple_t.n, rng)
        try:
            psi_t = propagate(flow, s, t, psi, rtol=rtol).final_values
            mu_s = propagate_dual(flow, s, t, mu, rtol=rtol).final_values
        except RuntimeError:
            inconclusive += 1
            continue
        lhs = gamma(triple_t, mu, psi_t)
        rhs = gamma(triple_s, mu_s, psi)
        slack = rhs - lhs
        if slack < worst:
            worst = slack
            witness = {"s": s, "t": t, "mu": mu.tolist(), "psi": psi.tolist(),
                       "lhs": lhs, "rhs": rhs}
    verdict = VIOLATION if worst < -tol else (
        INCONCLUSIVE if math.isinf(worst) else PASS)
    return VerificationReport("gradient-estimate", verdict, margin=worst,
                              tolerance=tol,
                              witness=witness if verdict == VIOLATION else {},
                              diagnostics={"samples": samples,
                                           "inconclusive": inconclusive,
                                           "worst_witness": witness})


# ---------------------------------------------------------------------------
# Criterion (III): transport estimate
# ---------------------------------------------------------------------------

def check_transport_estimate(flow: SingularFlow, *, samples: int = 20,
                             grid: int = 24, seed: int = 0,
                             tol: float = 1e-3) -> VerificationReport:
    """W_s(dual-P mu, dual-P nu) <= W_t(mu, nu) with one-sided certification.

    The earlier distance is dual-certified from below, the later one is the
    primal upper bound, so discretization error can only add slack, never
    fabricate a violation.
    """
    rng = np.random.default_rng(seed)
    worst = math.inf
    witness = {}
    inconclusive = 0
    for s, t in _sample_pairs(flow, samples, rng):
        triple_t, _ = eval_at(flow, t)
        triple_s, _ = eval_at(flow, s)
        mu = _interior_probability(triple_t.n, rng)
        nu = _interior_probability(triple_t.n, rng)
        try:
            upper_t, _ = primal_w2(triple_t, mu, nu, grid)
            mu_s = propagate_dual(flow, s, t, mu).final_values
            nu_s = propagate_dual(flow, s, t, nu).final_values
            _, hint = primal_w2(triple_s, mu_s, nu_s, grid)
            lower_s, _ = dual_w2_lower(triple_s, mu_s, nu_s, grid, path_hint=hint)
        except RuntimeError as exc:
            inconclusive += 1
            witness.setdefault("errors", []).append(str(exc))
            continue
        slack = upper_t - lower_s
        if slack < worst:
            worst = slack
            witness = {"s": s, "t": t, "mu": mu.tolist(), "nu": nu.tolist(),
                       "upper_t": upper_t, "lower_s": lower_s}
    verdict = VIOLATION if worst < -tol else (
        INCONCLUSIVE if math.isinf(worst) else PASS)
    return VerificationReport("transport-estimate", verdict, margin=worst,
                              tolerance=tol,
                              witness=witness if verdict == VIOLATION else {},
                              diagnostics={"samples": samples, "grid": grid,
                                           "inconclusive": inconclusive,
                                           "worst_witness": witness})


# ---------------------------------------------------------------------------
# Criterion (IV): dynamic convexity
# ---------------------------------------------------------------------------

def check_dynamic_convexity(flow: SingularFlow, *, time_points: int = 4,
                            endpoint_samples: int = 3, grid: int = 64,
                            seed: int = 0, h_steps=(1e-3, 5e-4),
                            band_factor: float = 10.0) -> VerificationReport:
    """Endpoint entropy-slope gain along geodesics vs. the distance decay.

    One-sided entropy derivatives come from the first/last geodesic nodes
    with linear Richardson extrapolation; the left time derivative of the
    squared distance from backward differences at two step sizes.  The
    tolerance band is band_factor times the total estimator spread plus the
    distance-solver accuracy amplified by the time step.
    """
    rng = np.random.default_rng(seed)
    h_big = max(h_steps)
    worst = math.inf
    worst_band = 0.0
    witness = {}
    inconclusive = 0
    times = []
    for iv in flow.intervals:
        lo = iv.t_start + max(2.5 * h_big, 0.1 * (iv.t_end - iv.t_start))
        hi = iv.t_end - 0.05 * (iv.t_end - iv.t_start)
        if lo < hi and iv.n > 1:
            times.extend(np.linspace(lo, hi, max(1, time_points // len(flow.intervals) + 1)))
    for t in times:
        triple_t, _ = eval_at(flow, t)
        n = triple_t.n
        for _ in range(endpoint_samples):
            mu0 = _interior_probability(n, rng)
            mu1 = _interior_probability(n, rng)
            try:
                path = geodesic(triple_t, mu0, mu1, grid)
                k = path.grid
                ents = np.array([entropy(triple_t, m / m.sum()) for m in path.nodes])
                d0_1 = (ents[1] - ents[0]) * k
                d0_2 = (ents[2] - ents[0]) * k / 2.0
                d0 = 2.0 * d0_1 - d0_2
                d1_1 = (ents[k] - ents[k - 1]) * k
                d1_2 = (ents[k] - ents[k - 2]) * k / 2.0
                d1 = 2.0 * d1_1 - d1_2
                spread_e = abs(d0_1 - d0_2) + abs(d1_1 - d1_2)

                w2_t = path.action_value
                mu0e = path.nodes[0]
                mu1e = path.nodes[-1]
                dws = []
                for h in h_steps:
                    triple_h, _ = eval_at(flow, t - h)
                    _, p_h = primal_w2(triple_h, mu0e, mu1e, grid)
                    dws.append((w2_t - p_h.action_value) / h)
                dw = 2.0 * dws[1] - dws[0] if h_steps[1] * 2 == h_steps[0] else dws[-1]
                spread_w = abs(dws[0] - dws[1])
            except RuntimeError:
                inconclusive += 1
                continue
            slack = (d1 - d0) + 0.5 * dw
            band = band_factor * (spread_e + 0.5 * spread_w
                                  + 1e-7 * (1.0 + w2_t) / min(h_steps)) + 1e-9
            if slack + band < worst:
                worst = slack + band
                worst_band = band
                witness = {"t": t, "mu0": mu0.tolist(), "mu1": mu1.tolist(),
                           "entropy_gain": d1 - d0, "dt_w2": dw, "band": band,
                           "slack": slack}
    verdict = VIOLATION if worst < 0.0 else (
        INCONCLUSIVE if math.isinf(worst) else PASS)
    return VerificationReport("dynamic-convexity", verdict, margin=worst,
                              tolerance=worst_band,
                              witness=witness if verdict == VIOLATION else {},
                              diagnostics={"time_points": len(times),
                                           "endpoint_samples": endpoint_samples,
                                           "grid": grid,
                                           "inconclusive": inconclusive,
                                           "worst_witness": witness})


# ---------------------------------------------------------------------------
# Reverse Poincare
# ---------------------------------------------------------------------------

def check_reverse_poincare(flow: SingularFlow, *, samples: int = 100,
                           seed: int = 0, tol: float = 1e-8,
                           rtol: float = 1e-11) -> VerificationReport:
    """<P(psi^2), mu> - <(P psi)^2, mu> >= 2 (t-s) Gamma_t(mu, P psi)."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    witness = {}
    inconclusive = 0
    for s, t in _sample_pairs(flow, samples, rng):
        triple_t, _ = eval_at(flow, t)
        triple_s, _ = eval_at(flow, s)
        psi = rng.normal(size=triple_s.n)
        mu = _interior_probability(triple_t.n, rng)
        try:
            p_psi = propagate(flow, s, t, psi, rtol=rtol).final_values
            p_psi2 = propagate(flow, s, t, psi ** 2, rtol=rtol).final_values
        except RuntimeError:
            inconclusive += 1
            continue
        lhs = float(p_psi2 @ mu - (p_psi ** 2) @ mu)
        rhs = 2.0 * (t - s) * gamma(triple_t, mu, p_psi)
        slack = lhs - rhs
        if slack < worst:
            worst = slack
            witness = {"s": s, "t": t, "mu": mu.tolist(), "psi": psi.tolist(),
                       "lhs": lhs, "rhs": rhs}
    verdict = VIOLATION if worst < -tol else (
        INCONCLUSIVE if math.isinf(worst) else PASS)
    return VerificationReport("reverse-poincare", verdict, margin=worst,
                              tolerance=tol,
                              witness=witness if verdict == VIOLATION else {},
                              diagnostics={"samples": samples,
                                           "inconclusive": inconclusive,
                                           "worst_witness": witness})


# ---------------------------------------------------------------------------
# Aggregate
# ---------------------------------------------------------------------------

def verify_srf(flow: SingularFlow, *, seed: int = 0, budgets: dict | None = None
               ) -> VerificationReport:
    """Run criteria (I)-(IV) and the reverse Poincare check; aggregate verdict.

    The four criteria are provably equivalent for valid flows, so their
    verdicts must agree; a disagreement is flagged as a cross-consistency
    warning (it signals tolerance or budget trouble, not new mathematics).
    """
    budgets = dict(budgets or {})
    rep_i = check_bochner(flow, seed=seed, **budgets.get("bochner", {}))
    rep_ii = check_gradient_estimate(flow, seed=seed,
                                     **budgets.get("gradient", {}))
    rep_iii = check_transport_estimate(flow, seed=seed,
                                       **budgets.get("transport", {}))
    rep_iv = check_dynamic_convexity(flow, seed=seed,
                                     **budgets.get("convexity", {}))
    rep_p = check_reverse_poincare(flow, seed=seed,
                                   **budgets.get("poincare", {}))
    core = [rep_i, rep_ii, rep_iii, rep_iv]
    verdicts = {r.verdict for r in core if r.verdict != INCONCLUSIVE}
    diag = {}
    if len(verdicts) > 1:
        diag["cross_consistency_warning"] = {
            r.criterion: r.verdict for r in core}
    return aggregate(f"super-ricci-flow: {flow.name}", [rep_i, rep_ii, rep_iii,
                                                        rep_iv, rep_p],
                     diagnostics=diag)
