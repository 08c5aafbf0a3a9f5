"""Discrete transport distance with primal and dual certificates.

The squared distance between probability measures is the minimal
Benamou-Brenier action over discrete continuity-equation paths,

    W(mu0, mu1)^2 = inf  int_0^1 (1/2) sum_{x,y} V_a(x,y)^2 / Lambda(mu_a)(x,y) da,

where the mobility Lambda(mu)(x,y) is the logarithmic mean of mu(x)Q(x,y)
and mu(y)Q(y,x) and the flux satisfies d/da mu_a + div V_a = 0.

Primal side: the path is discretized on a uniform grid of K steps; for
fixed node measures the optimal per-step flux is the solution of a
weighted-Laplacian system (flux = mobility times a potential gradient),
which reduces the problem to a convex functional of the interior node
measures, minimized by a spectral projected-gradient scheme on the product
of simplices.  The reported value is the action of the resulting
piecewise-linear curve evaluated by per-step Gauss quadrature, making it a
genuine upper bound (the midpoint Riemann sum used inside the optimizer
can undershoot its own curve).

Dual side: half the squared distance equals the supremum of
<phi_1, mu1> - <phi_0, mu0> over Hamilton-Jacobi subsolutions, curves of
potentials with <dphi/da, mu> + (1/2) Gamma(mu, phi) <= 0 for every
probability measure mu.  Piecewise-linear-in-a potentials satisfy this for
every a as soon as the constraint holds at both step endpoints (Gamma is
convex along the segment), so a cutting-plane scheme over finitely many mu
constraints, separated by a concave maximization oracle over the simplex
and finished by a ramp correction of the residual violation, produces a
certified lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from srflow._opt import project_simplex, spg_minimize
from srflow.chain import (
    MarkovTriple,
    check_probability,
    entropy,
    gamma,
    gamma_matrix,
    grad_mu_gamma,
    lambda_weights,
    log_mean,
    _partial_one,
)

__all__ = [
    "TransportPath",
    "HJWitness",
    "MetricTensorSolve",
    "action",
    "primal_w2",
    "dual_w2_lower",
    "geodesic",
    "metric_tensor",
    "hj_max_violation",
]

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(5)
_GAUSS_NODES = 0.5 * (_GAUSS_NODES + 1.0)
_GAUSS_WEIGHTS = 0.5 * _GAUSS_WEIGHTS


@dataclass
class TransportPath:
    """Discretized continuity-equation curve with its action value."""

    grid: int
    nodes: np.ndarray        # (K+1, n) probability measures
    fluxes: np.ndarray       # (K, n, n) per-step edge fluxes
    action_value: float      # Gauss-quadrature action of the pw-linear curve
    diagnostics: dict = field(default_factory=dict)

    def continuity_residual(self) -> float:
        k = self.grid
        res = 0.0
        for j in range(k):
            div = 0.5 * (self.fluxes[j].sum(axis=1) - self.fluxes[j].sum(axis=0))
            res = max(res, float(np.max(np.abs(
                self.nodes[j + 1] - self.nodes[j] + div / k))))
        return res


@dataclass
class HJWitness:
    """Grid of potentials certifying a lower bound on half the squared distance.

    The curve is piecewise linear in the parameter a; the subsolution
    constraint of step k is the one paired exactly with the midpoint-rule
    primal discretization,

        <K (phi^k - phi^{k-1}), mu> + (1/2) Gamma(mu, (phi^{k-1}+phi^k)/2) <= 0
        for every probability measure mu,

    under which the summation-by-parts identity makes the certified
    objective a genuine lower bound of half the squared discretized
    distance (hence of the primal report, up to the oracle feasibility
    tolerance recorded in ``max_violation``).
    """

    potentials: np.ndarray   # (K+1, n), piecewise linear in the curve parameter
    objective: float         # certified <phi^K, mu1> - <phi^0, mu0>
    max_violation: float     # residual oracle violation after correction
    diagnostics: dict = field(default_factory=dict)

    def step_constraint_args(self, j: int):
        """(phidot, phi) of step j in the convention the oracle certifies."""
        k = self.potentials.shape[0] - 1
        phidot = k * (self.potentials[j + 1] - self.potentials[j])
        mid = 0.5 * (self.potentials[j] + self.potentials[j + 1])
        return phidot, mid


@dataclass
class MetricTensorSolve:
    mu: np.ndarray
    velocity: np.ndarray
    psi: np.ndarray
    value: float
    residual: float


# ---------------------------------------------------------------------------
# Action
# ---------------------------------------------------------------------------

def _step_action(triple: MarkovTriple, mu: np.ndarray, v: np.ndarray) -> float:
    """(1/2) sum alpha(V(x,y), mu(x)Q(x,y), mu(y)Q(y,x)); +inf on dead flux."""
    q = triple.rates
    a = np.where(q > 0.0, mu[:, None] * q, 0.0)
    np.fill_diagonal(a, 0.0)
    lam = np.asarray(log_mean(a, a.T), dtype=float)
    dead = lam <= 0.0
    if np.any(np.abs(v[dead]) > 0.0):
        return math.inf
    out = np.zeros_like(lam)
    live = ~dead
    out[live] = v[live] ** 2 / lam[live]
    return 0.5 * float(out.sum())


def action(triple: MarkovTriple, path: TransportPath) -> float:
    """Midpoint Riemann sum of the path action (the optimizer's objective).

    Uses the extended integrand: flux across an edge with zero mobility
    costs +inf (returned, not raised).
    """
    nodes, fluxes, k = path.nodes, path.fluxes, path.grid
    if nodes.shape[0] != k + 1 or fluxes.shape[0] != k or nodes.shape[1] != triple.n:
        raise ValueError("path shapes do not match the grid/triple")
    total = 0.0
    for j in range(k):
        mid = 0.5 * (nodes[j] + nodes[j + 1])
        total += _step_action(triple, mid, fluxes[j])
    return total / k


# ---------------------------------------------------------------------------
# Weighted-Laplacian solves
# ---------------------------------------------------------------------------

def _solve_potential(lam: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (diag(lam 1) - lam) psi = rhs on the quotient (psi pinned at 0)."""
    k_mat = np.diag(lam.sum(axis=1)) - lam
    n = k_mat.shape[0]
    psi = np.zeros(n)
    if n > 1:
        psi[1:] = np.linalg.solve(k_mat[1:, 1:], rhs[1:])
    return psi


def _batched_energy(triple: MarkovTriple, nodes: np.ndarray):
    """Energy K sum_k <s_k, K_{m_k}^{-1} s_k> of a node path, with gradients.

    Returns (energy, grad wrt interior nodes, per-step potentials).
    """
    k = nodes.shape[0] - 1
    n = triple.n
    q = triple.rates
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    diffs = nodes[1:] - nodes[:-1]

    a = np.where(q > 0.0, mids[:, :, None] * q[None, :, :], 0.0)
    at = np.swapaxes(a, 1, 2)
    lam = np.asarray(log_mean(a, at), dtype=float)
    for j in range(k):
        np.fill_diagonal(lam[j], 0.0)

    deg = lam.sum(axis=2)
    kmats = -lam.copy()
    kmats[:, np.arange(n), np.arange(n)] += deg
    psis = np.zeros((k, n))
    if n > 1:
        psis[:, 1:] = np.linalg.solve(kmats[:, 1:, 1:], diffs[:, 1:, None])[:, :, 0]
    energy = k * float(np.sum(diffs * psis))

    # d/dmu of <psi, K_m psi> = sum_y (grad psi)^2 d1Lambda(...) Q(z, y)
    grads_psi = psis[:, None, :] - psis[:, :, None]
    mask = (q > 0.0)[None, :, :] & (lam > 0.0)
    d1 = np.zeros_like(lam)
    floor = 1e-300
    d1[mask] = _partial_one(np.maximum(a, floor)[mask], np.maximum(at, floor)[mask])
    contrib = np.where(mask, grads_psi ** 2 * d1 * q[None, :, :], 0.0)
    denergy_dm = -contrib.sum(axis=2)   # (k, n), gradient of G wrt midpoint

    grad = np.zeros_like(nodes)
    grad[1:] += k * (2.0 * psis + 0.5 * denergy_dm)
    grad[:-1] += k * (-2.0 * psis + 0.5 * denergy_dm)
    return energy, grad[1:-1], psis, lam


def _fluxes_from_potentials(psis: np.ndarray, lam: np.ndarray, k: int) -> np.ndarray:
    grads = psis[:, None, :] - psis[:, :, None]
    return k * lam * grads


def _quadrature_action(triple: MarkovTriple, nodes: np.ndarray,
                       fluxes: np.ndarray) -> tuple:
    """Per-step Gauss action of the piecewise-linear curve; true upper bound."""
    k = nodes.shape[0] - 1
    per_step = np.zeros(k)
    for j in range(k):
        acc = 0.0
        for theta, w in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
            mu_t = (1.0 - theta) * nodes[j] + theta * nodes[j + 1]
            acc += w * _step_action(triple, mu_t, fluxes[j])
        per_step[j] = acc
    return float(per_step.sum() / k), per_step / k


# ---------------------------------------------------------------------------
# Primal problem
# ---------------------------------------------------------------------------

def primal_w2(triple: MarkovTriple, mu0, mu1, grid: int = 64, *,
              max_iter: int = 20000, gtol: float = 1e-10, ftol: float = 1e-13,
              floor: float = 1e-11) -> tuple:
    """Upper bound of the transport distance and the minimizing path.

    Minimizes the discretized action over interior node measures (the
    per-step flux is eliminated through the weighted-Laplacian solve) and
    reports the square root of the Gauss-quadrature action of the optimal
    piecewise-linear curve.
    """
    mu0 = check_probability(np.asarray(mu0, dtype=float), tol=1e-9)
    mu1 = check_probability(np.asarray(mu1, dtype=float), tol=1e-9)
    n = triple.n
    if mu0.shape != (n,) or mu1.shape != (n,):
        raise ValueError("endpoint measures have wrong length")
    if grid < 1:
        raise ValueError("grid size must be at least 1")
    if n == 1:
        path = TransportPath(grid, np.ones((grid + 1, 1)), np.zeros((grid, 1, 1)), 0.0)
        return 0.0, path

    ts = np.linspace(0.0, 1.0, grid + 1)[:, None]
    init = (1.0 - ts) * mu0[None, :] + ts * mu1[None, :]

    def pack(nodes_interior):
        return np.vstack([mu0[None, :], nodes_interior, mu1[None, :]])

    def fun_grad(x):
        nodes = pack(x.reshape(grid - 1, n)) if grid > 1 else pack(
            np.zeros((0, n)))
        energy, grad, _, _ = _batched_energy(triple, nodes)
        return energy, grad.reshape(-1)

    def project(x):
        pts = x.reshape(-1, n)
        return np.vstack([project_simplex(row, floor) for row in pts]).reshape(-1)

    if grid == 1:
        nodes = pack(np.zeros((0, n)))
        info = {"iterations": 0, "pg_norm": 0.0}
    else:
        x0 = init[1:-1].reshape(-1)
        x, _, info = spg_minimize(fun_grad, x0, project, max_iter=max_iter,
                                  gtol=gtol, ftol=ftol)
        nodes = pack(x.reshape(grid - 1, n))

    energy, _, psis, lam = _batched_energy(triple, nodes)
    fluxes = _fluxes_from_potentials(psis, lam, grid)
    value_sq, per_step = _quadrature_action(triple, nodes, fluxes)
    path = TransportPath(grid, nodes, fluxes, value_sq,
                         diagnostics={"midpoint_action": energy,
                                      "per_step_action": per_step,
                                      **info})
    return math.sqrt(max(value_sq, 0.0)), path


def geodesic(triple: MarkovTriple, mu0, mu1, grid: int = 64, *,
             boundary_eps: float = 1e-6, **solver_kwargs) -> TransportPath:
    """Primal minimizer reparameterized to constant speed.

    Endpoints are mixed with pi by ``boundary_eps`` (the Riemannian
    structure degenerates on the boundary of the simplex).  The per-step
    action of the result deviates from total/K by the reported fraction.
    """
    mu0 = (1.0 - boundary_eps) * np.asarray(mu0, float) + boundary_eps * triple.pi
    mu1 = (1.0 - boundary_eps) * np.asarray(mu1, float) + boundary_eps * triple.pi
    _, path = primal_w2(triple, mu0, mu1, grid, **solver_kwargs)
    k = path.grid
    if triple.n == 1 or path.action_value <= 0.0:
        return path

    lengths = np.sqrt(np.maximum(path.diagnostics["per_step_action"], 0.0))
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    if cum[-1] <= 0.0:
        return path
    targets = np.linspace(0.0, cum[-1], k + 1)
    params = np.interp(targets, cum, np.arange(k + 1, dtype=float))
    new_nodes = np.empty_like(path.nodes)
    for j, p in enumerate(params):
        lo = min(int(p), k - 1)
        frac = p - lo
        new_nodes[j] = (1.0 - frac) * path.nodes[lo] + frac * path.nodes[lo + 1]
    new_nodes[0], new_nodes[-1] = path.nodes[0], path.nodes[-1]

    energy, _, psis, lam = _batched_energy(triple, new_nodes)
    fluxes = _fluxes_from_potentials(psis, lam, k)
    value_sq, per_step = _quadrature_action(triple, new_nodes, fluxes)
    dev = float(np.max(np.abs(per_step - value_sq / k)) / max(value_sq / k, 1e-300))
    diag = dict(path.diagnostics)
    diag.update({"per_step_action": per_step, "constant_speed_deviation": dev,
                 "midpoint_action": energy})
    return TransportPath(k, new_nodes, fluxes, value_sq, diag)


# ---------------------------------------------------------------------------
# Metric tensor
# ---------------------------------------------------------------------------

def metric_tensor(triple: MarkovTriple, mu, velocity) -> MetricTensorSolve:
    """G(mu, s) = <s, K_mu^{-1} s> with the solving potential.

    ``mu`` must be strictly positive and its mobility graph connected;
    ``velocity`` must sum to zero (tangent to the simplex).
    """
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(velocity, dtype=float)
    if np.any(mu <= 0.0):
        raise ValueError("metric tensor requires a strictly positive measure")
    if abs(s.sum()) > 1e-9 * max(1.0, np.abs(s).max()):
        raise ValueError("velocity must sum to zero")
    lam = lambda_weights(triple, mu)
    if not _connected_weights(lam):
        raise ValueError("mobility graph is disconnected at this measure")
    if triple.n == 1:
        return MetricTensorSolve(mu, s, np.zeros(1), 0.0, 0.0)
    psi = _solve_potential(lam, s)
    k_mat = np.diag(lam.sum(axis=1)) - lam
    residual = float(np.max(np.abs(k_mat @ psi - s)))
    return MetricTensorSolve(mu, s, psi, float(s @ psi), residual)


def _connected_weights(lam: np.ndarray) -> bool:
    n = lam.shape[0]
    if n <= 1:
        return True
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        x = stack.pop()
        for y in np.nonzero(lam[x] > 0.0)[0]:
            if not seen[y]:
                seen[y] = True
                stack.append(int(y))
    return bool(seen.all())


# ---------------------------------------------------------------------------
# Hamilton-Jacobi machinery
# ---------------------------------------------------------------------------

def hj_max_violation(triple: MarkovTriple, phidot, phi, *,
                     max_iter: int = 400, starts=None, with_gap: bool = False):
    """Maximize <phidot, mu> + (1/2) Gamma(mu, phi) over the simplex.

    The objective is concave in mu (the mobility weights are), so a
    projected ascent from several starts finds the global maximum; the
    Frank-Wolfe gap at the best iterate bounds its suboptimality.  Returns
    (max value, maximizing mu), plus the gap when ``with_gap`` is set.
    """
    phidot = np.asarray(phidot, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n = triple.n
    if n == 1:
        out = (float(phidot[0]), np.ones(1))
        return out + (0.0,) if with_gap else out

    def neg_fun_grad(mu):
        val = float(phidot @ mu) + 0.5 * gamma(triple, mu, phi)
        grad = phidot + 0.5 * grad_mu_gamma(triple, mu, phi)
        return -val, -grad

    if starts is None:
        starts = [np.full(n, 1.0 / n), triple.pi.copy()]
        eps = 1e-6
        for z in range(n):
            e = np.full(n, eps / (n - 1))
            e[z] = 1.0 - eps
            starts.append(e)
    best_val, best_mu = -math.inf, None
    for s0 in starts:
        mu, negval, _ = spg_minimize(neg_fun_grad, np.asarray(s0, float),
                                     lambda v: project_simplex(v, 0.0),
                                     max_iter=max_iter, gtol=1e-12, ftol=1e-15)
        if -negval > best_val:
            best_val, best_mu = -negval, mu
    if with_gap:
        return best_val, best_mu, _hj_gap(triple, best_mu, phidot, phi)
    return best_val, best_mu


def _hj_gap(triple: MarkovTriple, mu: np.ndarray, phidot, phi) -> float:
    """Frank-Wolfe optimality gap of the concave objective at mu."""
    grad = phidot + 0.5 * grad_mu_gamma(triple, mu, phi)
    return float(grad.max() - grad @ mu)


def dual_w2_lower(triple: MarkovTriple, mu0, mu1, grid: int = 64, *,
                  feas_tol: float = 1e-8, max_rounds: int = 200,
                  path_hint: TransportPath | None = None,
                  box: float | None = None, solver: str = "CLARABEL") -> tuple:
    """Certified lower bound of the transport distance by cutting planes.

    Maximizes <phi^K, mu1> - <phi^0, mu0> over piecewise-linear potential
    curves subject to the per-step subsolution constraint (midpoint
    potential, see HJWitness), enforced on a growing finite set of
    measures; each round adds the maximizer of the violation oracle until
    the worst violation is below ``feas_tol``.  The returned objective is
    corrected by the residual violation (subtracting a linear-in-time ramp
    restores exact feasibility and costs exactly the violation), so
    sqrt(2 objective) is a true lower bound of the discretized distance up
    to the oracle accuracy, and in particular never exceeds the primal
    report beyond solver tolerances.
    """
    import cvxpy as cp

    mu0 = check_probability(np.asarray(mu0, dtype=float), tol=1e-9)
    mu1 = check_probability(np.asarray(mu1, dtype=float), tol=1e-9)
    n = triple.n
    k = grid
    if n == 1:
        return 0.0, HJWitness(np.zeros((k + 1, 1)), 0.0, 0.0)

    def make_cut(mu):
        mu_n = np.maximum(np.asarray(mu, dtype=float), 0.0)
        mu_n = mu_n / mu_n.sum()
        return mu_n, gamma_matrix(triple, mu_n)

    base = [make_cut(np.full(n, 1.0 / n)), make_cut(triple.pi)]
    per_step_cuts = [list(base) for _ in range(k)]
    per_step_cuts[0].append(make_cut(mu0))
    per_step_cuts[k - 1].append(make_cut(mu1))
    if path_hint is not None and path_hint.grid == k:
        for j in range(k):
            mid = 0.5 * (path_hint.nodes[j] + path_hint.nodes[j + 1])
            per_step_cuts[j].append(make_cut(mid))

    if box is None:
        scale = path_hint.action_value if path_hint is not None else 1.0
        box = 100.0 * (1.0 + scale)

    def solve_master():
        phi = cp.Variable((k + 1, n))
        objective = cp.Maximize(phi[k] @ mu1 - phi[0] @ mu0)
        constraints = [cp.abs(phi) <= box]
        for j in range(k):
            dphi = k * (phi[j + 1] - phi[j])
            mid = 0.5 * (phi[j] + phi[j + 1])
            for mu_n, b in per_step_cuts[j]:
                constraints.append(
                    dphi @ mu_n + 0.5 * cp.quad_form(mid, cp.psd_wrap(b)) <= 0.0)
        problem = cp.Problem(objective, constraints)
        problem.solve(solver=solver)
        if phi.value is None:
            raise RuntimeError("dual master problem failed")
        return float(problem.value), phi.value.copy()

    def sweep(phi_val, starts_map=None, full=False):
        worst = -math.inf
        worst_slot = None
        found = []
        uniform = np.full(n, 1.0 / n)
        for j in range(k):
            dphi = k * (phi_val[j + 1] - phi_val[j])
            mid = 0.5 * (phi_val[j] + phi_val[j + 1])
            starts = None
            if not full:
                starts = [uniform, triple.pi]
                if starts_map and j in starts_map:
                    starts.append(starts_map[j])
            viol, mu_star, gap = hj_max_violation(
                triple, dphi, mid, max_iter=200 if not full else 400,
                starts=starts, with_gap=True)
            total = viol + max(gap, 0.0)
            if total > worst:
                worst = total
                worst_slot = j
            found.append((j, viol, mu_star))
        return worst, worst_slot, found

    warm = {}
    obj_val = 0.0
    phi_val = None
    worst = math.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        obj_val, phi_val = solve_master()
        worst, _, found = sweep(phi_val, warm)
        new_cuts = 0
        for j, viol, mu_star in found:
            if viol > feas_tol:
                per_step_cuts[j].append(make_cut(mu_star))
                warm[j] = mu_star
                new_cuts += 1
        if worst <= feas_tol or new_cuts == 0:
            break
    else:
        raise RuntimeError(
            f"dual cutting planes did not reach feasibility in {max_rounds} rounds "
            f"(residual violation {worst:.3e})")

    # final certification with the full-start oracle; the ramp correction
    # phi - v a 1 restores exact feasibility at an objective cost of v
    recheck, _, _ = sweep(phi_val, full=True)
    correction = max(recheck, 0.0)
    ramp = correction * np.arange(k + 1)[:, None] / k
    phi_corr = phi_val - ramp
    certified = obj_val - correction

    value = math.sqrt(max(2.0 * certified, 0.0))
    witness = HJWitness(phi_corr, certified, recheck - correction,
                        diagnostics={"rounds": rounds, "raw_objective": obj_val,
                                     "correction": correction, "box": box})
    return value, witness


# ---------------------------------------------------------------------------
# Entropy along a path (used by the curvature verifiers and tests)
# ---------------------------------------------------------------------------

def entropy_along(triple: MarkovTriple, path: TransportPath) -> np.ndarray:
    """Relative entropy at every node of a path."""
    return np.array([entropy(triple, mu) for mu in path.nodes])
