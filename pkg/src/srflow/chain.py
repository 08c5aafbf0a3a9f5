"""Static Markov-triple primitives.

A Markov triple is a finite state set, a reversible transition-rate matrix
Q (nonnegative off-diagonal, rows summing to zero) and a strictly positive
invariant probability measure pi with the detailed-balance property

    Q(x,y) pi(x) = Q(y,x) pi(y).

On top of a triple this module provides the building blocks used everywhere
else in the package:

  * the logarithmic mean  Lambda(s,t) = (s-t)/(log s - log t)  and its
    partial derivatives, evaluated in a cancellation-safe way near s = t;
  * edge mobility weights  Lambda(mu)(x,y) = Lambda(mu(x)Q(x,y), mu(y)Q(y,x));
  * the graph Laplacian, its adjoint acting on (signed) measures, and the
    pi-weighted inner products;
  * the integrated carre du champs forms Gamma, Gamma2, the time derivative
    of Gamma for time-dependent rates, and their representations as
    symmetric matrices acting on potentials (quadratic forms in psi);
  * relative entropy with the 0*log(0) = 0 convention.

Vertex functions, measures and edge fields are plain numpy arrays of shape
(n,) resp. (n, n); edge fields store one value per ordered pair and a zero
diagonal.  All operations are pure; triples are frozen after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MarkovTriple",
    "log_mean",
    "log_mean_partials",
    "lambda_weights",
    "dt_lambda_weights",
    "laplacian",
    "adjoint_laplacian",
    "gamma",
    "gamma_matrix",
    "gamma2",
    "gamma2_matrix",
    "dt_gamma",
    "dt_gamma_matrix",
    "grad_mu_gamma",
    "entropy",
    "vertex_inner",
    "vertex_inner_pi",
    "edge_inner",
    "divergence",
    "gradient",
    "check_probability",
    "two_point_triple",
    "product_triple",
    "random_triple",
]

DEFAULT_RTOL = 1e-9

# |s-t|/(s+t) below this threshold switches Lambda to its diagonal series;
# the truncation error of the u^4 series is O(u^6) ~ 5e-20 relative.
_SERIES_CUT = 1e-3


# ---------------------------------------------------------------------------
# Logarithmic mean
# ---------------------------------------------------------------------------

def log_mean(s, t):
    """Logarithmic mean Lambda(s,t) = (s-t)/(log s - log t) for s,t >= 0.

    Continuously extended by Lambda(s,s) = s and Lambda(s,0) = Lambda(0,t)
    = 0.  Symmetric, 1-homogeneous, and squeezed between the geometric and
    the arithmetic mean.  Accepts scalars or arrays (broadcast).

    Near the diagonal the direct quotient loses all precision, so for
    |s-t| <= 1e-3 (s+t) the value is computed from the even series

        Lambda = m (1 - u^2/3 - 4 u^4/45 + O(u^6)),   m=(s+t)/2, u=(s-t)/(s+t).
    """
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr < 0.0) or np.any(t_arr < 0.0):
        raise ValueError("log_mean requires nonnegative arguments")
    s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
    out = np.zeros(s_b.shape, dtype=float)

    total = s_b + t_b
    pos = (s_b > 0.0) & (t_b > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(total > 0.0, (s_b - t_b) / np.where(total > 0.0, total, 1.0), 0.0)
    near = pos & (np.abs(u) <= _SERIES_CUT)
    far = pos & ~near

    if np.any(near):
        m = 0.5 * total[near]
        u2 = u[near] ** 2
        out[near] = m * (1.0 - u2 / 3.0 - (4.0 / 45.0) * u2 * u2)
    if np.any(far):
        sf, tf = s_b[far], t_b[far]
        out[far] = (sf - tf) / (np.log(sf) - np.log(tf))
    if out.ndim == 0:
        return float(out)
    return out


def log_mean_partials(s, t):
    """Partial derivatives (d1, d2) of the logarithmic mean for s,t > 0.

    Uses the closed forms d1 = (Lambda/(s-t)) (1 - Lambda/s) and the
    symmetric counterpart, which follow from Lambda = (s-t)/log(s/t); near
    the diagonal both are evaluated by series (d1 = d2 = 1/2 at s = t).
    Satisfies the Euler relation s d1 + t d2 = Lambda and 0 < d_i < 1.
    """
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr <= 0.0) or np.any(t_arr <= 0.0):
        raise ValueError("log_mean_partials requires strictly positive arguments")
    d1 = _partial_one(s_arr, t_arr)
    d2 = _partial_one(t_arr, s_arr)
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def _partial_one(s, t):
    """d/ds Lambda(s,t) for positive broadcastable arrays."""
    s_b, t_b = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    out = np.empty(s_b.shape, dtype=float)
    u = (s_b - t_b) / (s_b + t_b)
    near = np.abs(u) <= _SERIES_CUT
    far = ~near
    if np.any(near):
        un = u[near]
        u2 = un * un
        # f = Lambda/m;  d1Lambda = f (1 + u/3 + 4u^3/45 + ...) / (2(1+u))
        f = 1.0 - u2 / 3.0 - (4.0 / 45.0) * u2 * u2
        out[near] = f * (1.0 + un / 3.0 + (4.0 / 45.0) * un * u2) / (2.0 * (1.0 + un))
    if np.any(far):
        sf, tf = s_b[far], t_b[far]
        lam = (sf - tf) / (np.log(sf) - np.log(tf))
        out[far] = lam / (sf - tf) * (1.0 - lam / sf)
    return out


# ---------------------------------------------------------------------------
# Markov triple
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkovTriple:
    """Reversible irreducible rate matrix with invariant probability weights.

    ``rates`` may be passed with an arbitrary diagonal; the constructor
    zeroes it and re-imposes Q(x,x) = -sum_{y != x} Q(x,y), so row sums
    vanish exactly.  Detailed balance and irreducibility are validated.
    """

    states: tuple
    rates: np.ndarray
    pi: np.ndarray
    _validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        states = tuple(str(s) for s in self.states)
        q = np.array(self.rates, dtype=float)
        pi = np.array(self.pi, dtype=float)
        n = len(states)
        if q.shape != (n, n):
            raise ValueError(f"rates must be {n}x{n}, got {q.shape}")
        if pi.shape != (n,):
            raise ValueError(f"pi must have length {n}, got {pi.shape}")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0.0):
            raise ValueError("off-diagonal rates must be nonnegative")
        np.fill_diagonal(off, -off.sum(axis=1))
        q = off
        if self._validate:
            if np.any(pi <= 0.0):
                raise ValueError("pi must be strictly positive")
            if abs(pi.sum() - 1.0) > 1e-10:
                raise ValueError(f"pi must sum to 1, got {pi.sum()!r}")
            flux = q * pi[:, None]
            scale = max(np.abs(flux).max(), 1.0)
            if np.abs(flux - flux.T).max() > 1e-8 * scale:
                raise ValueError("detailed balance Q(x,y)pi(x) = Q(y,x)pi(y) violated")
            if not _connected(q):
                raise ValueError("rate graph must be irreducible (connected)")
        q.flags.writeable = False
        pi.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rates", q)
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        return self.states.index(str(state))

    def edge_mask(self) -> np.ndarray:
        """Boolean mask of ordered pairs with positive rate."""
        m = np.array(self.rates > 0.0)
        np.fill_diagonal(m, False)
        return m


def _connected(q: np.ndarray) -> bool:
    n = q.shape[0]
    if n <= 1:
        return True
    adj = (q > 0.0) | (q.T > 0.0)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        x = stack.pop()
        for y in np.nonzero(adj[x])[0]:
            if not seen[y]:
                seen[y] = True
                stack.append(int(y))
    return bool(seen.all())


def check_probability(mu: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Validate a probability vector (nonnegative, total mass 1 within tol)."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < -tol):
        raise ValueError("probability measure has negative mass")
    if abs(mu.sum() - 1.0) > tol:
        raise ValueError(f"total mass {mu.sum()!r} differs from 1 beyond {tol}")
    return mu


# ---------------------------------------------------------------------------
# Inner products, gradient, divergence
# ---------------------------------------------------------------------------

def vertex_inner(psi: np.ndarray, sigma: np.ndarray) -> float:
    """Euclidean pairing of a function with a (signed) measure."""
    return float(np.dot(np.asarray(psi, float), np.asarray(sigma, float)))


def vertex_inner_pi(triple: MarkovTriple, psi, phi) -> float:
    """pi-weighted inner product of two vertex functions."""
    return float(np.sum(np.asarray(psi, float) * np.asarray(phi, float) * triple.pi))


def edge_inner(phi_edges: np.ndarray, psi_edges: np.ndarray) -> float:
    """Pairing of edge fields: half the sum over ordered pairs."""
    return 0.5 * float(np.sum(phi_edges * psi_edges))


def gradient(psi: np.ndarray) -> np.ndarray:
    """Discrete gradient field grad(psi)(x,y) = psi(y) - psi(x)."""
    psi = np.asarray(psi, dtype=float)
    return psi[None, :] - psi[:, None]


def divergence(v_edges: np.ndarray) -> np.ndarray:
    """Divergence div(V)(x) = (1/2) sum_y [V(x,y) - V(y,x)]."""
    v = np.asarray(v_edges, dtype=float)
    return 0.5 * (v.sum(axis=1) - v.sum(axis=0))


# ---------------------------------------------------------------------------
# Laplacians
# ---------------------------------------------------------------------------

def laplacian(triple: MarkovTriple, psi: np.ndarray) -> np.ndarray:
    """Generator applied to a function: (L psi)(x) = sum_y [psi(y)-psi(x)] Q(x,y)."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (triple.n,):
        raise ValueError("psi has wrong length")
    return triple.rates @ psi


def adjoint_laplacian(triple: MarkovTriple, sigma: np.ndarray) -> np.ndarray:
    """Adjoint generator on measures: sum_y Q(y,x)sigma(y) - Q(x,y)sigma(x)."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (triple.n,):
        raise ValueError("sigma has wrong length")
    return triple.rates.T @ sigma


# ---------------------------------------------------------------------------
# Mobility weights and Gamma forms
# ---------------------------------------------------------------------------

def lambda_weights(triple: MarkovTriple, mu: np.ndarray) -> np.ndarray:
    """Edge mobility Lambda(mu)(x,y) = log-mean of mu(x)Q(x,y) and mu(y)Q(y,x).

    Symmetric (entry (x,y) equals entry (y,x)) with zero diagonal.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (triple.n,):
        raise ValueError("mu has wrong length")
    q = triple.rates
    a = np.where(q > 0.0, mu[:, None] * q, 0.0)
    np.fill_diagonal(a, 0.0)
    lam = log_mean(a, a.T)
    return np.asarray(lam, dtype=float)


def gamma(triple: MarkovTriple, mu: np.ndarray, psi: np.ndarray) -> float:
    """Integrated energy Gamma(mu, psi) = (1/2) sum (psi(y)-psi(x))^2 Lambda(mu)(x,y)."""
    g = gradient(np.asarray(psi, float))
    return edge_inner(g * g, lambda_weights(triple, mu))


def gamma_matrix(triple: MarkovTriple, mu: np.ndarray) -> np.ndarray:
    """Symmetric PSD matrix B with psi^T B psi = Gamma(mu, psi).

    B is the graph Laplacian form of the mobility weights: B = D - W with
    W = Lambda(mu) and D its diagonal of row sums.
    """
    w = lambda_weights(triple, mu)
    return np.diag(w.sum(axis=1)) - w


def _dbar_lambda(triple: MarkovTriple, mu: np.ndarray) -> np.ndarray:
    """Edge table [d1L(rho x, rho y) L rho(x) + d2L(...) L rho(y)] Q(x,y) pi(x).

    This is the drift of the mobility weights under the heat equation on
    densities rho = mu/pi; it enters the first term of Gamma2.
    """
    rho = np.asarray(mu, float) / triple.pi
    drho = triple.rates @ rho
    n = triple.n
    mask = np.array(triple.rates > 0.0)
    np.fill_diagonal(mask, False)
    rx = np.broadcast_to(rho[:, None], (n, n))
    ry = np.broadcast_to(rho[None, :], (n, n))
    out = np.zeros((n, n))
    if np.any(mask):
        # partials need positive densities; callers keep mu interior
        if np.any(rho <= 0.0):
            raise ValueError("gamma2 requires strictly positive mu (interior); "
                             "mix with pi for boundary measures")
        d1, d2 = log_mean_partials(rx[mask], ry[mask])
        w = (triple.rates * triple.pi[:, None])[mask]
        out[mask] = (d1 * np.broadcast_to(drho[:, None], (n, n))[mask]
                     + d2 * np.broadcast_to(drho[None, :], (n, n))[mask]) * w
    return out


def gamma2_matrix(triple: MarkovTriple, mu: np.ndarray) -> np.ndarray:
    """Symmetric matrix A with psi^T A psi = Gamma2(mu, psi).

    Gamma2(mu,psi) = (1/2) <grad psi, grad psi . M> - <grad psi, grad(L psi) . Lambda(mu)>
    with M the heat-drift of the mobility weights.  The first term is half
    the Laplacian form of M; the second is the symmetrized product of the
    mobility form with the generator.
    """
    mu = np.asarray(mu, dtype=float)
    m_tab = _dbar_lambda(triple, mu)
    l_m = np.diag(m_tab.sum(axis=1)) - m_tab
    l_lam = gamma_matrix(triple, mu)
    cross = l_lam @ triple.rates
    return 0.5 * l_m - 0.5 * (cross + cross.T)


def gamma2(triple: MarkovTriple, mu: np.ndarray, psi: np.ndarray,
           boundary_eps: float | None = None) -> float:
    """Iterated form Gamma2(mu, psi); mu must be interior (strictly positive).

    For boundary measures pass ``boundary_eps`` to evaluate at the interior
    proxy (1-eps) mu + eps pi, the convention used by all verifiers.
    """
    mu = np.asarray(mu, dtype=float)
    if boundary_eps is not None:
        mu = (1.0 - boundary_eps) * mu + boundary_eps * triple.pi
    psi = np.asarray(psi, dtype=float)
    a = gamma2_matrix(triple, mu)
    return float(psi @ a @ psi)


# ---------------------------------------------------------------------------
# Time derivative of Gamma for time-dependent rates
# ---------------------------------------------------------------------------

def dt_lambda_weights(triple: MarkovTriple, qdot: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Edge table d/dt Lambda_t(mu)(x,y) from the rate derivative table qdot.

    Equals d1L(mu(x)Q(x,y), mu(y)Q(y,x)) mu(x) qdot(x,y)
         + d2L(mu(x)Q(x,y), mu(y)Q(y,x)) mu(y) qdot(y,x) on edges.
    """
    mu = np.asarray(mu, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if qdot.shape != triple.rates.shape:
        raise ValueError("qdot table has wrong shape")
    n = triple.n
    mask = np.array(triple.rates > 0.0)
    np.fill_diagonal(mask, False)
    a = mu[:, None] * triple.rates
    out = np.zeros((n, n))
    if np.any(mask):
        av, atv = a[mask], a.T[mask]
        if np.any(av <= 0.0) or np.any(atv <= 0.0):
            raise ValueError("dt_gamma needs mu positive on every edge endpoint")
        d1, d2 = log_mean_partials(av, atv)
        mx = np.broadcast_to(mu[:, None], (n, n))[mask]
        my = np.broadcast_to(mu[None, :], (n, n))[mask]
        out[mask] = d1 * mx * qdot[mask] + d2 * my * qdot.T[mask]
    return out


def dt_gamma_matrix(triple: MarkovTriple, qdot: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Symmetric matrix of the form psi -> dGamma_t/dt (mu, psi)."""
    tab = dt_lambda_weights(triple, qdot, mu)
    return np.diag(tab.sum(axis=1)) - tab


def dt_gamma(triple: MarkovTriple, qdot: np.ndarray | None, mu: np.ndarray,
             psi: np.ndarray) -> float:
    """Time derivative of Gamma_t(mu, psi) given the analytic rate derivative.

    Raises if no derivative table is supplied (schedules without an analytic
    derivative are excluded from curvature checks).
    """
    if qdot is None:
        raise ValueError("dt_gamma requires the analytic rate derivative table")
    psi = np.asarray(psi, dtype=float)
    g = gradient(psi)
    return edge_inner(g * g, dt_lambda_weights(triple, qdot, mu))


def grad_mu_gamma(triple: MarkovTriple, mu: np.ndarray, psi: np.ndarray,
                  floor: float = 1e-14) -> np.ndarray:
    """Gradient of mu -> Gamma(mu, psi), one entry per state.

    dGamma/dmu(z) = sum_y (psi(y)-psi(z))^2 d1L(mu(z)Q(z,y), mu(y)Q(y,z)) Q(z,y).
    Arguments of the partials are floored at ``floor`` to keep the gradient
    finite on the boundary of the simplex (the true one-sided derivative
    diverges there).
    """
    mu = np.asarray(mu, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n = triple.n
    q = triple.rates
    mask = np.array(q > 0.0)
    np.fill_diagonal(mask, False)
    g2 = gradient(psi) ** 2
    a = np.maximum(mu[:, None] * q, floor)
    out = np.zeros(n)
    if np.any(mask):
        d1 = _partial_one(a[mask], a.T[mask])
        contrib = np.zeros((n, n))
        contrib[mask] = g2[mask] * d1 * q[mask]
        out = contrib.sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------

def entropy(triple: MarkovTriple, mu: np.ndarray) -> float:
    """Relative entropy sum_x mu(x) log(mu(x)/pi(x)) with 0 log 0 = 0."""
    mu = check_probability(np.asarray(mu, dtype=float))
    pos = mu > 0.0
    return float(np.sum(mu[pos] * (np.log(mu[pos]) - np.log(triple.pi[pos]))))


# ---------------------------------------------------------------------------
# Convenience constructors
# ---------------------------------------------------------------------------

def two_point_triple(p: float = 1.0, states=("a", "b")) -> MarkovTriple:
    """Two-point chain with symmetric rate p and uniform weights."""
    q = np.array([[0.0, p], [p, 0.0]])
    return MarkovTriple(states, q, np.array([0.5, 0.5]))


def product_triple(a: MarkovTriple, b: MarkovTriple, sep: str = "|") -> MarkovTriple:
    """Independent product chain on the product state space.

    Distinct product states interact only along one factor at a time; the
    invariant measure is the product measure.
    """
    states = tuple(f"{x}{sep}{y}" for x in a.states for y in b.states)
    na, nb = a.n, b.n
    q = np.zeros((na * nb, na * nb))
    for i in range(na):
        for j in range(nb):
            r = i * nb + j
            for i2 in range(na):
                if i2 != i:
                    q[r, i2 * nb + j] = a.rates[i, i2]
            for j2 in range(nb):
                if j2 != j:
                    q[r, i * nb + j2] = b.rates[j, j2]
    pi = np.kron(a.pi, b.pi)
    return MarkovTriple(states, q, pi)


def random_triple(n: int, rng: np.random.Generator, density: float = 1.0) -> MarkovTriple:
    """Random reversible triple: random positive pi, random symmetric edge flux.

    Rates come from a symmetric weight table w via Q(x,y) = w(x,y)/pi(x),
    which satisfies detailed balance by construction.  A spanning ring keeps
    the graph connected at any density.
    """
    pi = rng.dirichlet(np.full(n, 5.0))
    w = np.zeros((n, n))
    for x in range(n):
        for y in range(x + 1, n):
            keep = (y == x + 1) or (x == 0 and y == n - 1) or rng.random() < density
            if keep:
                w[x, y] = w[y, x] = rng.uniform(0.2, 1.5)
    q = w / pi[:, None]
    return MarkovTriple(tuple(f"s{i}" for i in range(n)), q, pi)
