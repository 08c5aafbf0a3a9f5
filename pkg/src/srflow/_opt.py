"""Small projected-gradient toolbox used by the transport and curvature solvers.

Spectral projected gradient (Barzilai-Borwein step with nonmonotone Armijo
backtracking) over a closed convex set given by a projection callback, plus
the Euclidean projection onto the probability simplex with an optional
floor.  Adequate for the smooth, desk-scale convex problems in this
package; no attempt at large-scale performance.
"""

from __future__ import annotations

import numpy as np


def project_simplex(v: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Euclidean projection onto {x >= floor, sum x = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if floor * n >= 1.0:
        raise ValueError("floor too large for the simplex")
    w = v - floor
    mass = 1.0 - floor * n
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - mass
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    theta = css[rho - 1] / rho
    return np.maximum(w - theta, 0.0) + floor


def spg_minimize(fun_grad, x0: np.ndarray, project, *, max_iter: int = 2000,
                 gtol: float = 1e-10, ftol: float = 1e-12, history: int = 8,
                 step_init: float = 1.0, step_bounds=(1e-10, 1e10)):
    """Minimize a smooth function over a convex set via SPG.

    ``fun_grad(x) -> (f, g)``; ``project(x) -> closest feasible point``.
    Returns (x, f, info) with info holding iterations and the final
    projected-gradient norm.  Nonmonotone line search over the last
    ``history`` values guards the Barzilai-Borwein step.
    """
    x = project(np.asarray(x0, dtype=float))
    f, g = fun_grad(x)
    fhist = [f]
    alpha = step_init
    n_iter = 0
    pg_norm = np.inf
    f_prev_window = f
    for n_iter in range(1, max_iter + 1):
        d = project(x - alpha * g) - x
        pg = project(x - g) - x
        pg_norm = float(np.max(np.abs(pg)))
        if pg_norm <= gtol:
            break
        gtd = float(np.sum(g * d))
        if gtd > -1e-18:
            alpha = step_init
            d = project(x - alpha * g) - x
            gtd = float(np.sum(g * d))
            if gtd > -1e-18:
                break
        fmax = max(fhist[-history:])
        lam = 1.0
        while True:
            x_new = x + lam * d
            f_new, g_new = fun_grad(x_new)
            if f_new <= fmax + 1e-4 * lam * gtd or lam < 1e-12:
                break
            lam *= 0.5
        s = x_new - x
        y = g_new - g
        sy = float(np.sum(s * y))
        ss = float(np.sum(s * s))
        alpha = ss / sy if sy > 1e-30 else step_init
        alpha = float(np.clip(alpha, *step_bounds))
        x, f, g = x_new, f_new, g_new
        fhist.append(f)
        if n_iter % 10 == 0:
            if abs(f_prev_window - f) <= ftol * max(1.0, abs(f)):
                break
            f_prev_window = f
    return x, f, {"iterations": n_iter, "pg_norm": pg_norm}
