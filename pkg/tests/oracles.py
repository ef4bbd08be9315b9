"""Independent reference computations the tests freeze values against.

Nothing here imports the package solver; the point is to cross-check it.
"""

import numpy as np


def lq1d_transcription_value(theta, n: int = 200, x0: float = 1.0,
                             T: float = 1.0, umax: float = 1.0,
                             iters: int = 4000):
    """Best piecewise-constant control for the scalar double objective
    (-int x^2, -int u^2) with xdot = u, |u| <= umax, by projected gradient.

    With constant u per interval the state is linear in t, so both running
    integrals are evaluated exactly; the discrete objective is a concave
    quadratic in the control vector and projected gradient with
    Barzilai-Borwein steps converges to the box-constrained optimum.
    Returns (value, control vector).
    """
    th1, th2 = float(theta[0]), float(theta[1])
    h = T / n

    def states(u):
        x = np.empty(n + 1)
        x[0] = x0
        np.cumsum(u, out=x[1:])
        x[1:] = x0 + h * x[1:]
        return x

    def value(u):
        x = states(u)
        xl = x[:-1]
        run_x = np.sum(h * xl * xl + h * h * xl * u + (h ** 3) * u * u / 3.0)
        run_u = h * np.sum(u * u)
        return -th1 * run_x - th2 * run_u

    def grad(u):
        x = states(u)
        xl = x[:-1]
        # w[j] = d(value)/d(x_j) accumulated backward, x_0 fixed
        dldx = -th1 * (2.0 * h * xl + h * h * u)
        w = np.zeros(n + 1)
        for j in range(n - 1, -1, -1):
            w[j] = dldx[j] + w[j + 1]
        g = -th1 * (h * h * xl + 2.0 * (h ** 3) * u / 3.0) \
            - th2 * 2.0 * h * u + h * w[1:]
        return g

    u = np.zeros(n)
    g = grad(u)
    step = 1.0
    u_prev, g_prev = u, g
    best_u, best_v = u.copy(), value(u)
    for _ in range(iters):
        u_new = np.clip(u + step * g, -umax, umax)
        if value(u_new) < value(u):
            step *= 0.5
            if step < 1e-18:
                break
            continue
        u_prev, g_prev = u, g
        u, g = u_new, grad(u_new)
        v = value(u)
        if v > best_v:
            best_v, best_u = v, u.copy()
        du, dg = u - u_prev, g - g_prev
        denom = float(du @ dg)
        if denom < 0.0:
            step = min(1e6, float(du @ du) / (-denom))
        if float(np.max(np.abs(du))) < 1e-14:
            break
    return best_v, best_u


def riccati_scalarized_value(a: float, x0: float = 1.0, T: float = 1.0,
                             n: int = 20000) -> float:
    """Optimal value of maximizing -(1/2) int (x^2 + u^2) for
    xdot = a x + u, by backward RK4 on the scalar Riccati equation."""
    def rhs(P):
        return P * P - 2.0 * a * P - 1.0

    h = T / n
    P = 0.0
    for _ in range(n):
        k1 = rhs(P)
        k2 = rhs(P - 0.5 * h * k1)
        k3 = rhs(P - 0.5 * h * k2)
        k4 = rhs(P - h * k3)
        P -= (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return -0.5 * P * x0 * x0


def brute_dominance(objs, dom_tol: float):
    """Literal double loop over the dominance definitions."""
    J = np.asarray(objs, dtype=float)
    npts = len(J)
    dom = [False] * npts
    weak = [False] * npts
    for a in range(npts):
        for b in range(npts):
            if b == a:
                continue
            if all(J[b][i] >= J[a][i] - dom_tol for i in range(J.shape[1])) \
                    and any(J[b][i] > J[a][i] + dom_tol
                            for i in range(J.shape[1])):
                dom[a] = True
            if all(J[b][i] > J[a][i] + dom_tol for i in range(J.shape[1])):
                weak[a] = True
    return np.array(dom), np.array(weak)
