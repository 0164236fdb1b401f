"""Independent reference computations used by the verification suite and tests.

Nothing here calls the closed forms it is meant to check: moments come from
numerically integrating the moment ODEs, variances from adaptive quadrature,
and the streaming buffer from a global-index replay that never shifts arrays.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from .sde import SdeParams, complex_normal, reverse_step, sigma


def _drift_rate(params: SdeParams, t: float) -> float:
    """kappa(t) in f(x, y) = kappa(t) * (y - x)."""
    return params.gamma if params.kind == "ouve" else 1.0 / (1.0 - t)


def rk4_mean_coeffs(params: SdeParams, ts, steps_per_unit: int = 4000):
    """Integrate ``da/dt = -kappa(t) a`` (a(0) = 1) and ``db/dt = kappa(t)(1 - b)`` by RK4."""
    ts = np.asarray(ts, dtype=np.float64)
    order = np.argsort(ts)
    out_a = np.empty_like(ts)
    out_b = np.empty_like(ts)
    t, a, b = 0.0, 1.0, 0.0

    def rhs(t, a, b):
        k = _drift_rate(params, t)
        return -k * a, k * (1.0 - b)

    for i in order:
        target = ts[i]
        n = max(1, int(math.ceil((target - t) * steps_per_unit)))
        h = (target - t) / n
        for _ in range(n):
            k1 = rhs(t, a, b)
            k2 = rhs(t + h / 2, a + h / 2 * k1[0], b + h / 2 * k1[1])
            k3 = rhs(t + h / 2, a + h / 2 * k2[0], b + h / 2 * k2[1])
            k4 = rhs(t + h, a + h * k3[0], b + h * k3[1])
            a += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            b += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            t += h
        out_a[i], out_b[i] = a, b
    return out_a, out_b


def quad_variance(params: SdeParams, t: float) -> float:
    """sigma_t^2 = int_0^t Phi(t, s)^2 g(s)^2 ds by adaptive Gauss-Kronrod quadrature."""
    if t == 0:
        return 0.0
    c2 = params.c**2
    k = params.k_base
    if params.kind == "ouve":
        def integrand(s):
            return math.exp(-2 * params.gamma * (t - s)) * c2 * k ** (2 * s)
    else:
        def integrand(s):
            return ((1 - t) / (1 - s)) ** 2 * c2 * k ** (2 * s)
    val, _err = quad(integrand, 0.0, t, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def quad_sigma(params: SdeParams, ts):
    return np.sqrt(np.array([quad_variance(params, float(t)) for t in np.atleast_1d(ts)]))


def offline_replay(noisy, score_fn, params: SdeParams, grid, K: int, rng: np.random.Generator):
    """Reference for the streaming buffer using global frame indices.

    Frame ``n`` lives in global column ``K + n`` of a zero-padded array; at
    step ``n`` the window is columns ``n + 1 .. K + n``. Returns the list of
    emitted frames and the final ``K``-frame window.
    """
    noisy = np.asarray(noisy, dtype=np.complex128)
    F, M = noisy.shape
    steps = grid.steps
    B = steps.size
    prev = np.concatenate([[0.0], steps[:-1]])
    G = np.zeros((F, K + M), dtype=np.complex128)
    Yg = np.zeros((F, K + M), dtype=np.complex128)
    outs = []
    for n in range(M):
        c = K + n
        Yg[:, c] = noisy[:, n]
        G[:, c] = noisy[:, n] + sigma(params, steps[-1]) * complex_normal(rng, F)
        lo = c - K + 1
        s = score_fn(G[:, lo:c + 1].copy(), Yg[:, lo:c + 1].copy(), steps)
        buf = slice(c - B + 1, c + 1)
        G[:, buf] = reverse_step(params, s, G[:, buf], Yg[:, buf], steps, prev,
                                 add_noise=np.arange(B) > 0, z=complex_normal(rng, (F, B)))
        outs.append(G[:, c - B].copy())
    return outs, G[:, M:M + K].copy()


def central_difference(f, x0: float, h: float) -> float:
    return (f(x0 + h) - f(x0 - h)) / (2 * h)
