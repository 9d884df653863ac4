"""Independent reference implementations used by the tests."""

import itertools
import math

import numpy as np

from licds.localmodel import taylor_fit


def rk4(fn, x0, n, dt):
    xs = [np.array(x0, dtype=float)]
    for _ in range(n):
        x = xs[-1]
        a = fn(x)
        b = fn(x + dt / 2 * a)
        c = fn(x + dt / 2 * b)
        d = fn(x + dt * c)
        xs.append(x + dt / 6 * (a + 2 * b + 2 * c + d))
    return np.array(xs)


def window_edges(n, m):
    return [int(math.floor(j * n / m + 0.5)) for j in range(m + 1)]


def window_errors(f, truth_states, dt, i0, i1, k_max):
    """Integral error of the complexity-k model (1-D or k counted as full orders)."""
    out = []
    win = truth_states[i0:i1 + 1]
    for k in range(1, k_max + 1):
        size = math.comb(f.dim + k - 1, k - 1)
        model = taylor_fit(f, win[0], size)
        with np.errstate(all="ignore"):
            roll = rk4(model, win[0], i1 - i0, dt)
        err = np.linalg.norm(roll - win, axis=1)
        val = float(np.trapezoid(err, dx=dt))
        out.append(val if math.isfinite(val) else math.inf)
    return out


def brute_force(f, truth_states, dt, lam, k_max, m_max):
    """Enumerate every (m, k_1..k_m); smallest m then lexicographically smallest k on ties."""
    n = len(truth_states) - 1
    best = None
    for m in range(1, m_max + 1):
        edges = window_edges(n, m)
        tables = [window_errors(f, truth_states, dt, edges[j], edges[j + 1], k_max) for j in range(m)]
        for ks in itertools.product(range(1, k_max + 1), repeat=m):
            L = sum(lam * k + tables[j][k - 1] for j, k in enumerate(ks))
            if best is None or L < best[0]:
                best = (L, m, list(ks))
    return best
