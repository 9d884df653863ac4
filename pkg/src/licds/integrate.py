"""Fixed-step RK4 rollouts and Euler-Maruyama sampling."""

import io
import math
from dataclasses import dataclass

import numpy as np


class BlowUpError(FloatingPointError):
    """A rollout produced a non-finite state.

    ``index`` is the last sample index whose state was still finite.
    """

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite state after sample {index}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (N + 1, n)
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a non-empty (N, n) array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def times(self):
        return self.t0 + np.arange(len(self)) * self.dt

    def slice(self, i0, i1):
        """Samples ``i0..i1`` inclusive, re-timed to start at sample ``i0``."""
        return Trajectory(self.states[i0:i1 + 1], self.dt, self.t0 + i0 * self.dt)

    def to_csv(self, comment=None):
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        buf.write(",".join(["t"] + [f"x{i + 1}" for i in range(self.dim)]) + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(",".join(format(v, ".17g") for v in (t, *row)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        header = rows[0].split(",")
        if header[0] != "t":
            raise ValueError("trajectory CSV must start with a 't' column")
        data = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
        if data.shape[0] < 1:
            raise ValueError("trajectory CSV has no samples")
        dt = data[1, 0] - data[0, 0] if data.shape[0] > 1 else 1.0
        return cls(data[:, 1:], dt, data[0, 0])


def step_count(T, dt):
    """Number of steps covering ``T`` with step ``dt``; ``T/dt`` must be integral."""
    if not (dt > 0 and T > 0):
        raise ValueError("T and dt must be positive")
    if dt > T:
        raise ValueError("dt must not exceed T")
    ratio = T / dt
    n = round(ratio)
    if not math.isclose(ratio, n, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"T/dt = {ratio!r} is not an integer step count")
    return n


def rk4_states(f, x0, n_steps, dt):
    """Run ``n_steps`` classical RK4 steps of ``x' = f(x)``; returns (n_steps+1, n).

    ``f`` is any callable returning an array; raises :class:`BlowUpError`.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    out = np.empty((n_steps + 1, x.shape[0]))
    out[0] = x
    if not np.all(np.isfinite(x)):
        raise BlowUpError(-1, "initial state is not finite")
    half = 0.5 * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            k1 = f(x)
            k2 = f(x + half * k1)
            k3 = f(x + half * k2)
            k4 = f(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise BlowUpError(i)
            out[i + 1] = x
    return out


def integrate(f, x0, t0, T, dt):
    """Deterministic RK4 trajectory of ``f`` from ``x0`` over ``[t0, t0 + T]``."""
    n = step_count(T, dt)
    return Trajectory(rk4_states(f.eval, x0, n, dt), dt, t0)


def sample_em(f, x0, T, dt, sigma, seed):
    """Euler-Maruyama sample of ``dx = f(x) dt + sigma dW`` (isotropic, additive)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n = step_count(T, dt)
    x = np.array(x0, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, x.shape[0]))
    scale = sigma * math.sqrt(dt)
    out = np.empty((n + 1, x.shape[0]))
    out[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            x = x + f.eval(x) * dt + scale * noise[i]
            if not np.all(np.isfinite(x)):
                raise BlowUpError(i)
            out[i + 1] = x
    return Trajectory(out, dt, 0.0)
