"""Benchmark dynamical systems and the vector-field interface used everywhere."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import jets


class DynamicsFn:
    """A vector field ``f: R^n -> R^n``.

    ``fn`` maps a state to a sequence (or array) of ``dim`` derivative
    components. When ``jet_ok`` is true, ``fn`` is also valid on a
    :class:`~licds.jets.Jet` of shape ``(dim,)`` and local models use exact
    Taylor coefficients instead of finite differences.
    """

    def __init__(self, dim: int, fn: Callable, name: str = "", jet_ok: bool = False):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.fn = fn
        self.name = name
        self.jet_ok = jet_ok

    def eval(self, x) -> np.ndarray:
        out = np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
        if out.shape[0] != self.dim:
            raise ValueError(f"{self.name or 'dynamics'} returned {out.shape[0]} "
                             f"components, expected {self.dim}")
        return out

    __call__ = eval

    def eval_jet(self, x: jets.Jet) -> jets.Jet:
        out = self.fn(x)
        if isinstance(out, jets.Jet):
            return out
        return jets.stack(list(out), x.space)

    def __add__(self, other: "DynamicsFn") -> "DynamicsFn":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        a, b = self.fn, other.fn

        def fn(x):
            ya, yb = a(x), b(x)
            if isinstance(x, jets.Jet):
                ya = ya if isinstance(ya, jets.Jet) else jets.stack(list(ya), x.space)
                yb = yb if isinstance(yb, jets.Jet) else jets.stack(list(yb), x.space)
                return ya + yb
            return np.asarray(ya, dtype=float) + np.asarray(yb, dtype=float)

        return DynamicsFn(self.dim, fn, f"{self.name}+{other.name}",
                          self.jet_ok and other.jet_ok)

    def scaled(self, factor: float) -> "DynamicsFn":
        base = self.fn

        def fn(x):
            y = base(x)
            if isinstance(x, jets.Jet):
                y = y if isinstance(y, jets.Jet) else jets.stack(list(y), x.space)
                return y * factor
            return np.asarray(y, dtype=float) * factor

        return DynamicsFn(self.dim, fn, f"{factor}*{self.name}", self.jet_ok)

    def __repr__(self):
        return f"DynamicsFn(dim={self.dim}, name={self.name!r})"


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dynamics: DynamicsFn
    default_x0: tuple
    noise_sigma: float = 0.01
    domain_bounds: tuple = field(default=())

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        for x, (lo, hi) in zip(self.default_x0, self.domain_bounds):
            if not lo <= x <= hi:
                raise ValueError(f"default_x0 of {self.name} outside domain bounds")

    @property
    def dim(self):
        return self.dynamics.dim

    def eval(self, x):
        return self.dynamics.eval(x)


G = 9.81


def _tanh(x):
    return [-jets.tanh(x[0])]


def _sat(x):
    return [-jets.clip(x[0], -1.0, 1.0)]


def _tanh_lin(x):
    return [-jets.tanh(x[0]) + 0.5 * x[0]]


def _rational(x):
    return [-x[0] / (1.0 + x[0] * x[0])]


def _tanh_sin(x):
    return [-jets.tanh(x[0]) + 0.5 * jets.sin(x[0])]


def _tanh_sin5(x):
    return [-jets.tanh(x[0]) + 0.1 * jets.sin(5.0 * x[0])]


def _pendulum(x):
    return [x[1], -x[1] - G * jets.sin(x[0])]


def _lorenz(x, sigma=10.0, beta=8.0 / 3.0, rho=28.0):
    return [
        sigma * (x[1] - x[0]),
        x[0] * (rho - x[2]) - x[1],
        x[0] * x[1] - beta * x[2],
    ]


@dataclass(frozen=True)
class QuadrotorParams:
    """Constants of the quadrotor model; inertias are not published, default 1."""

    Ix: float = 1.0
    Iy: float = 1.0
    Iz: float = 1.0
    mass: float = 1.0
    g: float = G
    f_wind: tuple = (1.0, 1.0, 1.0)
    f_t: float = 0.0
    tau: tuple = (1.0, 1.0, 1.0)
    tau_wind: tuple = (1.0, 1.0, 1.0)


def quadrotor_fn(params: QuadrotorParams = QuadrotorParams()) -> Callable:
    P = params

    def fn(x):
        phi, theta, p, q, r, u, v, w = (x[i] for i in range(8))
        s_phi, c_phi = jets.sin(phi), jets.cos(phi)
        s_th, c_th, t_th = jets.sin(theta), jets.cos(theta), jets.tan(theta)
        return [
            p + r * (c_phi * t_th) + q * (s_phi * t_th),
            q * c_th - r * s_phi,
            (P.Iy - P.Iz) / P.Ix * r * q + (P.tau[0] + P.tau_wind[0]) / P.Ix,
            (P.Iz - P.Ix) / P.Iy * p * r + (P.tau[1] + P.tau_wind[1]) / P.Iy,
            (P.Ix - P.Iy) / P.Iz * p * q + (P.tau[2] + P.tau_wind[2]) / P.Iz,
            r * v - q * w - P.g * s_th + P.f_wind[0] / P.mass,
            p * w - r * u + P.g * (s_phi * c_th) + P.f_wind[1] / P.mass,
            q * u - p * v + P.g * (c_th * c_phi) + (P.f_wind[2] - P.f_t) / P.mass,
        ]

    return fn


def _box(n, lo=-10.0, hi=10.0):
    return tuple((lo, hi) for _ in range(n))


def _one_d(name, fn, x0=2.0):
    return SystemSpec(name, DynamicsFn(1, fn, name, jet_ok=True), (x0,), 0.01, _box(1))


def _quadrotor(params: QuadrotorParams):
    bounds = ((-np.pi, np.pi), (-np.pi, np.pi)) + _box(6)
    return SystemSpec(
        "quadrotor",
        DynamicsFn(8, quadrotor_fn(params), "quadrotor", jet_ok=True),
        (-2.0, -3.0, 1.0, 3.0, 1.0, 4.0, 2.0, 1.0),
        0.01,
        bounds,
    )


_BUILDERS = {
    "tanh": lambda: _one_d("tanh", _tanh),
    "sat": lambda: _one_d("sat", _sat),
    "tanh_lin": lambda: _one_d("tanh_lin", _tanh_lin),
    "rational": lambda: _one_d("rational", _rational),
    "tanh_sin": lambda: _one_d("tanh_sin", _tanh_sin),
    "tanh_sin5": lambda: _one_d("tanh_sin5", _tanh_sin5),
    "pendulum": lambda: SystemSpec(
        "pendulum", DynamicsFn(2, _pendulum, "pendulum", jet_ok=True),
        (2.0, 2.0), 0.01, _box(2)),
    "lorenz": lambda: SystemSpec(
        "lorenz", DynamicsFn(3, _lorenz, "lorenz", jet_ok=True),
        (1.0, 1.0, 1.0), 0.01, _box(3)),
}

SYSTEM_NAMES = tuple(list(_BUILDERS) + ["quadrotor"])


def get_system(name: str, quadrotor: Optional[QuadrotorParams] = None) -> SystemSpec:
    """Look up a benchmark system by name.

    Raises:
        KeyError: for an unknown name; the message lists the valid names.
    """
    if name == "quadrotor":
        return _quadrotor(quadrotor or QuadrotorParams())
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; valid: {', '.join(SYSTEM_NAMES)}") from None
