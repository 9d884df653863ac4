"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` holds the Taylor coefficients of one or more quantities with
respect to ``n`` seed variables, truncated at total degree ``d``. The last
axis of ``Jet.c`` indexes monomials in graded-lexicographic order, so
``c[..., 0]`` is the value and ``c[..., i]`` is ``(d^beta f)(x*) / beta!``
for the i-th multi-index ``beta``.

Dynamics functions written with the dispatching helpers in this module
(:func:`tanh`, :func:`sin`, ...) and plain arithmetic evaluate on floats,
numpy arrays and jets alike.
"""

from functools import lru_cache
from math import factorial

import numpy as np


def graded_lex(dim, degree):
    """All multi-indices of total degree <= ``degree`` in graded-lex order.

    Within one degree the order is lexicographic with larger leading
    exponents first, e.g. ``(2,0), (1,1), (0,2)``.
    """
    out = []
    for d in range(degree + 1):
        out.extend(_compositions(d, dim))
    return out


def _compositions(total, parts):
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return out


class JetSpace:
    """Monomial layout and product table for ``dim`` variables up to ``degree``."""

    def __init__(self, dim, degree):
        self.dim = dim
        self.degree = degree
        self.exponents = graded_lex(dim, degree)
        self.size = len(self.exponents)
        index = {e: i for i, e in enumerate(self.exponents)}
        left, right, target = [], [], []
        for i, a in enumerate(self.exponents):
            for j, b in enumerate(self.exponents):
                s = tuple(p + q for p, q in zip(a, b))
                if sum(s) <= degree:
                    left.append(i)
                    right.append(j)
                    target.append(index[s])
        self._left = np.array(left)
        self._right = np.array(right)
        scatter = np.zeros((len(target), self.size))
        scatter[np.arange(len(target)), target] = 1.0
        self._scatter = scatter

    def mul(self, a, b):
        a, b = np.broadcast_arrays(a, b)
        return (a[..., self._left] * b[..., self._right]) @ self._scatter

    def seed(self, point):
        """Jet of the identity map around ``point``: value ``point``, unit slopes."""
        point = np.asarray(point, dtype=float)
        c = np.zeros((self.dim, self.size))
        c[:, 0] = point
        if self.degree >= 1:
            for j in range(self.dim):
                c[j, 1 + j] = 1.0
        return Jet(self, c)


@lru_cache(maxsize=64)
def jet_space(dim, degree):
    return JetSpace(dim, degree)


class Jet:
    """Array of truncated Taylor polynomials sharing one :class:`JetSpace`."""

    __array_priority__ = 100

    def __init__(self, space, c):
        self.space = space
        self.c = c

    @property
    def shape(self):
        return self.c.shape[:-1]

    @property
    def value(self):
        return self.c[..., 0]

    def __len__(self):
        return self.c.shape[0]

    def __getitem__(self, idx):
        # leading-axis indexing only; the coefficient axis is never indexed
        return Jet(self.space, self.c[idx])

    def _wrap(self, other):
        if isinstance(other, Jet):
            return other.c
        other = np.asarray(other, dtype=float)
        c = np.zeros(other.shape + (self.space.size,))
        c[..., 0] = other
        return c

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.c + other.c)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        c = np.broadcast_to(self.c, shape + (self.space.size,)).copy()
        c[..., 0] += other
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.space.mul(self.c, other.c))
        other = np.asarray(other, dtype=float)
        return Jet(self.space, self.c * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * _reciprocal(other)
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return _reciprocal(self) * other

    def __pow__(self, p):
        if not (isinstance(p, (int, np.integer)) and p >= 0):
            raise ValueError("jets support non-negative integer powers only")
        out = Jet(self.space, self._wrap(np.ones(self.shape)))
        for _ in range(p):
            out = out * self
        return out

    def __rmatmul__(self, mat):
        mat = np.asarray(mat, dtype=float)
        return Jet(self.space, mat @ self.c)

    def sum(self, axis=None):
        if axis is None:
            return Jet(self.space, self.c.reshape(-1, self.space.size).sum(axis=0))
        axis = axis % len(self.shape)
        return Jet(self.space, self.c.sum(axis=axis))


def _compose(x, coeffs):
    """Evaluate sum_r coeffs[r] * N^r with N the non-constant part of ``x``.

    ``coeffs`` has shape ``(degree + 1,) + x.shape`` and holds g^(r)(a)/r!.
    """
    space = x.space
    nil = x.c.copy()
    nil[..., 0] = 0.0
    out = np.zeros_like(x.c)
    out[..., 0] = coeffs[0]
    power = nil
    for r in range(1, space.degree + 1):
        out += coeffs[r][..., None] * power
        if r < space.degree:
            power = space.mul(power, nil)
    return Jet(space, out)


def _reciprocal(x):
    a = x.value
    coeffs = np.array([(-1.0) ** r / a ** (r + 1) for r in range(x.space.degree + 1)])
    return _compose(x, coeffs)


@lru_cache(maxsize=None)
def _derivative_polys(kind, order):
    # d^r/dx^r tanh(x) = P_r(tanh x); tan analogously with (1 + t^2)
    sign = -1.0 if kind == "tanh" else 1.0
    polys = [np.polynomial.Polynomial([0.0, 1.0])]
    chain = np.polynomial.Polynomial([1.0, 0.0, sign])
    for _ in range(order):
        polys.append(polys[-1].deriv() * chain)
    return tuple(polys)


def _jet_tanh_like(x, kind):
    t = np.tanh(x.value) if kind == "tanh" else np.tan(x.value)
    polys = _derivative_polys(kind, x.space.degree)
    coeffs = np.array([p(t) / factorial(r) for r, p in enumerate(polys)])
    return _compose(x, coeffs)


def tanh(x):
    if isinstance(x, Jet):
        return _jet_tanh_like(x, "tanh")
    return np.tanh(x)


def tan(x):
    if isinstance(x, Jet):
        return _jet_tanh_like(x, "tan")
    return np.tan(x)


def _trig_coeffs(a, degree, start):
    cycle = [np.sin(a), np.cos(a), -np.sin(a), -np.cos(a)]
    return np.array([cycle[(start + r) % 4] / factorial(r) for r in range(degree + 1)])


def sin(x):
    if isinstance(x, Jet):
        return _compose(x, _trig_coeffs(x.value, x.space.degree, 0))
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return _compose(x, _trig_coeffs(x.value, x.space.degree, 1))
    return np.cos(x)


def exp(x):
    if isinstance(x, Jet):
        e = np.exp(x.value)
        return _compose(x, np.array([e / factorial(r) for r in range(x.space.degree + 1)]))
    return np.exp(x)


def clip(x, lo, hi):
    """Clamp; on jets the slope is 1 strictly inside ``(lo, hi)`` and 0 outside."""
    if isinstance(x, Jet):
        a = x.value
        inside = (a > lo) & (a < hi)
        c = np.where(inside[..., None], x.c, 0.0)
        c[..., 0] = np.clip(a, lo, hi)
        return Jet(x.space, c)
    return np.clip(x, lo, hi)


def stack(items, space):
    """Stack a list of jets and plain numbers into one jet along a new axis 0."""
    rows = []
    for item in items:
        if isinstance(item, Jet):
            rows.append(item.c)
        else:
            c = np.zeros(space.size)
            c[0] = float(item)
            rows.append(c)
    return Jet(space, np.stack(rows))
