"""Truncated multivariate Taylor models around a working point."""

import itertools
import json
from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from . import jets
from .systems import DynamicsFn

FD_MAX_DEGREE = 4
FD_REL_STEP = 1e-3


class TaylorFitError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    dim: int
    k: int

    def __post_init__(self):
        if self.dim < 1 or self.k < 1:
            raise ValueError("dim and k must be positive")

    @property
    def degree(self):
        """Total degree of the last (highest) monomial in the basis."""
        d = 0
        while _count_upto(self.dim, d) < self.k:
            d += 1
        return d

    @property
    def exponents(self):
        return jets.graded_lex(self.dim, self.degree)[: self.k]


def _count_upto(dim, degree):
    return comb(dim + degree, degree)


COMPLEXITY_MODES = ("order", "terms")


def basis_size(dim, k, complexity="order"):
    """Number of monomials in a local model of complexity ``k``.

    ``"order"``: every monomial of total degree below ``k`` (k = 1 constant,
    k = 2 affine, ...). ``"terms"``: the first ``k`` graded-lex monomials.
    The two coincide in one dimension.
    """
    if k < 1:
        raise ValueError("complexity must be >= 1")
    if complexity == "order":
        return _count_upto(dim, k - 1)
    if complexity == "terms":
        return k
    raise ValueError(f"unknown complexity mode {complexity!r}")


@dataclass(frozen=True, eq=False)
class LocalModel:
    working_point: np.ndarray
    basis: MonomialBasis
    coeffs: np.ndarray  # (n, k)

    def __post_init__(self):
        wp = np.asarray(self.working_point, dtype=float).reshape(-1)
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, self.basis.k)
        if wp.shape[0] != self.basis.dim:
            raise ValueError("working point dimension does not match the basis")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "working_point", wp)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "_exp", np.array(self.basis.exponents, dtype=float))

    @property
    def dim(self):
        return self.basis.dim

    @property
    def k(self):
        return self.basis.k

    def __call__(self, x):
        dx = np.asarray(x, dtype=float) - self.working_point
        return self.coeffs @ np.prod(dx ** self._exp, axis=1)

    def as_dynamics(self):
        return DynamicsFn(self.dim, self, f"local(k={self.k})")

    def to_dict(self):
        return {
            "dim": self.dim,
            "k": self.k,
            "working_point": self.working_point.tolist(),
            "exponents": [list(e) for e in self.basis.exponents],
            "coeffs": self.coeffs.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        basis = MonomialBasis(int(d["dim"]), int(d["k"]))
        if "exponents" in d and [tuple(e) for e in d["exponents"]] != basis.exponents:
            raise ValueError("exponents are not the graded-lex basis for (dim, k)")
        return cls(np.array(d["working_point"]), basis, np.array(d["coeffs"]))


def eval_local(model: LocalModel, x) -> np.ndarray:
    return model(x)


def taylor_coefficients(f: DynamicsFn, x_star, k: int) -> np.ndarray:
    """Coefficients (n, k) of the first ``k`` graded-lex monomials around ``x_star``.

    Jet-capable fields are differentiated exactly; others by central
    finite differences, which are limited to total degree 4.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    basis = MonomialBasis(f.dim, k)
    if f.jet_ok:
        space = jets.jet_space(f.dim, basis.degree)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            coeffs = f.eval_jet(space.seed(x_star)).c[:, :k]
        bad = ~np.all(np.isfinite(coeffs), axis=0)
        if bad.any():
            idx = int(np.argmax(bad))
            raise TaylorFitError(f"non-finite derivative for multi-index {basis.exponents[idx]}")
        return np.array(coeffs)
    return fd_coefficients(f, x_star, basis.exponents)


def fd_coefficients(f: DynamicsFn, x_star, exponents) -> np.ndarray:
    """Central finite-difference Taylor coefficients, one tensor stencil per multi-index."""
    x_star = np.asarray(x_star, dtype=float)
    h = FD_REL_STEP * np.maximum(1.0, np.abs(x_star))
    cols = []
    for beta in exponents:
        if sum(beta) > FD_MAX_DEGREE:
            raise TaylorFitError(
                f"finite differences refused for multi-index {beta} "
                f"(total degree > {FD_MAX_DEGREE})")
        axes = [j for j, b in enumerate(beta) if b > 0]
        stencils = []
        for j in axes:
            b = beta[j]
            stencils.append([((b / 2.0 - i) * h[j], (-1) ** i * comb(b, i) / h[j] ** b)
                             for i in range(b + 1)])
        total = np.zeros(f.dim)
        for combo in itertools.product(*stencils):
            x = x_star.copy()
            w = 1.0
            for j, (off, wt) in zip(axes, combo):
                x[j] += off
                w *= wt
            total = total + w * f.eval(x)
        denom = float(np.prod([factorial(b) for b in beta]))
        col = total / denom
        if not np.all(np.isfinite(col)):
            raise TaylorFitError(f"non-finite derivative for multi-index {beta}")
        cols.append(col)
    return np.stack(cols, axis=1)


def taylor_fit(f: DynamicsFn, x_star, k: int, k_max: int = None) -> LocalModel:
    if k_max is not None and k > k_max:
        raise ValueError(f"k={k} exceeds k_max={k_max}")
    coeffs = taylor_coefficients(f, x_star, k)
    return LocalModel(np.asarray(x_star, dtype=float), MonomialBasis(f.dim, k), coeffs)
