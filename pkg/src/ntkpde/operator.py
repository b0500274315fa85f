"""Linear second-order operators, homogenisation and manufactured problems.

An operator acts on a jet as ``sum_ij a_ij H_ij + sum_i b_i g_i + c0 v``.
Coefficients are vectorised callables of the points ``X`` with shape (m, d).
The library's canonical elliptic example is ``-Laplace`` (``a = -I``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .domain import DomainSpec, QuadratureGrid, boundary_samples, build_grid
from .errors import ConfigurationError
from .jets import Jet2

Coefficient = Callable[[np.ndarray], np.ndarray]
JetField = Callable[[np.ndarray], Jet2]
ScalarField = Callable[[np.ndarray], np.ndarray]


def _const_matrix(M):
    M = np.asarray(M, dtype=float)
    return lambda X: np.broadcast_to(M, (np.atleast_2d(X).shape[0],) + M.shape)


def _const_vector(v):
    v = np.asarray(v, dtype=float)
    return lambda X: np.broadcast_to(v, (np.atleast_2d(X).shape[0],) + v.shape)


def _const_scalar(c):
    return lambda X: np.full(np.atleast_2d(X).shape[0], float(c))


@dataclass(frozen=True)
class OperatorSpec:
    dim: int
    a: Coefficient
    b: Coefficient
    c0: Coefficient
    name: str = "custom"
    # +1 / -1 when a is uniformly definite with that sign; enables the
    # bounded-inverse reading of the convergence-to-solution results
    elliptic_sign: int = 0

    def coefficients(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        a = np.broadcast_to(self.a(X), (m, self.dim, self.dim))
        b = np.broadcast_to(self.b(X), (m, self.dim))
        c0 = np.broadcast_to(self.c0(X), (m,))
        return a, b, c0

    @property
    def has_bounded_inverse(self) -> bool:
        return self.elliptic_sign != 0


def neg_laplace(dim: int) -> OperatorSpec:
    return OperatorSpec(dim, _const_matrix(-np.eye(dim)), _const_vector(np.zeros(dim)),
                        _const_scalar(0.0), "neg_laplace", elliptic_sign=-1)


def neg_laplace_plus_c(dim: int, c: float = 1.0) -> OperatorSpec:
    return OperatorSpec(dim, _const_matrix(-np.eye(dim)), _const_vector(np.zeros(dim)),
                        _const_scalar(c), "neg_laplace_plus_c", elliptic_sign=-1)


def advection_diffusion(dim: int, nu: float = 1.0, velocity=None, c: float = 0.0) -> OperatorSpec:
    if nu <= 0:
        raise ConfigurationError("diffusivity must be positive")
    vel = np.zeros(dim) if velocity is None else np.asarray(velocity, dtype=float)
    if vel.shape != (dim,):
        raise ConfigurationError("velocity arity does not match dimension")
    return OperatorSpec(dim, _const_matrix(-nu * np.eye(dim)), _const_vector(vel),
                        _const_scalar(c), "advection_diffusion", elliptic_sign=-1)


def identity(dim: int) -> OperatorSpec:
    return OperatorSpec(dim, _const_matrix(np.zeros((dim, dim))), _const_vector(np.zeros(dim)),
                        _const_scalar(1.0), "identity")


def zero_operator(dim: int) -> OperatorSpec:
    """The zero map; a PDE with this operator and ``g != 0`` has no solution."""
    return OperatorSpec(dim, _const_matrix(np.zeros((dim, dim))), _const_vector(np.zeros(dim)),
                        _const_scalar(0.0), "zero")


NAMED_OPERATORS = {
    "neg_laplace": neg_laplace,
    "neg_laplace_plus_c": neg_laplace_plus_c,
    "advection_diffusion": advection_diffusion,
    "identity": identity,
    "zero": zero_operator,
}


def make_operator(name: str, dim: int, **params) -> OperatorSpec:
    try:
        factory = NAMED_OPERATORS[name]
    except KeyError:
        raise ConfigurationError(f"unknown operator {name!r}") from None
    return factory(dim, **params)


def apply_operator(op: OperatorSpec, jet: Jet2, x) -> np.ndarray:
    """Apply ``op`` to a jet evaluated at ``x``.

    ``x`` is a single point (d,) or points (m, d); in the batched case the
    jet's leading axis runs over the points and any further batch axes are
    carried through.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    a, b, c0 = op.coefficients(X)
    v, g, h = jet.value, jet.gradient, jet.hessian
    if single:
        v, g, h = v[None], g[None], h[None]
    out = (np.einsum("m...ij,mij->m...", h, a)
           + np.einsum("m...i,mi->m...", g, b)
           + c0.reshape((-1,) + (1,) * (v.ndim - 1)) * v)
    return out[0] if single else out


def check_symmetric(op: OperatorSpec, grid: QuadratureGrid, atol: float = 1e-12) -> bool:
    a, _, _ = op.coefficients(grid.nodes)
    return bool(np.allclose(a, np.swapaxes(a, -1, -2), rtol=0, atol=atol))


def ellipticity_sign(op: OperatorSpec, grid: QuadratureGrid, tol: float = 1e-12) -> int:
    """+1 / -1 if ``a`` is definite with that sign at every node, else 0."""
    a, _, _ = op.coefficients(grid.nodes)
    eig = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))
    if np.all(eig > tol):
        return 1
    if np.all(eig < -tol):
        return -1
    return 0


def lipschitz_constant(op: OperatorSpec, grid: QuadratureGrid) -> float:
    """Constant ``k`` bounding ``|A f(x)|`` by ``k`` times the sum of ``|D_a f(x)|``.

    Off-diagonal second-order coefficients count twice because each mixed
    partial appears once in the multi-index sum but twice in ``a : H``.
    """
    a, b, c0 = op.coefficients(grid.nodes)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c0))):
        raise ConfigurationError("operator coefficient is not finite on the grid")
    d = op.dim
    off = np.abs(a + np.swapaxes(a, -1, -2))[:, ~np.eye(d, dtype=bool)] if d > 1 else np.zeros(1)
    parts = [np.abs(np.diagonal(a, axis1=1, axis2=2)).max(), off.max(initial=0.0),
             np.abs(b).max(initial=0.0), np.abs(c0).max()]
    return float(max(parts))


def jet_multiindex_l1(jet: Jet2) -> np.ndarray:
    """``sum_{|a|<=2} |D_a f|`` counting each mixed partial once."""
    d = jet.dim
    iu = np.triu_indices(d)
    return (np.abs(jet.value) + np.abs(jet.gradient).sum(axis=-1)
            + np.abs(jet.hessian[..., iu[0], iu[1]]).sum(axis=-1))


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form scalar field with its second-order jet."""

    name: str
    jet: JetField

    def __call__(self, X) -> np.ndarray:
        return self.jet(np.atleast_2d(X)).value


def sine_solution(domain: DomainSpec, amplitude: float = 1.0) -> ExactSolution:
    """``A * prod_k sin(pi (x_k - a_k) / L_k)`` on a box."""
    if not domain.is_rectangular:
        raise ConfigurationError("sine solution needs an interval or box")
    lo, hi = domain.as_box()
    k = np.pi / (hi - lo)

    def jet(X):
        X = np.atleast_2d(X)
        ph = k * (X - lo)
        s, c = np.sin(ph), np.cos(ph)
        d = X.shape[1]
        v = amplitude * np.prod(s, axis=1)
        g = np.empty_like(X)
        h = np.empty(X.shape + (d,))
        for i in range(d):
            fi = np.prod(np.delete(s, i, axis=1), axis=1)
            g[:, i] = amplitude * k[i] * c[:, i] * fi
            h[:, i, i] = -amplitude * k[i] ** 2 * s[:, i] * fi
            for j in range(i + 1, d):
                fij = np.prod(np.delete(s, [i, j], axis=1), axis=1)
                h[:, i, j] = h[:, j, i] = amplitude * k[i] * k[j] * c[:, i] * c[:, j] * fij
        return Jet2(v, g, h)

    return ExactSolution("sine", jet)


def bubble_solution(domain: DomainSpec, amplitude: float = 1.0) -> ExactSolution:
    """The default boundary function itself, e.g. ``x (1 - x)`` on [0, 1]."""
    from .domain import default_eta
    eta = default_eta(domain)
    return ExactSolution("bubble", lambda X: eta.jet(X).scale(amplitude))


NAMED_SOLUTIONS = {"sine": sine_solution, "bubble": bubble_solution}


def make_solution(name: str, domain: DomainSpec, **params) -> ExactSolution:
    try:
        factory = NAMED_SOLUTIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown manufactured solution {name!r}") from None
    return factory(domain, **params)


@dataclass(frozen=True)
class HomogenizedProblem:
    operator: OperatorSpec
    rhs: ScalarField
    domain: DomainSpec
    exact: Optional[ExactSolution] = None

    def residual_of_exact(self, grid: QuadratureGrid) -> float:
        """``||A u - g||_{L2(mu)}`` on ``grid``; ``nan`` without an exact solution."""
        if self.exact is None:
            return math.nan
        X = grid.nodes
        return grid.l2_norm(apply_operator(self.operator, self.exact.jet(X), X) - self.rhs(X))


def homogenize(op: OperatorSpec, h: ScalarField, f_bar: JetField, domain: DomainSpec,
               v: Optional[ExactSolution] = None) -> HomogenizedProblem:
    """Shift a Dirichlet problem ``A v = h, v = f on the boundary`` to zero boundary data.

    ``f_bar`` is any smooth extension of the boundary data; the result has
    ``g = h - A f_bar`` and, when ``v`` is supplied, exact solution ``v - f_bar``.
    """
    def g(X):
        X = np.atleast_2d(X)
        return np.asarray(h(X), dtype=float) - apply_operator(op, f_bar(X), X)

    exact = None
    if v is not None:
        exact = ExactSolution(f"{v.name}-shifted", lambda X: v.jet(X) - f_bar(X))
    return HomogenizedProblem(op, g, domain, exact)


def manufactured_problem(domain: DomainSpec, op: OperatorSpec, u_exact: ExactSolution,
                         n_boundary: int = 16) -> HomogenizedProblem:
    pts, _ = boundary_samples(domain, n_boundary)
    trace = np.abs(u_exact(pts)).max()
    if trace > 1e-10:
        raise ConfigurationError(f"manufactured solution does not vanish on the boundary ({trace:.3g})")

    def g(X):
        X = np.atleast_2d(X)
        return apply_operator(op, u_exact.jet(X), X)

    return HomogenizedProblem(op, g, domain, u_exact)


def zero_problem(domain: DomainSpec, op: OperatorSpec) -> HomogenizedProblem:
    """``g = 0`` with the zero solution."""
    zero = ExactSolution("zero", lambda X: Jet2.zeros(np.atleast_2d(X).shape[0], domain.dim))
    return HomogenizedProblem(op, lambda X: np.zeros(np.atleast_2d(X).shape[0]), domain, zero)


def validation_grid(domain: DomainSpec, resolution: int = 24) -> QuadratureGrid:
    return build_grid(domain, resolution)
