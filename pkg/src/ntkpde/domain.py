"""Spatial domains, sampling measure, boundary function and quadrature.

The sampling measure is the uniform probability measure on the domain.  Grids
are tensor-product Gauss-Legendre rules (polar product on the disc) whose
weights sum to one, so ``weights @ f(nodes)`` approximates an expectation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigurationError, ContractError
from .jets import GridJetField, Jet2

KINDS = ("interval", "box", "ball")


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    dim: int
    lower: tuple = ()
    upper: tuple = ()
    center: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unsupported domain kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("dimension must be positive")
        if self.kind in ("interval", "box"):
            lo = tuple(float(v) for v in self.lower)
            hi = tuple(float(v) for v in self.upper)
            if len(lo) != self.dim or len(hi) != self.dim:
                raise ConfigurationError("bounds arity does not match dimension")
            if any(a >= b for a, b in zip(lo, hi)):
                raise ConfigurationError("need lower < upper in every dimension")
            if self.kind == "interval" and self.dim != 1:
                raise ConfigurationError("an interval is one-dimensional")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            c = tuple(float(v) for v in self.center)
            if len(c) != self.dim:
                raise ConfigurationError("center arity does not match dimension")
            if not self.radius > 0:
                raise ConfigurationError("ball radius must be positive")
            if self.dim > 2:
                raise ConfigurationError("balls are supported for d <= 2 only")
            object.__setattr__(self, "center", c)
            object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def interval(cls, a: float, b: float) -> "DomainSpec":
        return cls("interval", 1, lower=(a,), upper=(b,))

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "DomainSpec":
        return cls("box", len(lower), lower=tuple(lower), upper=tuple(upper))

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "DomainSpec":
        return cls("ball", len(center), center=tuple(center), radius=radius)

    @property
    def is_rectangular(self) -> bool:
        return self.kind != "ball" or self.dim == 1

    def as_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper corner arrays (bounding box for balls)."""
        if self.kind == "ball":
            c = np.array(self.center)
            return c - self.radius, c + self.radius
        return np.array(self.lower), np.array(self.upper)

    def contains(self, X, strict: bool = True) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "ball":
            r2 = np.sum((X - np.array(self.center)) ** 2, axis=-1)
            return r2 < self.radius ** 2 if strict else r2 <= self.radius ** 2
        lo, hi = self.as_box()
        if strict:
            return np.all((X > lo) & (X < hi), axis=-1)
        return np.all((X >= lo) & (X <= hi), axis=-1)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` points from the uniform probability measure."""
        if self.kind == "ball" and self.dim == 2:
            r = self.radius * np.sqrt(rng.random(n))
            th = 2.0 * np.pi * rng.random(n)
            return np.array(self.center) + np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
        lo, hi = self.as_box()
        return lo + (hi - lo) * rng.random((n, self.dim))

    def to_config(self) -> dict:
        if self.kind == "ball":
            return {"kind": self.kind, "center": list(self.center), "radius": self.radius}
        return {"kind": self.kind, "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str = "gauss-legendre"

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.shape[0] != weights.shape[0]:
            raise ContractError("node and weight counts differ")
        if np.any(weights <= 0):
            raise ContractError("quadrature weights must be positive")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> np.ndarray:
        """Quadrature of per-node values against the sampling measure."""
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))

    def l2_norm(self, values) -> float:
        values = np.asarray(values, dtype=float)
        sq = values.reshape(values.shape[0], -1) ** 2
        return float(math.sqrt(self.weights @ sq.sum(axis=1)))


def _gauss_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def build_grid(domain: DomainSpec, resolution) -> QuadratureGrid:
    """Tensor Gauss-Legendre grid on ``domain`` normalised to total mass one.

    ``resolution`` is an int (same count in every direction) or one count per
    dimension; for the disc the two counts are (radial, angular).
    """
    res = np.broadcast_to(np.atleast_1d(np.asarray(resolution, dtype=int)), (domain.dim,))
    if np.any(res < 2):
        raise ContractError("resolution must be at least 2 per dimension")

    if domain.kind == "ball" and domain.dim == 2:
        rn, rw = _gauss_01(int(res[0]))
        r = domain.radius * rn
        n_th = int(res[1])
        th = 2.0 * np.pi * (np.arange(n_th) + 0.5) / n_th
        R, TH = np.meshgrid(r, th, indexing="ij")
        nodes = np.array(domain.center) + np.stack(
            [(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()], axis=-1)
        # polar Jacobian r dr dtheta; the angular rule is the periodic midpoint rule
        weights = np.repeat(rw * r, n_th)
        return QuadratureGrid(nodes, weights / weights.sum(), "gauss-legendre-polar")

    lo, hi = domain.as_box()
    rules = [_gauss_01(int(n)) for n in res]
    pts = [lo[k] + (hi[k] - lo[k]) * rules[k][0] for k in range(domain.dim)]
    mesh = np.meshgrid(*pts, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    weights = rules[0][1]
    for k in range(1, domain.dim):
        weights = np.multiply.outer(weights, rules[k][1])
    weights = np.ravel(weights)
    return QuadratureGrid(nodes, weights / weights.sum(), "gauss-legendre")


class AuxiliaryEta:
    """Smooth function positive inside the domain and zero on its boundary.

    Subclasses implement ``partial(X, counts)`` returning the mixed partial
    derivative with ``counts[k]`` derivatives in direction ``k``.
    """

    def __init__(self, dim: int):
        self.dim = dim

    def partial(self, X: np.ndarray, counts) -> np.ndarray:
        raise NotImplementedError

    def value(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.partial(X, (0,) * self.dim)

    def _counts(self, *axes):
        c = [0] * self.dim
        for a in axes:
            c[a] += 1
        return tuple(c)

    def jet(self, X) -> Jet2:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = self.dim
        v = self.value(X)
        g = np.stack([self.partial(X, self._counts(i)) for i in range(d)], axis=-1)
        h = np.empty(X.shape[:1] + (d, d))
        for i in range(d):
            for j in range(i, d):
                h[:, i, j] = h[:, j, i] = self.partial(X, self._counts(i, j))
        return Jet2(v, g, h)

    def third(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = self.dim
        t = np.empty(X.shape[:1] + (d, d, d))
        for idx in itertools.product(range(d), repeat=3):
            t[(slice(None),) + idx] = self.partial(X, self._counts(*idx))
        return t


class BoxEta(AuxiliaryEta):
    """Product of per-axis quadratics ``(x_k - a_k)(b_k - x_k)``."""

    def __init__(self, lower, upper):
        super().__init__(len(lower))
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)

    def partial(self, X, counts):
        X = np.atleast_2d(X)
        out = np.ones(X.shape[0])
        for k, n in enumerate(counts):
            a, b, x = self.lower[k], self.upper[k], X[:, k]
            if n == 0:
                out = out * (x - a) * (b - x)
            elif n == 1:
                out = out * (a + b - 2.0 * x)
            elif n == 2:
                out = out * -2.0
            else:
                return np.zeros(X.shape[0])
        return out


class BallEta(AuxiliaryEta):
    """``r^2 - |x - x0|^2``."""

    def __init__(self, center, radius):
        super().__init__(len(center))
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def partial(self, X, counts):
        X = np.atleast_2d(X)
        order = sum(counts)
        y = X - self.center
        if order == 0:
            return self.radius ** 2 - np.sum(y * y, axis=-1)
        if order == 1:
            return -2.0 * y[:, counts.index(1)]
        if order == 2 and max(counts) == 2:
            return np.full(X.shape[0], -2.0)
        return np.zeros(X.shape[0])


def default_eta(domain: DomainSpec) -> AuxiliaryEta:
    if domain.kind == "ball" and domain.dim == 2:
        return BallEta(domain.center, domain.radius)
    lo, hi = domain.as_box()
    return BoxEta(lo, hi)


def boundary_samples(domain: DomainSpec, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic boundary points and outward unit normals.

    Intervals always yield their two endpoints (the first ``count`` of them).
    Boxes spread points over the faces round-robin, never at corners.
    """
    if count < 1:
        raise ContractError("count must be positive")
    d = domain.dim
    if domain.kind == "ball" and d == 2:
        th = 2.0 * np.pi * np.arange(count) / count
        n = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return np.array(domain.center) + domain.radius * n, n

    lo, hi = domain.as_box()
    if d == 1:
        pts = np.array([[lo[0]], [hi[0]]])
        nrm = np.array([[-1.0], [1.0]])
        k = min(count, 2)
        return pts[:k], nrm[:k]

    n_faces = 2 * d
    per_face = -(-count // n_faces)
    frac = np.arange(1, per_face + 1) / (per_face + 1)
    faces = []
    for axis in range(d):
        for side, val in ((-1.0, lo[axis]), (1.0, hi[axis])):
            free = [k for k in range(d) if k != axis]
            pts = np.tile(0.5 * (lo + hi), (per_face, 1))
            # spread along the first free axis, centred in the rest
            pts[:, free[0]] = lo[free[0]] + frac * (hi[free[0]] - lo[free[0]])
            pts[:, axis] = val
            nrm = np.zeros((per_face, d))
            nrm[:, axis] = side
            faces.append((pts, nrm))
    order = [(j, f) for j in range(per_face) for f in range(n_faces)][:count]
    pts = np.array([faces[f][0][j] for j, f in order])
    nrm = np.array([faces[f][1][j] for j, f in order])
    return pts, nrm


def check_eta(eta: AuxiliaryEta, domain: DomainSpec, grid: QuadratureGrid,
              n_boundary: int = 16) -> None:
    """Raise if ``eta`` is not positive inside, zero on the boundary and transversal there."""
    if np.any(eta.value(grid.nodes) <= 0):
        raise ConfigurationError("eta must be positive at interior nodes")
    pts, nrm = boundary_samples(domain, n_boundary)
    jet = eta.jet(pts)
    if np.any(np.abs(jet.value) > 1e-12):
        raise ConfigurationError("eta must vanish on the boundary")
    if np.any(np.abs(np.sum(jet.gradient * nrm, axis=-1)) <= 1e-8):
        raise ConfigurationError("normal derivative of eta vanishes on the boundary")


def _multi_indices(d: int, order: int):
    return [a for a in itertools.combinations_with_replacement(range(d), order)]


def sobolev_norm(field: GridJetField, grid: QuadratureGrid, order: int) -> float:
    """Sum over multi-indices ``|a| <= order`` of the L2(mu) norms of ``D_a f``."""
    if order not in (0, 1, 2):
        raise ContractError("order must be 0, 1 or 2")
    if field.size != grid.size:
        raise ContractError("field and grid sizes differ")
    if order >= 1 and field.gradient is None or order == 2 and field.hessian is None:
        raise ContractError(f"field lacks derivatives of order {order}")
    w = grid.weights
    total = math.sqrt(w @ field.value ** 2)
    if order >= 1:
        total += float(np.sum(np.sqrt(w @ field.gradient ** 2)))
    if order == 2:
        for i, j in _multi_indices(grid.dim, 2):
            total += math.sqrt(w @ field.hessian[:, i, j] ** 2)
    return float(total)
