"""Second-order jets (value, gradient, Hessian) of scalar fields.

A jet may carry leading batch axes: ``value`` has shape ``B``, ``gradient``
``B + (d,)`` and ``hessian`` ``B + (d, d)``.  The batch form is what every
vectorised routine in the package passes around; a single-point jet is the
special case ``B == ()``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class Jet2:
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        g = np.asarray(self.gradient, dtype=float)
        h = np.asarray(self.hessian, dtype=float)
        if g.shape[:-1] != v.shape or h.shape[:-2] != v.shape or h.shape[-2:] != (g.shape[-1],) * 2:
            raise ContractError(
                f"inconsistent jet shapes {v.shape}, {g.shape}, {h.shape}")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "hessian", h)

    @property
    def dim(self) -> int:
        return self.gradient.shape[-1]

    def __add__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value + other.value, self.gradient + other.gradient,
                    self.hessian + other.hessian)

    def __sub__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value - other.value, self.gradient - other.gradient,
                    self.hessian - other.hessian)

    def scale(self, s) -> "Jet2":
        return Jet2(s * self.value, s * self.gradient, s * self.hessian)

    def __getitem__(self, idx) -> "Jet2":
        return Jet2(self.value[idx], self.gradient[idx], self.hessian[idx])

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.hessian, np.swapaxes(self.hessian, -1, -2),
                                rtol=0.0, atol=atol))

    @classmethod
    def zeros(cls, batch_shape, d: int) -> "Jet2":
        batch_shape = tuple(np.atleast_1d(batch_shape)) if batch_shape != () else ()
        return cls(np.zeros(batch_shape), np.zeros(batch_shape + (d,)),
                   np.zeros(batch_shape + (d, d)))


@dataclass(frozen=True)
class GridJetField:
    """Per-node derivatives of a scalar field on a quadrature grid.

    Missing orders are ``None``; ``sobolev_norm`` refuses fields that lack
    the orders it needs.
    """

    value: np.ndarray
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        if v.ndim != 1:
            raise ContractError("grid field values must be one value per node")
        object.__setattr__(self, "value", v)
        m = v.shape[0]
        for name, extra in (("gradient", 1), ("hessian", 2), ("third", 3)):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != 1 + extra or arr.shape[0] != m:
                raise ContractError(f"{name} has shape {arr.shape} for {m} nodes")
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.value.shape[0]

    @classmethod
    def from_jet(cls, jet: Jet2, third=None) -> "GridJetField":
        return cls(jet.value, jet.gradient, jet.hessian, third)

    def __sub__(self, other: "GridJetField") -> "GridJetField":
        def diff(a, b):
            return None if a is None or b is None else a - b
        return GridJetField(self.value - other.value,
                            diff(self.gradient, other.gradient),
                            diff(self.hessian, other.hessian),
                            diff(self.third, other.third))

    def scale(self, s: float) -> "GridJetField":
        def mul(a):
            return None if a is None else s * a
        return GridJetField(s * self.value, mul(self.gradient), mul(self.hessian),
                            mul(self.third))
