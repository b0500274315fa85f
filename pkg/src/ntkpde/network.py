"""Single-hidden-layer approximator ``Q = eta * N^-beta sum_i c_i sigma(w_i . x + b_i)``.

All spatial, parameter and mixed derivatives are closed form.  The flat
parameter vector is ordered as the c-block (N), the w-block in row-major
order (N x d, index ``i * d + k``) and the b-block (N).

The per-unit building block is ``unit_feature_jets``: for every point and
unit it returns the second-order jet of the three gradient blocks of a
width-one, unscaled network ``eta(x) c sigma(w . x + b)``.  The kernel module
reuses it verbatim for its Monte Carlo expectations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import AuxiliaryEta
from .errors import ConfigurationError, ContractError
from .jets import Jet2
from .operator import OperatorSpec, apply_operator


@dataclass(frozen=True)
class Activation:
    """Activation with closed-form derivatives of order 0 to 4."""

    name: str
    derivs: tuple  # five vectorised callables

    def __call__(self, z):
        return self.derivs[0](z)

    def derivatives(self, z, upto: int = 4) -> list:
        return [self.derivs[k](z) for k in range(upto + 1)]

    def sup_bounds(self, span: float = 40.0, n: int = 200001) -> np.ndarray:
        """Numerical ``sup |sigma^(k)|`` for k = 0..4 over ``[-span, span]``."""
        z = np.linspace(-span, span, n)
        return np.array([np.max(np.abs(f(z))) for f in self.derivs])

    def check(self) -> None:
        sup = self.sup_bounds()
        if not np.all(np.isfinite(sup)) or np.any(sup > 1e6):
            raise ConfigurationError(f"activation {self.name} is not C4-bounded")
        if self(np.array(1.0)) == self(np.array(0.0)):
            raise ConfigurationError(f"activation {self.name} looks constant")


def _tanh_derivs():
    def d1(z):
        t = np.tanh(z)
        return 1.0 - t * t

    def d2(z):
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)

    def d3(z):
        t = np.tanh(z)
        return -2.0 * (1.0 - t * t) * (1.0 - 3.0 * t * t)

    def d4(z):
        t = np.tanh(z)
        return 8.0 * t * (1.0 - t * t) * (2.0 - 3.0 * t * t)

    return (np.tanh, d1, d2, d3, d4)


def _sigmoid_derivs():
    def s0(z):
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def s1(z):
        s = s0(z)
        return s * (1.0 - s)

    def s2(z):
        s = s0(z)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def s3(z):
        s = s0(z)
        p = s * (1.0 - s)
        return p * (1.0 - 6.0 * p)

    def s4(z):
        s = s0(z)
        p = s * (1.0 - s)
        return p * (1.0 - 2.0 * s) * (1.0 - 12.0 * p)

    return (s0, s1, s2, s3, s4)


def _linear_derivs():
    def zero(z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def one(z):
        return np.ones_like(np.asarray(z, dtype=float))

    return (lambda z: np.asarray(z, dtype=float), one, zero, zero, zero)


ACTIVATIONS = {
    "tanh": Activation("tanh", _tanh_derivs()),
    "sigmoid": Activation("sigmoid", _sigmoid_derivs()),
}
# unbounded; only for exact polynomial checks in tests
LINEAR = Activation("linear", _linear_derivs())


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown activation {name!r}") from None


@dataclass(frozen=True)
class InitDistribution:
    """``c ~ U[-K0, K0]``, ``w, b ~ N(0, std^2)``."""

    c_bound: float = 1.0
    w_std: float = 1.0
    b_std: float = 1.0

    def __post_init__(self):
        if self.c_bound <= 0 or self.w_std <= 0 or self.b_std <= 0:
            raise ConfigurationError("initialisation scales must be positive")

    def sample(self, rng: np.random.Generator, n: int, d: int):
        c = rng.uniform(-self.c_bound, self.c_bound, size=n)
        w = rng.normal(0.0, self.w_std, size=(n, d))
        b = rng.normal(0.0, self.b_std, size=n)
        return c, w, b


@dataclass(frozen=True)
class NetworkParams:
    c: np.ndarray
    w: np.ndarray
    b: np.ndarray
    beta: float = 0.6

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if w.shape[0] != c.shape[0] or b.shape[0] != c.shape[0]:
            raise ContractError("parameter array lengths disagree")
        if not 0.5 < self.beta < 1.0:
            raise ConfigurationError("beta must lie in (1/2, 1)")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def N(self) -> int:
        return self.c.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def size(self) -> int:
        return (self.d + 2) * self.N

    @property
    def scale(self) -> float:
        return float(self.N) ** -self.beta

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.c, self.w.ravel(), self.b])

    def with_vector(self, theta) -> "NetworkParams":
        theta = np.asarray(theta, dtype=float)
        N, d = self.N, self.d
        if theta.shape != (self.size,):
            raise ContractError(f"expected a vector of length {self.size}")
        return NetworkParams(theta[:N], theta[N:N + N * d].reshape(N, d),
                             theta[N + N * d:], self.beta)


def init_params(N: int, d: int, dist: InitDistribution = InitDistribution(),
                seed: int = 0, beta: float = 0.6) -> NetworkParams:
    if N < 1:
        raise ContractError("width must be positive")
    rng = np.random.default_rng(seed)
    c, w, b = dist.sample(rng, N, d)
    return NetworkParams(c, w, b, beta)


@dataclass(frozen=True)
class ClippingSpec:
    beta: float = 0.6
    delta: float = 0.05
    epsilon: float = 0.12

    def __post_init__(self):
        if not 0.5 < self.beta < 1.0:
            raise ConfigurationError("beta must lie in (1/2, 1)")
        if not self.epsilon > self.delta > 0:
            raise ConfigurationError("need epsilon > delta > 0")
        if not self.epsilon + self.delta < (1.0 - self.beta) / 2:
            raise ConfigurationError("need epsilon + delta < (1 - beta) / 2")

    def residual_threshold(self, N: int) -> float:
        return float(N) ** self.delta

    def gradient_threshold(self, N: int) -> float:
        return float(N) ** (self.epsilon - self.beta)

    def deviation_exponent(self) -> float:
        return self.beta + self.delta + self.epsilon - 1.0


@dataclass(frozen=True)
class NoClipping:
    """Stand-in for ``ClippingSpec`` with both clips switched off."""

    beta: float = 0.6

    def residual_threshold(self, N: int) -> float:
        return np.inf

    def gradient_threshold(self, N: int) -> float:
        return np.inf


def smooth_clip(v, threshold: float):
    """Identity on ``[-T, T]``, ``T + T tanh((|v| - T) / T)`` beyond, odd.

    Increasing, C2 at the junction, slope at most one and bounded by ``2T``.
    """
    if not threshold > 0:
        raise ContractError("clipping threshold must be positive")
    v = np.asarray(v, dtype=float)
    if np.isinf(threshold):
        return v
    T = float(threshold)
    a = np.abs(v)
    out = np.where(a <= T, v, np.sign(v) * (T + T * np.tanh((a - T) / T)))
    return out if out.ndim else float(out)


def clip_vector(vec, threshold: float) -> np.ndarray:
    return np.asarray(smooth_clip(np.asarray(vec, dtype=float), threshold))


def _product_jet(e, ge, He, t0, t1, t2, w):
    """Jet of ``eta(x) tau(w . x + b)`` over points (m) and units (K)."""
    val = e[:, None] * t0
    grad = ge[:, None, :] * t0[..., None] + (e[:, None] * t1)[..., None] * w[None]
    cross = ge[:, None, :, None] * w[None, :, None, :]
    hess = (He[:, None] * t0[..., None, None]
            + t1[..., None, None] * (cross + np.swapaxes(cross, -1, -2))
            + (e[:, None] * t2)[..., None, None] * (w[:, :, None] * w[:, None, :])[None])
    return val, grad, hess


def unit_feature_jets(X, c, w, b, act: Activation, eta: AuxiliaryEta) -> Jet2:
    """Jets of ``grad_{c,w,b} [eta(x) c sigma(w . x + b)]`` for every point and unit.

    Returns a jet whose value has shape (m, K, d + 2), block index ordered as
    (c, w_1 .. w_d, b); gradient and Hessian append (d,) and (d, d).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.atleast_2d(w)
    m, d = X.shape
    K = w.shape[0]
    ej = eta.jet(X)
    e, ge, He = ej.value, ej.gradient, ej.hessian
    z = X @ w.T + b
    s = act.derivatives(z, upto=3)

    v0, g0, h0 = _product_jet(e, ge, He, s[0], s[1], s[2], w)
    v1, g1, h1 = _product_jet(e, ge, He, s[1], s[2], s[3], w)

    P = d + 2
    val = np.empty((m, K, P))
    grad = np.empty((m, K, P, d))
    hess = np.empty((m, K, P, d, d))
    val[:, :, 0], grad[:, :, 0], hess[:, :, 0] = v0, g0, h0
    val[:, :, P - 1] = c * v1
    grad[:, :, P - 1] = c[:, None] * g1
    hess[:, :, P - 1] = c[:, None, None] * h1
    eye = np.eye(d)
    for k in range(d):
        xk = X[:, k][:, None]
        val[:, :, 1 + k] = c * (v1 * xk)
        gk = g1 * xk[..., None] + v1[..., None] * eye[k]
        hk = (h1 * xk[..., None, None] + g1[..., :, None] * eye[k][None, None, None, :]
              + eye[k][None, None, :, None] * g1[..., None, :])
        grad[:, :, 1 + k] = c[:, None] * gk
        hess[:, :, 1 + k] = c[:, None, None] * hk
    return Jet2(val, grad, hess)


def unit_feature_values(X, c, w, b, act: Activation, eta: AuxiliaryEta) -> np.ndarray:
    """Value part of :func:`unit_feature_jets` alone, shape (m, K, d + 2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.atleast_2d(w)
    e = eta.value(X)[:, None]
    s0, s1 = act.derivatives(X @ w.T + b, upto=1)
    v1 = c * e * s1
    return np.concatenate([(e * s0)[..., None], v1[..., None] * X[:, None, :], v1[..., None]],
                          axis=-1)


def _to_global(F: np.ndarray, d: int) -> np.ndarray:
    """(m, N, d + 2, ...) unit blocks -> (m, (d + 2) N, ...) in the global ordering."""
    m, N = F.shape[:2]
    rest = F.shape[3:]
    wblock = F[:, :, 1:1 + d].reshape((m, N * d) + rest)
    return np.concatenate([F[:, :, 0], wblock, F[:, :, d + 1]], axis=1)


def _points(x):
    x = np.asarray(x, dtype=float)
    return x.ndim == 1, np.atleast_2d(x)


def eval_jet(params: NetworkParams, eta: AuxiliaryEta, act: Activation, x) -> Jet2:
    """Value, gradient and Hessian of Q at one point (d,) or many (m, d)."""
    single, X = _points(x)
    ej = eta.jet(X)
    z = X @ params.w.T + params.b
    s = act.derivatives(z, upto=2)
    sc = params.scale * params.c
    v, g, h = _product_jet(ej.value, ej.gradient, ej.hessian, s[0], s[1], s[2], params.w)
    jet = Jet2(v @ sc, np.einsum("mkd,k->md", g, sc), np.einsum("mkij,k->mij", h, sc))
    return jet[0] if single else jet


def network_jets(params: NetworkParams, eta: AuxiliaryEta, act: Activation, x) -> Jet2:
    """Jets of every entry of the parameter gradient, shape (m, (d + 2) N)."""
    single, X = _points(x)
    J = unit_feature_jets(X, params.c, params.w, params.b, act, eta)
    d, s = params.d, params.scale
    jet = Jet2(s * _to_global(J.value, d), s * _to_global(J.gradient, d),
               s * _to_global(J.hessian, d))
    return jet[0] if single else jet


def param_gradient(params: NetworkParams, eta: AuxiliaryEta, act: Activation, x) -> np.ndarray:
    single, X = _points(x)
    J = unit_feature_jets(X, params.c, params.w, params.b, act, eta)
    out = params.scale * _to_global(J.value, params.d)
    return out[0] if single else out


def param_gradient_of_AQ(params: NetworkParams, eta: AuxiliaryEta, act: Activation,
                         op: OperatorSpec, x) -> np.ndarray:
    """``grad_theta (A Q)(x)``: the operator applied in x to each gradient entry."""
    single, X = _points(x)
    J = unit_feature_jets(X, params.c, params.w, params.b, act, eta)
    out = params.scale * _to_global(apply_operator(op, J, X), params.d)
    return out[0] if single else out


def mixed_param_space_derivative(params: NetworkParams, eta: AuxiliaryEta, act: Activation,
                                 x, alpha: Sequence[int]) -> np.ndarray:
    """``D_alpha grad_theta Q(x)`` for a multi-index ``alpha`` (counts per axis)."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != params.d or min(alpha, default=0) < 0:
        raise ContractError("multi-index must have one non-negative entry per dimension")
    order = sum(alpha)
    if order > 2:
        raise ContractError("only derivatives up to order 2 are available")
    jet = network_jets(params, eta, act, x)
    axes = [k for k, n in enumerate(alpha) for _ in range(n)]
    if order == 0:
        return jet.value
    if order == 1:
        return jet.gradient[..., axes[0]]
    return jet.hessian[..., axes[0], axes[1]]


@dataclass(frozen=True)
class Architecture:
    """The fixed, non-trainable parts of the approximator."""

    act: Activation
    eta: AuxiliaryEta


def alpha_N(N: int, beta: float) -> float:
    """Learning-rate scaling ``N^(2 beta - 1)``."""
    return float(N) ** (2.0 * beta - 1.0)
