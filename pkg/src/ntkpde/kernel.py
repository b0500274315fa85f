"""Monte Carlo and finite-width estimates of the kernels U, S and B.

Every kernel is an expectation over one random unit ``(c, w, b)`` of an
inner product of gradient blocks.  Writing ``F_s(x)`` for the operator applied
to the blocks of sample ``s`` and ``G_s(x)`` for the plain blocks,

    U(x, y) ~ mean_s F_s(x) . G_s(y)
    S(x, y) ~ mean_s F_s(x) . F_s(y)
    B(x, y) ~ mean_s G_s(x) . G_s(y)

All entries share one sample set, so the assembled matrices are exact Gram
products: symmetry, positive semi-definiteness and the adjoint identity
between the PINN blocks hold to rounding.  Samples are drawn in fixed-size
chunks from Philox streams keyed by ``(seed, chunk index)``, which makes the
estimates independent of evaluation order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .domain import AuxiliaryEta, DomainSpec, QuadratureGrid, boundary_samples, build_grid
from .errors import ConfigurationError, ContractError
from .network import (Activation, InitDistribution, NetworkParams, unit_feature_jets,
                      unit_feature_values)
from .operator import OperatorSpec, apply_operator, lipschitz_constant


@dataclass(frozen=True)
class MCKernelConfig:
    m_mc: int = 10_000
    seed: int = 0
    chunk: int = 4096

    def __post_init__(self):
        if self.m_mc < 1 or self.chunk < 1:
            raise ConfigurationError("sample count and chunk size must be positive")

    def stream(self, chunk_index: int) -> np.random.Generator:
        # counter-based substream: the key is (seed, chunk) packed into 128 bits
        key = (int(self.seed) % 2 ** 64) << 64 | int(chunk_index)
        return np.random.Generator(np.random.Philox(key=key))

    def chunks(self, dist: InitDistribution, d: int) -> Iterator[tuple]:
        n_chunks = -(-self.m_mc // self.chunk)
        for j in range(n_chunks):
            n = min(self.chunk, self.m_mc - j * self.chunk)
            yield dist.sample(self.stream(j), n, d)


@dataclass(frozen=True)
class KernelSetup:
    """Everything the kernel expectations depend on besides the points."""

    act: Activation
    eta: AuxiliaryEta
    op: OperatorSpec
    dist: InitDistribution = InitDistribution()
    mc: MCKernelConfig = MCKernelConfig()

    @property
    def d(self) -> int:
        return self.op.dim


_POINT_BLOCK = 128


def _features(X, c, w, b, setup: KernelSetup, with_op: bool):
    """Flattened per-sample block features, shape (m, K * (d + 2)).

    Points are processed in blocks so the Hessian jets stay small.
    """
    out = []
    for start in range(0, len(X), _POINT_BLOCK):
        Xb = X[start:start + _POINT_BLOCK]
        if with_op:
            F = apply_operator(setup.op, unit_feature_jets(Xb, c, w, b, setup.act, setup.eta), Xb)
        else:
            F = unit_feature_values(Xb, c, w, b, setup.act, setup.eta)
        out.append(F.reshape(F.shape[0], -1))
    return np.concatenate(out, axis=0)


def _kernel(kind: str, X, Y, setup: KernelSetup, return_stderr: bool):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    lhs_op = kind in ("U", "S")
    rhs_op = kind == "S"
    P = setup.d + 2
    total = np.zeros((X.shape[0], Y.shape[0]))
    total_sq = np.zeros_like(total)
    for c, w, b in setup.mc.chunks(setup.dist, setup.d):
        Fx = _features(X, c, w, b, setup, lhs_op)
        Fy = _features(Y, c, w, b, setup, rhs_op)
        total += Fx @ Fy.T
        if return_stderr:
            per = np.einsum("ikp,jkp->ijk", Fx.reshape(len(X), -1, P), Fy.reshape(len(Y), -1, P))
            total_sq += np.einsum("ijk,ijk->ij", per, per)
    n = setup.mc.m_mc
    mean = total / n
    if not return_stderr:
        return mean
    var = np.maximum(total_sq / n - mean ** 2, 0.0) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def _entry(kind, x, y, setup, return_stderr):
    out = _kernel(kind, np.atleast_1d(x)[None], np.atleast_1d(y)[None], setup, return_stderr)
    if return_stderr:
        return float(out[0][0, 0]), float(out[1][0, 0])
    return float(out[0, 0])


def kernel_U_mc(x, y, setup: KernelSetup, return_stderr: bool = False):
    """``U(x, y)``: operator on the x-factor only; asymmetric in general."""
    return _entry("U", x, y, setup, return_stderr)


def kernel_S_mc(x, y, setup: KernelSetup, return_stderr: bool = False):
    return _entry("S", x, y, setup, return_stderr)


def kernel_B_mc(x, y, setup: KernelSetup, return_stderr: bool = False):
    return _entry("B", x, y, setup, return_stderr)


def kernel_matrix(kind: str, X, Y, setup: KernelSetup, return_stderr: bool = False):
    """Matrix ``K[i, j] = K(x_i, y_j)`` for ``kind`` in {"U", "S", "B"}."""
    if kind not in ("U", "S", "B"):
        raise ContractError(f"unknown kernel {kind!r}")
    return _kernel(kind, X, Y, setup, return_stderr)


def kernel_U_jets(X, Y, setup: KernelSetup):
    """``D^y_a U(x_i, y_j)`` for ``|a| <= 2``: arrays (mx, my), (mx, my, d), (mx, my, d, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    d = setup.d
    val = np.zeros((len(X), len(Y)))
    grad = np.zeros((len(X), len(Y), d))
    hess = np.zeros((len(X), len(Y), d, d))
    for c, w, b in setup.mc.chunks(setup.dist, d):
        Fx = _features(X, c, w, b, setup, True)
        J = unit_feature_jets(Y, c, w, b, setup.act, setup.eta)
        my = len(Y)
        val += Fx @ J.value.reshape(my, -1).T
        grad += np.einsum("ik,jkd->ijd", Fx, J.gradient.reshape(my, -1, d))
        hess += np.einsum("ik,jkab->ijab", Fx, J.hessian.reshape(my, -1, d, d))
    n = setup.mc.m_mc
    return val / n, grad / n, hess / n


def empirical_kernel_U(params0: NetworkParams, eta: AuxiliaryEta, act: Activation,
                       op: OperatorSpec, x, y) -> np.ndarray:
    """Finite-width kernel ``N^(2 beta - 1) grad_theta A Q(x) . grad_theta Q(y)``.

    Accepts single points or point arrays; returns a scalar or an (mx, my) matrix.
    """
    single = np.ndim(x) == 1 and np.ndim(y) == 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    J = unit_feature_jets(np.vstack([X, Y]), params0.c, params0.w, params0.b, act, eta)
    FA = apply_operator(op, J[:len(X)], X).reshape(len(X), -1)
    G = J.value[len(X):].reshape(len(Y), -1)
    # N^(2b-1) * (N^-b)^2 = 1 / N
    K = FA @ G.T / params0.N
    return float(K[0, 0]) if single else K


@dataclass(frozen=True)
class KernelMatrices:
    """Kernels on a quadrature grid, plus the PINN blocks when observations exist.

    ``U_h[i, j] = U(x_i, x_j)`` and ``S_h[i, j] = S(x_i, x_j)``.  With
    observations ``z_1 .. z_M``: ``B_obs[i, l] = B(z_i, z_l)``,
    ``U_obs[j, i] = U(x_j, z_i)``, ``Ubar[i, j] = w_j U(x_j, z_i)`` (the
    operator g -> (U g)(z_i)), ``Bbar[l, i] = B(z_i, z_l) / M`` and
    ``AB_h[k, i] = (A B e_i)(x_k)`` built from separate feature products;
    ``B_og[i, k] = B(z_i, x_k)`` feeds the data term of the limit network.
    """

    U_h: np.ndarray
    S_h: np.ndarray
    weights: np.ndarray
    nodes: np.ndarray
    obs_points: Optional[np.ndarray] = None
    B_obs: Optional[np.ndarray] = None
    U_obs: Optional[np.ndarray] = None
    Ubar: Optional[np.ndarray] = None
    Bbar: Optional[np.ndarray] = None
    AB_h: Optional[np.ndarray] = None
    B_og: Optional[np.ndarray] = None

    @property
    def n_obs(self) -> int:
        return 0 if self.obs_points is None else len(self.obs_points)


def assemble_kernels(grid: QuadratureGrid, obs_points, setup: KernelSetup) -> KernelMatrices:
    """Fill all kernel blocks from one shared sample set."""
    X = grid.nodes
    m = len(X)
    Z = None if obs_points is None or len(obs_points) == 0 else np.atleast_2d(obs_points)
    S = np.zeros((m, m))
    U = np.zeros((m, m))
    if Z is not None:
        M = len(Z)
        B = np.zeros((M, M))
        Uo = np.zeros((m, M))
        AB = np.zeros((m, M))
        Bog = np.zeros((M, m))
    for c, w, b in setup.mc.chunks(setup.dist, setup.d):
        J = unit_feature_jets(X, c, w, b, setup.act, setup.eta)
        F = apply_operator(setup.op, J, X).reshape(m, -1)
        G = J.value.reshape(m, -1)
        S += F @ F.T
        U += F @ G.T
        if Z is not None:
            Go = _features(Z, c, w, b, setup, False)
            B += Go @ Go.T
            Uo += F @ Go.T
            AB += (Go @ F.T).T
            Bog += Go @ G.T
    n = setup.mc.m_mc
    if Z is None:
        return KernelMatrices(U / n, S / n, grid.weights.copy(), X.copy())
    Uo = Uo / n
    B = B / n
    return KernelMatrices(U / n, S / n, grid.weights.copy(), X.copy(), obs_points=Z.copy(),
                          B_obs=B, U_obs=Uo, Ubar=(Uo * grid.weights[:, None]).T,
                          Bbar=B.T / M, AB_h=AB / n / M, B_og=Bog / n)


def adjointness_residual(km: KernelMatrices, g, v) -> float:
    """``|<Ubar g, v>_{mu_x} - <g, A B v>_mu|`` for one pair of vectors."""
    M = km.n_obs
    lhs = (km.Ubar @ g) @ v / M
    rhs = km.weights @ (g * (km.AB_h @ v))
    return float(abs(lhs - rhs))


def kernel_S_bound(setup: KernelSetup, domain: DomainSpec, n_w: int = 200_000,
                   seed: int = 12345) -> float:
    """Uniform bound ``k2`` on ``|S(x, y)|`` from term-by-term derivative bounds.

    Each operator-applied gradient block is bounded by ``k1 * W`` with
    ``W = 1 + sum_i |w_i| + sum_ij |w_i w_j|``; then
    ``|S| <= (d + 2) k1^2 E[W^2]``, the expectation taken by Monte Carlo.
    """
    d = setup.d
    grid = build_grid(domain, 64 if d == 1 else 24)
    pts = np.vstack([grid.nodes, boundary_samples(domain, 64)[0]])
    k_op = lipschitz_constant(setup.op, QuadratureGrid(pts, np.ones(len(pts))))
    ej = setup.eta.jet(pts)
    E0 = np.abs(ej.value).max()
    E1 = np.abs(ej.gradient).max()
    E2 = np.abs(ej.hessian).max()
    lo, hi = domain.as_box()
    Px = max(1.0, float(np.max(np.abs(np.concatenate([lo, hi])))))
    sup = setup.act.sup_bounds()
    T0, T1, T2 = max(sup[0], sup[1]), max(sup[1], sup[2]), max(sup[2], sup[3])
    A0 = E0 * Px * T0 + d * E1 * Px * T0 + E0 * T0 + d * d * (E2 * Px * T0 + 2 * E1 * T0)
    A1 = E0 * Px * T1 + 2 * d * (E1 * Px * T1 + E0 * T1)
    A2 = E0 * Px * T2
    k1 = k_op * max(1.0, setup.dist.c_bound) * max(A0, A1, A2)
    rng = np.random.default_rng(seed)
    w = np.abs(rng.normal(0.0, setup.dist.w_std, size=(n_w, d)))
    W = 1.0 + w.sum(axis=1) + w.sum(axis=1) ** 2
    return float((d + 2) * k1 ** 2 * np.mean(W ** 2))


def write_kernel_csv(K, path, row_label: str = "i") -> None:
    """Row-major CSV with a header naming the column grid indices."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([row_label] + [f"j{j}" for j in range(K.shape[1])])
        for i, row in enumerate(K):
            writer.writerow([i] + [repr(float(v)) for v in row])
