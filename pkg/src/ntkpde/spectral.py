"""Eigen-analysis of the discretised kernel operators and the limit dynamics.

Grid functions enter in *weighted coordinates* ``rho = sqrt(w) * r`` so that
the Euclidean inner product equals the L2(mu) inner product.  The integral
operator ``f -> sum_i w_i f(x_i) S(x_i, .)`` then becomes the symmetric matrix
``W^1/2 S W^1/2``, and the residual dynamics ``d rho / dt = -M rho`` are solved
mode by mode.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ContractError, PSDViolationError, StepSizeError
from .jets import GridJetField
from .kernel import KernelMatrices


def _asymmetry(K) -> float:
    scale = max(float(np.abs(K).max(initial=0.0)), 1e-300)
    return float(np.abs(K - K.T).max(initial=0.0)) / scale


def weighted_symmetrize(K, weights, tol: float = 1e-6) -> np.ndarray:
    """``sqrt(w_i) K_ij sqrt(w_j)``, symmetrised by averaging with the transpose."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ContractError("weights must be positive")
    if _asymmetry(K) > tol:
        raise AssemblyError(f"kernel matrix asymmetric (relative {_asymmetry(K):.2e})")
    s = np.sqrt(weights)
    M = s[:, None] * K * s[None, :]
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal
    tau: float

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def null_mask(self) -> np.ndarray:
        top = max(float(self.eigenvalues[0]), 0.0)
        return self.eigenvalues <= self.tau * top

    @property
    def positive_mask(self) -> np.ndarray:
        return ~self.null_mask

    @property
    def positive_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.positive_mask]

    def matrix(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def spectral_decompose(M, tau: float = 1e-10) -> SpectralDecomposition:
    """Full symmetric eigendecomposition with null-mode classification.

    Eigenvalues below ``-tau * lambda_1`` mean the matrix is not PSD, which
    points at an assembly bug or an insufficient Monte Carlo budget.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if _asymmetry(M) > 1e-8:
        raise ContractError("matrix must be symmetric")
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    lam, V = lam[::-1].copy(), V[:, ::-1].copy()
    # fix eigenvector signs so the decomposition is reproducible
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    V *= np.where(flip == 0, 1.0, flip)
    top = max(float(lam[0]), 0.0)
    if lam[-1] < -tau * top:
        raise PSDViolationError(
            f"eigenvalue {lam[-1]:.3e} below -tau * lambda_1 = {-tau * top:.3e}")
    return SpectralDecomposition(lam, V, tau)


def to_weighted(r, weights) -> np.ndarray:
    return np.sqrt(weights) * np.asarray(r, dtype=float)


def from_weighted(rho, weights) -> np.ndarray:
    return np.asarray(rho, dtype=float) / np.sqrt(weights)


def residual_projections(r, decomp: SpectralDecomposition, weights) -> np.ndarray:
    """Coefficients ``h_i = <r, e_i>_{L2(mu)}`` of a grid function."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != decomp.size:
        raise ContractError("residual size does not match the decomposition")
    return decomp.eigenvectors.T @ to_weighted(r, weights)


def evolve_residual_spectral(h0, decomp: SpectralDecomposition, t: float) -> np.ndarray:
    """``h_i(t) = h_i(0) exp(-lambda_i t)`` on positive modes; null modes frozen."""
    if t < 0:
        raise ContractError("time must be non-negative")
    lam = np.where(decomp.positive_mask, decomp.eigenvalues, 0.0)
    return np.asarray(h0, dtype=float) * np.exp(-lam * t)


def _rk4_step(M, y, dt):
    k1 = -M @ y
    k2 = -M @ (y + 0.5 * dt * k1)
    k3 = -M @ (y + 0.5 * dt * k2)
    k4 = -M @ (y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve_residual_euler(rho0, M, dt: float, T: float, method: str = "euler",
                          record_every: int = 0):
    """Explicit time stepping of ``d rho / dt = -M rho`` in weighted coordinates.

    Returns ``rho_T``, or ``(times, trajectory)`` when ``record_every > 0``.
    """
    if dt <= 0:
        raise ContractError("time step must be positive")
    if T < 0:
        raise ContractError("horizon must be non-negative")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    y = np.asarray(rho0, dtype=float).copy()
    n = int(math.ceil(T / dt - 1e-12))
    h = T / n if n else 0.0
    norm0 = float(np.linalg.norm(y))
    times, traj = [0.0], [y.copy()]
    for k in range(n):
        y = y - h * (M @ y) if method == "euler" else _rk4_step(M, y, h)
        if np.linalg.norm(y) > 10.0 * norm0 + 1e-300:
            raise StepSizeError(f"residual grew tenfold at step {k + 1}; reduce dt")
        if record_every and ((k + 1) % record_every == 0 or k + 1 == n):
            times.append((k + 1) * h)
            traj.append(y.copy())
    if record_every:
        return np.array(times), np.array(traj)
    return y


def null_projection_check(r0, decomp: SpectralDecomposition, weights=None) -> float:
    """Fraction of ``||r0||^2`` carried by null modes (0 for a vanishing residual)."""
    rho = np.asarray(r0, dtype=float) if weights is None else to_weighted(r0, weights)
    total = float(rho @ rho)
    if math.sqrt(total) < 1e-14:
        return 0.0
    h = decomp.eigenvectors.T @ rho
    return float(np.sum(h[decomp.null_mask] ** 2) / total)


@dataclass(frozen=True)
class LimitSolution:
    """Closed-form wide-limit trajectory started from ``Q_0 = 0``.

    ``h0`` are the eigen-coefficients of the initial residual ``r_0 = -g``.
    """

    decomp: SpectralDecomposition
    weights: np.ndarray
    h0: np.ndarray

    @classmethod
    def from_residual(cls, decomp, weights, r0) -> "LimitSolution":
        return cls(decomp, np.asarray(weights, dtype=float),
                   residual_projections(r0, decomp, weights))

    @property
    def null_fraction(self) -> float:
        total = float(self.h0 @ self.h0)
        if math.sqrt(total) < 1e-14:
            return 0.0
        return float(np.sum(self.h0[self.decomp.null_mask] ** 2) / total)

    def coefficients(self, t: float) -> np.ndarray:
        return evolve_residual_spectral(self.h0, self.decomp, t)

    def residual(self, t: float) -> np.ndarray:
        """Grid values of ``A Q_t - g``."""
        return from_weighted(self.decomp.eigenvectors @ self.coefficients(t), self.weights)

    def residual_norm(self, t: float) -> float:
        return float(np.linalg.norm(self.coefficients(t)))

    def time_integrated_residual(self, t: float) -> np.ndarray:
        """Weighted coordinates of ``int_0^t r_s ds`` over positive modes."""
        if t < 0:
            raise ContractError("time must be non-negative")
        pos = self.decomp.positive_mask
        lam = self.decomp.eigenvalues[pos]
        factor = -np.expm1(-lam * t) / lam
        return self.decomp.eigenvectors[:, pos] @ (self.h0[pos] * factor)

    def Q(self, t: float, U_cols) -> np.ndarray:
        """``Q_t(y) = -sum_i w_i (int_0^t r_s ds)(x_i) U(x_i, y)``.

        ``U_cols`` has one row per grid node and trailing axes for the
        evaluation points (and derivative indices, for jets).
        """
        s = np.sqrt(self.weights)
        coeff = s * self.time_integrated_residual(t)
        return -np.tensordot(coeff, np.asarray(U_cols, dtype=float), axes=(0, 0))

    def jets(self, t: float, U_jets) -> GridJetField:
        val, grad, hess = U_jets
        return GridJetField(self.Q(t, val), self.Q(t, grad), self.Q(t, hess))


@dataclass(frozen=True)
class LimitQ:
    values: np.ndarray
    null_fraction: float
    warning: bool


def limit_solution_Q(decomp: SpectralDecomposition, U_h, r0, t: float, weights) -> LimitQ:
    """Grid values of the wide-limit network at time ``t``.

    ``warning`` is set when more than 1e-6 of the initial residual energy sits
    in null modes, which signals an unsolvable problem or a discretisation
    mismatch: those components never decay.
    """
    sol = LimitSolution.from_residual(decomp, weights, r0)
    frac = sol.null_fraction
    if frac > 1e-6:
        warnings.warn(f"initial residual has {frac:.2e} of its energy in null modes",
                      RuntimeWarning, stacklevel=2)
    return LimitQ(sol.Q(t, U_h), frac, frac > 1e-6)


def assemble_V(km: KernelMatrices, tol: float = 1e-8) -> np.ndarray:
    """Symmetric block operator for the joint PDE/data residual.

    Grid block in ``sqrt(w)`` coordinates, observation block scaled by
    ``1 / sqrt(M)``.  The upper-right block comes from ``A B`` and the
    lower-left from ``Ubar``; they must be transposes of each other.
    """
    w = km.weights
    S_w = weighted_symmetrize(km.S_h, w)
    M = km.n_obs
    if M == 0:
        return S_w
    s = np.sqrt(w)
    top_right = s[:, None] * km.AB_h * math.sqrt(M)
    bottom_left = km.Ubar / s[None, :] / math.sqrt(M)
    Bw = km.Bbar
    V = np.block([[S_w, top_right], [bottom_left, Bw]])
    dev = float(np.abs(V - V.T).max())
    if dev > tol * max(float(np.abs(V).max()), 1e-300):
        raise AssemblyError(f"block operator asymmetric by {dev:.2e}")
    return 0.5 * (V + V.T)


def combined_residual(r_grid, e_obs, weights) -> np.ndarray:
    """Stack a grid residual and an observation residual in joint weighted coordinates."""
    e_obs = np.asarray(e_obs, dtype=float)
    return np.concatenate([to_weighted(r_grid, weights), e_obs / math.sqrt(max(len(e_obs), 1))])


def evolve_pinn(r0_combined, decomp: SpectralDecomposition, t: float) -> np.ndarray:
    """Combined residual at time ``t`` (joint weighted coordinates)."""
    V = decomp.eigenvectors
    h0 = V.T @ np.asarray(r0_combined, dtype=float)
    return V @ evolve_residual_spectral(h0, decomp, t)


@dataclass(frozen=True)
class PinnLimitSolution:
    """Wide-limit PINN trajectory from ``Q_0 = 0`` in joint weighted coordinates."""

    decomp: SpectralDecomposition
    km: KernelMatrices
    h0: np.ndarray

    @classmethod
    def from_residuals(cls, decomp, km: KernelMatrices, r0_grid, e0_obs) -> "PinnLimitSolution":
        z0 = combined_residual(r0_grid, e0_obs, km.weights)
        return cls(decomp, km, decomp.eigenvectors.T @ z0)

    def objective(self, t: float) -> float:
        """``||A Q_t - g||^2_mu + ||Q_t - u||^2_{mu_x}``."""
        h = evolve_residual_spectral(self.h0, self.decomp, t)
        return float(h @ h)

    def state(self, t: float) -> np.ndarray:
        return self.decomp.eigenvectors @ evolve_residual_spectral(self.h0, self.decomp, t)

    def Q(self, t: float) -> np.ndarray:
        """Grid values of the limit network at time ``t``."""
        if t < 0:
            raise ContractError("time must be non-negative")
        pos = self.decomp.positive_mask
        lam = self.decomp.eigenvalues[pos]
        integ = self.decomp.eigenvectors[:, pos] @ (self.h0[pos] * (-np.expm1(-lam * t) / lam))
        m = self.km.weights.shape[0]
        M = self.km.n_obs
        rho_int, eps_int = integ[:m], integ[m:]
        q = -(np.sqrt(self.km.weights) * rho_int) @ self.km.U_h
        if M:
            q -= (eps_int / math.sqrt(M)) @ self.km.B_og
        return q


def block_asymmetry(km: KernelMatrices) -> float:
    """Relative mismatch between the two off-diagonal PINN blocks before symmetrisation."""
    if km.n_obs == 0:
        return _asymmetry(weighted_symmetrize(km.S_h, km.weights, tol=np.inf))
    s = np.sqrt(km.weights)
    M = km.n_obs
    top_right = s[:, None] * km.AB_h * math.sqrt(M)
    bottom_left = km.Ubar / s[None, :] / math.sqrt(M)
    scale = max(float(np.abs(top_right).max()), 1e-300)
    S_w = s[:, None] * km.S_h * s[None, :]
    return max(float(np.abs(top_right - bottom_left.T).max()) / scale, _asymmetry(S_w),
               _asymmetry(km.Bbar))


def write_spectrum_csv(decomp: SpectralDecomposition, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "eigenvalue", "null_flag"])
        for i, (lam, null) in enumerate(zip(decomp.eigenvalues, decomp.null_mask)):
            writer.writerow([i, repr(float(lam)), int(null)])


def write_mode_trajectories_csv(sol: LimitSolution, times, n_modes: int, path) -> None:
    """Long-format CSV of ``(t, mode, h)`` for the top ``n_modes`` modes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mode", "h"])
        for t in times:
            h = sol.coefficients(t)
            for i in range(min(n_modes, len(h))):
                writer.writerow([repr(float(t)), i, repr(float(h[i]))])
