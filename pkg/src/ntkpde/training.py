"""Clipped continuous-time gradient descent for the DGM and PINN objectives.

The parameter flow is ``d theta / dt = alpha_N * G`` with ``alpha_N = N^(2 beta - 1)``
and ``G = -int psi(A Q - g) Phi(grad_theta A Q) dmu``; ``G`` itself is a descent
direction (it equals ``-1/2 grad J`` when clipping is inactive).  Time is
discretised with explicit Euler or classical RK4; the spatial integral is a
fixed quadrature or a fresh Monte Carlo batch per step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import QuadratureGrid
from .errors import ConfigurationError, ContractError, IntegrationDivergedError
from .network import (Architecture, NetworkParams, _to_global, alpha_N, clip_vector,
                      smooth_clip, unit_feature_jets)
from .operator import HomogenizedProblem, apply_operator


@dataclass(frozen=True)
class Observations:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.shape[0] < 1 or pts.shape[0] != vals.shape[0]:
            raise ContractError("need at least one observation with a value per point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_solution(cls, points, solution) -> "Observations":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, solution(pts))


@dataclass(frozen=True)
class TrainConfig:
    dt: float = 0.01
    horizon: float = 1.0
    integrator: str = "rk4"
    integral_mode: str = "quadrature"
    batch: int = 1024
    mc_seed: int = 0
    stride: int = 10
    keep_params: bool = False

    def __post_init__(self):
        if not self.dt > 0 or self.horizon < 0:
            raise ConfigurationError("need dt > 0 and horizon >= 0")
        if self.horizon > 0 and self.dt > self.horizon:
            raise ConfigurationError("dt must not exceed the horizon")
        if self.integrator not in ("euler", "rk4"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.integral_mode not in ("quadrature", "monte_carlo"):
            raise ConfigurationError(f"unknown integral mode {self.integral_mode!r}")
        if self.batch < 1 or self.stride < 1:
            raise ConfigurationError("batch and stride must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    J: list = field(default_factory=list)
    residual_l2: list = field(default_factory=list)
    max_param_dev: list = field(default_factory=list)
    params: list = field(default_factory=list)

    def record(self, t, J, res, dev, params=None):
        self.times.append(float(t))
        self.J.append(float(J))
        self.residual_l2.append(float(res))
        self.max_param_dev.append(float(dev))
        if params is not None:
            self.params.append(params)

    def summary(self) -> np.ndarray:
        return np.array([self.times, self.J, self.residual_l2, self.max_param_dev]).T

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "J", "residual_l2", "max_param_dev"])
            for row in self.summary():
                writer.writerow([repr(float(v)) for v in row])


def _evaluate(params: NetworkParams, arch: Architecture, problem: HomogenizedProblem, X,
              need_op_grad: bool = True, need_grad: bool = False):
    """Residual ``A Q - g`` at X with the requested parameter gradients."""
    J = unit_feature_jets(X, params.c, params.w, params.b, arch.act, arch.eta)
    s = params.scale
    FA = apply_operator(problem.operator, J, X)
    AQ = s * FA[:, :, 0] @ params.c
    r = AQ - problem.rhs(X)
    gA = s * _to_global(FA, params.d) if need_op_grad else None
    gQ = s * _to_global(J.value, params.d) if need_grad else None
    Q = s * J.value[:, :, 0] @ params.c
    return r, Q, gA, gQ


def pde_residual(params, problem, grid: QuadratureGrid, arch: Architecture) -> np.ndarray:
    return _evaluate(params, arch, problem, grid.nodes, need_op_grad=False)[0]


def objective(params: NetworkParams, problem: HomogenizedProblem, grid: QuadratureGrid,
              arch: Architecture) -> float:
    """``J = ||A Q - g||^2_{L2(mu)}`` by quadrature."""
    r = pde_residual(params, problem, grid, arch)
    return float(grid.weights @ r ** 2)


def pinn_objective(params: NetworkParams, problem: HomogenizedProblem, grid: QuadratureGrid,
                   obs: Observations, arch: Architecture) -> float:
    """DGM objective plus ``(1/M) sum (Q(z_i) - u_i)^2``."""
    J = objective(params, problem, grid, arch)
    e = _data_residual(params, arch, obs)
    return J + float(np.mean(e ** 2))


def _data_residual(params, arch, obs):
    J = unit_feature_jets(obs.points, params.c, params.w, params.b, arch.act, arch.eta)
    return params.scale * J.value[:, :, 0] @ params.c - obs.values


def _clipped_integrand(params, problem, X, clip, arch):
    r, _, gA, _ = _evaluate(params, arch, problem, X)
    N = params.N
    psi = smooth_clip(r, clip.residual_threshold(N))
    return np.atleast_1d(psi)[:, None] * clip_vector(gA, clip.gradient_threshold(N))


def clipped_gradient(params: NetworkParams, problem: HomogenizedProblem, grid: QuadratureGrid,
                     clip, arch: Architecture) -> np.ndarray:
    """``G = -int psi(A Q - g) Phi(grad_theta A Q) dmu`` by quadrature."""
    return -grid.weights @ _clipped_integrand(params, problem, grid.nodes, clip, arch)


def clipped_gradient_mc(params: NetworkParams, problem: HomogenizedProblem, clip,
                        arch: Architecture, n_samples: int, seed: int = 0,
                        chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of ``G`` with its per-entry standard error."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    total = np.zeros(params.size)
    total_sq = np.zeros(params.size)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        X = problem.domain.sample_uniform(rng, n)
        f = _clipped_integrand(params, problem, X, clip, arch)
        total += f.sum(axis=0)
        total_sq += (f * f).sum(axis=0)
        done += n
    mean = total / n_samples
    var = np.maximum(total_sq / n_samples - mean ** 2, 0.0) * n_samples / max(n_samples - 1, 1)
    return -mean, np.sqrt(var / n_samples)


def _data_term(params, obs, clip, arch):
    """``-(1/M) sum psi(Q(z_i) - u_i) Phi(grad_theta Q(z_i))``."""
    J = unit_feature_jets(obs.points, params.c, params.w, params.b, arch.act, arch.eta)
    s = params.scale
    e = s * J.value[:, :, 0] @ params.c - obs.values
    gQ = s * _to_global(J.value, params.d)
    N = params.N
    psi = np.atleast_1d(smooth_clip(e, clip.residual_threshold(N)))
    return -np.mean(psi[:, None] * clip_vector(gQ, clip.gradient_threshold(N)), axis=0)


def _integrate(params0, rhs, sample_points, tc: TrainConfig, record):
    theta0 = params0.to_vector()
    theta = theta0.copy()
    traj = Trajectory()
    n = tc.n_steps
    dt = tc.dt

    def snapshot(step, th):
        p = params0.with_vector(th)
        J, res = record(p)
        traj.record(step * dt, J, res, float(np.max(np.abs(th - theta0))),
                    p if tc.keep_params else None)

    snapshot(0, theta)
    for step in range(n):
        pts = sample_points(step)
        f = lambda th: rhs(params0.with_vector(th), pts)
        if tc.integrator == "euler":
            theta = theta + dt * f(theta)
        else:
            k1 = f(theta)
            k2 = f(theta + 0.5 * dt * k1)
            k3 = f(theta + 0.5 * dt * k2)
            k4 = f(theta + dt * k3)
            theta = theta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(theta)):
            raise IntegrationDivergedError(step + 1, (step + 1) * dt)
        if (step + 1) % tc.stride == 0 or step + 1 == n:
            snapshot(step + 1, theta)
    return params0.with_vector(theta), traj


def _sampler(problem, grid, tc: TrainConfig):
    if tc.integral_mode == "quadrature":
        return lambda step: (grid.nodes, grid.weights)

    def sample(step):
        key = (int(tc.mc_seed) % 2 ** 64) << 64 | step
        rng = np.random.Generator(np.random.Philox(key=key))
        return problem.domain.sample_uniform(rng, tc.batch), np.full(tc.batch, 1.0 / tc.batch)

    return sample


def train_dgm(params0: NetworkParams, problem: HomogenizedProblem, grid: QuadratureGrid,
              clip, tc: TrainConfig, arch: Architecture, return_params: bool = False):
    """Integrate the clipped flow; returns the trajectory (and final parameters)."""
    lr = alpha_N(params0.N, params0.beta)

    def rhs(p, pts):
        X, w = pts
        return -lr * (w @ _clipped_integrand(p, problem, X, clip, arch))

    def record(p):
        J = objective(p, problem, grid, arch)
        return J, math.sqrt(J)

    final, traj = _integrate(params0, rhs, _sampler(problem, grid, tc), tc, record)
    return (traj, final) if return_params else traj


def train_pinn(params0: NetworkParams, problem: HomogenizedProblem, grid: QuadratureGrid,
               obs: Observations, clip, tc: TrainConfig, arch: Architecture,
               return_params: bool = False):
    """As ``train_dgm`` with the PINN objective; ``J`` records the full PINN objective."""
    if obs is None or obs.M < 1:
        raise ContractError("PINN training needs at least one observation")
    lr = alpha_N(params0.N, params0.beta)

    def rhs(p, pts):
        X, w = pts
        G = -(w @ _clipped_integrand(p, problem, X, clip, arch)) + _data_term(p, obs, clip, arch)
        return lr * G

    def record(p):
        Jd = objective(p, problem, grid, arch)
        return Jd + float(np.mean(_data_residual(p, arch, obs) ** 2)), math.sqrt(Jd)

    final, traj = _integrate(params0, rhs, _sampler(problem, grid, tc), tc, record)
    return (traj, final) if return_params else traj
