"""Desk-scale studies, one per convergence statement, each returning a StudyReport."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..domain import DomainSpec, QuadratureGrid, build_grid, default_eta, sobolev_norm
from ..errors import ContractError
from ..jets import GridJetField
from ..kernel import (KernelSetup, MCKernelConfig, adjointness_residual, assemble_kernels,
                      empirical_kernel_U, kernel_matrix, kernel_S_bound, kernel_U_jets)
from ..network import (Architecture, InitDistribution, NetworkParams, eval_jet,
                       get_activation, init_params)
from ..operator import (HomogenizedProblem, make_operator, make_solution,
                        manufactured_problem, neg_laplace, zero_problem)
from ..spectral import (LimitSolution, PinnLimitSolution, assemble_V, block_asymmetry,
                        evolve_residual_euler, spectral_decompose, to_weighted,
                        weighted_symmetrize)
from ..training import Observations, train_dgm, train_pinn
from .config import ExperimentConfig
from .report import StudyReport, Verdict


@dataclass(frozen=True)
class Setup:
    cfg: ExperimentConfig
    domain: DomainSpec
    problem: HomogenizedProblem
    arch: Architecture
    grid: QuadratureGrid
    kernel: KernelSetup
    dist: InitDistribution

    @property
    def solvable(self) -> bool:
        return self.problem.exact is not None

    @property
    def bounded_inverse(self) -> bool:
        return self.solvable and self.problem.operator.has_bounded_inverse


def _operator(cfg: ExperimentConfig, d: int):
    if cfg.operator == "neg_laplace_plus_c":
        return make_operator(cfg.operator, d, c=cfg.operator_c)
    if cfg.operator == "advection_diffusion":
        return make_operator(cfg.operator, d, nu=cfg.nu,
                             velocity=cfg.velocity or None, c=cfg.operator_c)
    return make_operator(cfg.operator, d)


def build_setup(cfg: ExperimentConfig, resolution=None, m_mc=None) -> Setup:
    domain = cfg.domain_spec()
    d = domain.dim
    op = _operator(cfg, d)
    if cfg.solution == "zero":
        problem = zero_problem(domain, op)
    elif cfg.operator == "zero":
        # A = 0 with g != 0 has no solution; borrow g from -Laplace u
        u = make_solution(cfg.solution, domain, amplitude=cfg.amplitude)
        rhs = manufactured_problem(domain, neg_laplace(d), u).rhs
        problem = HomogenizedProblem(op, rhs, domain, None)
    else:
        u = make_solution(cfg.solution, domain, amplitude=cfg.amplitude)
        problem = manufactured_problem(domain, op, u)
    arch = Architecture(get_activation(cfg.activation), default_eta(domain))
    grid = build_grid(domain, resolution or cfg.resolution)
    dist = InitDistribution(c_bound=cfg.c_bound)
    mc = MCKernelConfig(m_mc or cfg.m_mc, cfg.kernel_seed, cfg.chunk)
    return Setup(cfg, domain, problem, arch, grid, KernelSetup(arch.act, arch.eta, op, dist, mc), dist)


def initial_params(s: Setup, N: int, seed: int) -> NetworkParams:
    p = init_params(N, s.domain.dim, s.dist, seed, s.cfg.beta)
    if s.cfg.zero_output:
        p = NetworkParams(np.zeros(N), p.w, p.b, p.beta)
    return p


def interior_points(domain: DomainSpec, n: int, shift: float = 0.0) -> np.ndarray:
    """``n`` deterministic interior points along the box diagonal (x-axis for discs)."""
    frac = (np.arange(1, n + 1) - shift) / (n + 1 - 2 * shift) if shift else np.arange(1, n + 1) / (n + 1)
    if domain.kind == "ball":
        pts = np.zeros((n, domain.dim))
        pts[:, 0] = domain.radius * (2 * frac - 1)
        return pts + np.array(domain.center)
    lo, hi = domain.as_box()
    return lo + frac[:, None] * (hi - lo)


def observation_points(s: Setup) -> np.ndarray:
    cfg = s.cfg
    if cfg.obs_placement == "explicit":
        pts = np.asarray(cfg.obs_points, dtype=float).reshape(-1, s.domain.dim)
        if not np.all(s.domain.contains(pts)):
            raise ContractError("observation points must be interior")
        return pts
    if cfg.obs_placement == "random":
        return s.domain.sample_uniform(np.random.default_rng(cfg.obs_seed), cfg.obs_count)
    return interior_points(s.domain, cfg.obs_count)


def _new_report(name: str, cfg: ExperimentConfig) -> StudyReport:
    return StudyReport(name, cfg.digest(), {"network": list(cfg.seeds), "kernel": cfg.kernel_seed,
                                            "training_mc": cfg.mc_seed,
                                            "observations": cfg.obs_seed})


def _limit_solution(s: Setup, km=None):
    km = km if km is not None else assemble_kernels(s.grid, None, s.kernel)
    M = weighted_symmetrize(km.S_h, s.grid.weights)
    dec = spectral_decompose(M, s.cfg.tau)
    r0 = -s.problem.rhs(s.grid.nodes)
    return km, M, dec, LimitSolution.from_residual(dec, s.grid.weights, r0)


# -- wide limit --------------------------------------------------------------

def run_wide_limit_study(cfg: ExperimentConfig) -> StudyReport:
    """Distance in the discrete H2 norm between trained networks and the limit ODE."""
    if len(cfg.widths) < 3 or len(cfg.seeds) < 3:
        raise ContractError("the wide-limit study needs at least 3 widths and 3 seeds")
    s = build_setup(cfg)
    report = _new_report("wide-limit", cfg)
    _, _, _, sol = _limit_solution(s)
    limit = sol.jets(cfg.t_star, kernel_U_jets(s.grid.nodes, s.grid.nodes, s.kernel))
    tc = cfg.train_config(horizon=cfg.t_star)
    tc = type(tc)(**{**tc.__dict__, "stride": max(tc.n_steps, 1)})
    clip = cfg.clipping()
    means = []
    for N in cfg.widths:
        dists = []
        for seed in cfg.seeds:
            traj, p = train_dgm(initial_params(s, N, seed), s.problem, s.grid, clip, tc,
                                s.arch, return_params=True)
            jet = GridJetField.from_jet(eval_jet(p, s.arch.eta, s.arch.act, s.grid.nodes))
            dist = sobolev_norm(jet - limit, s.grid, 2)
            dists.append(dist)
            report.add_row("wide_limit_runs", N=N, seed=seed, t=cfg.t_star, h2_distance=dist,
                           J_final=traj.J[-1], max_param_dev=traj.max_param_dev[-1])
        means.append(float(np.mean(dists)))
        report.add_row("wide_limit_means", N=N, mean_h2_distance=means[-1],
                       std_h2_distance=float(np.std(dists)))
    report.metrics["mean_h2_distance"] = dict(zip(map(str, cfg.widths), means))
    name = "wide_limit_h2_decreasing"
    if max(means) == 0.0:
        report.verdicts.append(Verdict.not_applicable(name, means, "both dynamics stationary at zero"))
    else:
        ok = all(b < a for a, b in zip(means, means[1:]))
        report.verdicts.append(Verdict.check(name, means, "strictly decreasing in N", ok))
    return report


# -- residual decay ----------------------------------------------------------

def _fit_mode_slopes(times, coeffs, eigenvalues, n_modes, horizon):
    rows = []
    for i in range(min(n_modes, len(eigenvalues))):
        lam = eigenvalues[i]
        h = np.abs(coeffs[:, i])
        mask = (times <= min(horizon, 3.0 / lam)) & (h > 1e-12 * max(h[0], 1e-300))
        if mask.sum() < 3 or h[0] == 0:
            rows.append((i, lam, math.nan, math.nan))
            continue
        slope = np.polyfit(times[mask], np.log(h[mask]), 1)[0]
        rows.append((i, lam, slope, abs(slope + lam) / lam))
    return rows


def _q_infinity_error(s: Setup, tau: float, val: QuadratureGrid) -> float:
    km = assemble_kernels(s.grid, None, s.kernel)
    dec = spectral_decompose(weighted_symmetrize(km.S_h, s.grid.weights), tau)
    sol = LimitSolution.from_residual(dec, s.grid.weights, -s.problem.rhs(s.grid.nodes))
    U_val = kernel_matrix("U", s.grid.nodes, val.nodes, s.kernel)
    q = sol.Q(math.inf, U_val)
    return val.l2_norm(q - s.problem.exact(val.nodes))


def run_residual_decay_study(cfg: ExperimentConfig) -> StudyReport:
    """Spectral evolution of the limit residual, Euler cross-check and convergence to u."""
    s = build_setup(cfg)
    report = _new_report("residual-decay", cfg)
    km, M, dec, sol = _limit_solution(s)
    lam = dec.eigenvalues
    for i, (l, null) in enumerate(zip(lam, dec.null_mask)):
        report.add_row("spectrum", index=i, eigenvalue=l, null_flag=int(null))
    r0_norm = sol.residual_norm(0.0)
    null_frac = sol.null_fraction
    report.metrics.update(r0_l2=r0_norm, null_fraction=null_frac,
                          lambda_max=float(lam[0]), n_null=int(dec.null_mask.sum()))

    applicable = s.solvable and r0_norm > 0
    reason = ("existence of a solution is needed" if not s.solvable
              else "zero initial residual")
    T = cfg.spectral_horizon
    if T == 0:
        report.notices.append("time grid is {0}: reporting initial residual only")
        for name in ("mode_decay_slopes", "residual_below_1e-3", "null_fraction"):
            report.verdicts.append(Verdict.not_applicable(name, None, "degenerate time grid"))
        return report

    if not applicable:
        report.notices.append(f"convergence not applicable: {reason}")
        for name in ("mode_decay_slopes", "residual_below_1e-3", "q_infinity_error"):
            report.verdicts.append(Verdict.not_applicable(name, null_frac, reason))
        report.verdicts.append(Verdict.not_applicable("null_fraction", null_frac, reason))
        return report

    # explicit Euler on d rho / dt = -M rho; slope error of mode i is about lambda_i dt / 2
    dt = min(cfg.euler_dt, 0.1 / lam[0])
    n_steps = int(math.ceil(T / dt))
    rho0 = to_weighted(-s.problem.rhs(s.grid.nodes), s.grid.weights)
    times, traj = evolve_residual_euler(rho0, M, dt, T, record_every=max(n_steps // 4000, 1))
    # dense segment covering the fit window of the slowest fitted mode
    pos = dec.positive_eigenvalues
    t_fit = min(T, 3.0 / pos[min(cfg.n_modes, len(pos)) - 1])
    fit_every = max(int(t_fit / dt) // 20_000, 1)
    fit_times, fit_traj = evolve_residual_euler(rho0, M, dt, t_fit, record_every=fit_every)
    fits = _fit_mode_slopes(fit_times, fit_traj @ dec.eigenvectors, pos, cfg.n_modes, T)
    for i, l, slope, err in fits:
        report.add_row("mode_slopes", mode=i, eigenvalue=l, fitted_slope=slope, rel_error=err)
    errs = [f[3] for f in fits]
    report.verdicts.append(Verdict.check("mode_decay_slopes", errs, "relative slope error <= 0.05",
                                         all(e <= 0.05 for e in errs)))

    norms = np.linalg.norm(traj, axis=1)
    closed = np.array([sol.residual_norm(t) for t in times])
    keep = np.unique(np.geomspace(1, len(times), 200).astype(int) - 1)
    for k in np.concatenate([[0], keep]):
        report.add_row("residual_trajectory", t=times[k], euler_l2=norms[k], spectral_l2=closed[k])
    for t in times[keep]:
        h = sol.coefficients(t)
        for i in range(min(cfg.n_modes, len(h))):
            report.add_row("mode_trajectories", t=t, mode=i, h=h[i])
    ratio = float(norms[-1] / norms[0])
    report.metrics.update(euler_dt=dt, final_ratio_euler=ratio,
                          final_ratio_spectral=float(closed[-1] / closed[0]))
    report.verdicts.append(Verdict.check("residual_below_1e-3", ratio,
                                         "||r_T|| / ||r_0|| < 1e-3", ratio < 1e-3))
    report.verdicts.append(Verdict.check("null_fraction", null_frac, "< 1e-4", null_frac < 1e-4))

    val = build_grid(s.domain, cfg.validation_resolution)
    if s.bounded_inverse:
        U_val = kernel_matrix("U", s.grid.nodes, val.nodes, s.kernel)
        err_T = val.l2_norm(sol.Q(T, U_val) - s.problem.exact(val.nodes))
        err_inf = val.l2_norm(sol.Q(math.inf, U_val) - s.problem.exact(val.nodes))
        report.metrics.update(q_error_at_horizon=err_T, q_infinity_error=err_inf)
        report.verdicts.append(Verdict.check("q_infinity_error", err_inf, "< 1e-2", err_inf < 1e-2))
        if cfg.refine_resolution and cfg.refine_m_mc:
            base = _q_infinity_error(s, cfg.refine_tau, val)
            fine = _q_infinity_error(build_setup(cfg, cfg.refine_resolution, cfg.refine_m_mc),
                                     cfg.refine_tau, val)
            report.metrics.update(q_error_base=base, q_error_refined=fine,
                                  refine_tau=cfg.refine_tau)
            report.verdicts.append(Verdict.check("q_error_halves_under_refinement",
                                                 [base, fine], "refined <= base / 2",
                                                 fine <= 0.5 * base))
    else:
        report.verdicts.append(Verdict.not_applicable(
            "q_infinity_error", None, "operator without bounded inverse"))
    return report


# -- PINN --------------------------------------------------------------------

def run_pinn_study(cfg: ExperimentConfig) -> StudyReport:
    """Block operator of the joint residual, its evolution, and a finite-width run."""
    if cfg.obs_count == 0 and cfg.obs_placement != "explicit":
        report = run_residual_decay_study(cfg)
        report.name = "pinn"
        report.notices.append("no observations: fell back to the DGM residual-decay study")
        return report
    s = build_setup(cfg)
    if not s.solvable:
        raise ContractError("the PINN study needs a problem with a known solution")
    report = _new_report("pinn", cfg)
    Z = observation_points(s)
    obs = Observations.from_solution(Z, s.problem.exact)
    km = assemble_kernels(s.grid, Z, s.kernel)

    asym = block_asymmetry(km)
    V = assemble_V(km)
    eig = np.linalg.eigvalsh(V)
    psd = float(eig[0] / max(eig[-1], 1e-300))
    report.metrics.update(block_asymmetry=asym, min_eig_ratio=psd, lambda_max=float(eig[-1]))
    report.verdicts.append(Verdict.check("V_symmetric", asym, "relative asymmetry <= 1e-8", asym <= 1e-8))
    report.verdicts.append(Verdict.check("V_psd", psd, "lambda_min >= -1e-8 lambda_max", psd >= -1e-8))

    rng = np.random.default_rng(cfg.obs_seed)
    adj = 0.0
    for _ in range(cfg.check_pairs):
        g = rng.normal(size=s.grid.size)
        v = rng.normal(size=obs.M)
        scale = s.grid.l2_norm(g) * math.sqrt(np.mean(v ** 2))
        adj = max(adj, adjointness_residual(km, g, v) / scale)
    report.metrics["adjointness_residual"] = adj
    report.verdicts.append(Verdict.check("adjointness", adj, "<= 1e-8 ||g|| ||v||", adj <= 1e-8))

    dec = spectral_decompose(V, cfg.tau)
    r0 = -s.problem.rhs(s.grid.nodes)
    e0 = -obs.values
    sol = PinnLimitSolution.from_residuals(dec, km, r0, e0)
    J0 = sol.objective(0.0)
    report.metrics.update(initial_objective=J0, initial_data_residual=float(np.mean(e0 ** 2)))
    T = cfg.spectral_horizon
    for t in np.concatenate([[0.0], np.geomspace(1e-2, max(T, 1e-2), 100)]):
        q = sol.Q(t)
        report.add_row("pinn_limit_trajectory", t=t, objective=sol.objective(t),
                       q_error_l2=s.grid.l2_norm(q - s.problem.exact(s.grid.nodes)))
    JT = sol.objective(T)
    ratio = JT / J0 if J0 > 0 else 0.0
    q_err = s.grid.l2_norm(sol.Q(T) - s.problem.exact(s.grid.nodes))
    report.metrics.update(objective_ratio=ratio, q_error_at_horizon=q_err)
    report.verdicts.append(Verdict.check("pinn_objective_decay", ratio, "J_T / J_0 < 1e-3", ratio < 1e-3))
    if s.bounded_inverse:
        report.verdicts.append(Verdict.check("pinn_q_error", q_err, "< 2e-2", q_err < 2e-2))

    N, seed = cfg.widths[0], cfg.seeds[0]
    traj = train_pinn(initial_params(s, N, seed), s.problem, s.grid, obs, cfg.clipping(),
                      cfg.train_config(), s.arch)
    for t, J, res in zip(traj.times, traj.J, traj.residual_l2):
        report.add_row("pinn_training", N=N, seed=seed, t=t, pinn_objective=J, residual_l2=res)
    inc = float(np.max(np.diff(traj.J), initial=0.0))
    report.metrics.update(training_max_increase=inc, training_J0=traj.J[0], training_JT=traj.J[-1])
    report.notices.append(
        f"finite-width PINN run (N={N}): objective {traj.J[0]:.4g} -> {traj.J[-1]:.4g}, "
        f"largest step increase {inc:.2e}")
    return report


# -- kernel validation -------------------------------------------------------

def run_kernel_validation(cfg: ExperimentConfig) -> StudyReport:
    """Finite-width kernel convergence, and boundedness/symmetry/PSD/adjointness of S."""
    s = build_setup(cfg)
    report = _new_report("kernel-check", cfg)
    n = cfg.check_points
    X = interior_points(s.domain, n)
    Y = interior_points(s.domain, n, shift=0.5)
    ref_setup = KernelSetup(s.arch.act, s.arch.eta, s.problem.operator, s.dist,
                            MCKernelConfig(cfg.check_m_mc, cfg.kernel_seed, cfg.chunk))
    ref, stderr = kernel_matrix("U", X, Y, ref_setup, return_stderr=True)
    report.metrics["reference_max_stderr"] = float(stderr.max())
    medians = []
    for N in cfg.check_widths:
        errs = []
        for seed in cfg.check_seeds:
            p0 = init_params(N, s.domain.dim, s.dist, seed, cfg.beta)
            emp = empirical_kernel_U(p0, s.arch.eta, s.arch.act, s.problem.operator, X, Y)
            errs.append(np.abs(emp - ref).ravel())
        errs = np.concatenate(errs)
        medians.append(float(np.median(errs)))
        report.add_row("empirical_kernel_error", N=N, median_abs_error=medians[-1],
                       max_abs_error=float(errs.max()), n_samples=errs.size)
    if len(medians) < 2:
        report.verdicts.append(Verdict.not_applicable("empirical_kernel_lln", medians,
                                                      "single width: no trend"))
    else:
        report.verdicts.append(Verdict.check("empirical_kernel_lln", medians,
                                             "median error strictly decreasing in N",
                                             all(b < a for a, b in zip(medians, medians[1:]))))

    Z = observation_points(s) if cfg.obs_count or cfg.obs_placement == "explicit" \
        else interior_points(s.domain, 3)
    km = assemble_kernels(s.grid, Z, s.kernel)
    S = km.S_h
    asym = float(np.abs(S - S.T).max() / np.abs(S).max()) if np.abs(S).max() > 0 else 0.0
    Sw = weighted_symmetrize(S, s.grid.weights)
    eig = np.linalg.eigvalsh(Sw)
    psd = float(eig[0] / eig[-1]) if eig[-1] > 0 else 0.0
    k2 = kernel_S_bound(s.kernel, s.domain)
    smax = float(np.abs(S).max())
    report.metrics.update(S_asymmetry=asym, S_min_eig_ratio=psd, S_max_abs=smax, k2_bound=k2)
    report.verdicts.append(Verdict.check("S_symmetric", asym, "<= 1e-8", asym <= 1e-8))
    report.verdicts.append(Verdict.check("S_psd", psd, "lambda_min >= -1e-8 lambda_max", psd >= -1e-8))
    report.verdicts.append(Verdict.check("S_bounded", [smax, k2], "max |S_h| <= k2", smax <= k2))
    for i in range(len(eig)):
        report.add_row("S_spectrum", index=i, eigenvalue=float(eig[::-1][i]))

    rng = np.random.default_rng(cfg.obs_seed)
    adj = 0.0
    for _ in range(cfg.check_pairs):
        g = rng.normal(size=s.grid.size)
        v = rng.normal(size=len(Z))
        adj = max(adj, adjointness_residual(km, g, v)
                  / (s.grid.l2_norm(g) * math.sqrt(np.mean(v ** 2))))
    report.metrics["adjointness_residual"] = adj
    report.verdicts.append(Verdict.check("adjointness", adj, "<= 1e-8 ||g|| ||v||", adj <= 1e-8))
    return report


# -- deviation ---------------------------------------------------------------

def run_deviation_study(cfg: ExperimentConfig) -> StudyReport:
    """Log-log slope of the largest parameter displacement against width."""
    s = build_setup(cfg)
    report = _new_report("deviation", cfg)
    clip = cfg.clipping()
    exponent = clip.deviation_exponent()
    t = cfg.deviation_t
    devs = []
    for N in cfg.deviation_widths:
        per_seed = []
        for seed in cfg.seeds:
            if t == 0:
                per_seed.append(0.0)
                continue
            tc = cfg.train_config(horizon=t)
            tc = type(tc)(**{**tc.__dict__, "stride": max(tc.n_steps, 1)})
            traj = train_dgm(initial_params(s, N, seed), s.problem, s.grid, clip, tc, s.arch)
            per_seed.append(traj.max_param_dev[-1])
        devs.append(float(np.mean(per_seed)))
        report.add_row("deviation", N=N, t=t, mean_max_param_dev=devs[-1],
                       bound_scale=t * N ** exponent)
    report.metrics.update(deviations=dict(zip(map(str, cfg.deviation_widths), devs)),
                          exponent=exponent)
    name = "deviation_slope"
    tol = f"slope <= {exponent + 0.1:.4g} (exponent + 0.1)"
    if len(devs) < 2:
        report.verdicts.append(Verdict.not_applicable(name, devs, "single width: slope undefined"))
    elif min(devs) <= 0:
        report.verdicts.append(Verdict.not_applicable(name, devs, "no training: deviation zero"))
    else:
        slope = float(np.polyfit(np.log(cfg.deviation_widths), np.log(devs), 1)[0])
        report.metrics["slope"] = slope
        report.verdicts.append(Verdict.check(name, slope, tol, slope <= exponent + 0.1))
    return report


STUDIES = {
    "wide-limit": run_wide_limit_study,
    "residual-decay": run_residual_decay_study,
    "pinn": run_pinn_study,
    "kernel-check": run_kernel_validation,
    "deviation": run_deviation_study,
}
