import csv

import numpy as np
import pytest

from ntkpde.domain import build_grid
from ntkpde.errors import ConfigurationError, ContractError, IntegrationDivergedError
from ntkpde.network import ClippingSpec, NetworkParams, NoClipping, alpha_N, init_params
from ntkpde.operator import HomogenizedProblem, neg_laplace, zero_problem
from ntkpde.training import (Observations, TrainConfig, clipped_gradient, clipped_gradient_mc,
                             objective, pinn_objective, train_dgm, train_pinn)

from oracles import central_diff, relative_error

CLIP = ClippingSpec(0.6, 0.05, 0.12)
OBS_POINTS = np.array([[0.25], [0.5], [0.75]])


def zero_output(p):
    return NetworkParams(np.zeros(p.N), p.w, p.b, p.beta)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(dt=2.0, horizon=1.0),
                                        dict(integrator="midpoint"), dict(integral_mode="sobol"),
                                        dict(batch=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)

    def test_observations_need_points(self):
        with pytest.raises(ContractError):
            Observations(np.zeros((0, 1)), np.zeros(0))


class TestObjective:
    def test_zero_network_zero_target(self, unit_interval, arch1d, grid16):
        p = zero_output(init_params(20, 1, seed=0))
        assert objective(p, zero_problem(unit_interval, neg_laplace(1)), grid16, arch1d) == 0.0

    def test_regression_fixture(self, poisson1d, arch1d, grid16):
        J = objective(init_params(100, 1, seed=7), poisson1d, grid16, arch1d)
        assert J == pytest.approx(54.70250373339515, rel=1e-12)

    def test_pinn_single_observation(self, unit_interval, arch1d, grid16):
        p = zero_output(init_params(5, 1, seed=0))
        obs = Observations(np.array([[0.3]]), np.array([-0.5]))
        prob = zero_problem(unit_interval, neg_laplace(1))
        assert pinn_objective(p, prob, grid16, obs, arch1d) == pytest.approx(0.25)

    def test_pinn_all_zero(self, unit_interval, arch1d, grid16):
        p = zero_output(init_params(5, 1, seed=0))
        obs = Observations(OBS_POINTS, np.zeros(3))
        assert pinn_objective(p, zero_problem(unit_interval, neg_laplace(1)), grid16, obs, arch1d) == 0.0


class TestClippedGradient:
    def test_zero_residual(self, unit_interval, arch1d, grid16):
        p = zero_output(init_params(8, 1, seed=1))
        G = clipped_gradient(p, zero_problem(unit_interval, neg_laplace(1)), grid16, CLIP, arch1d)
        np.testing.assert_array_equal(G, 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_unclipped_is_half_negative_gradient(self, poisson1d, arch1d, grid16, seed):
        p = init_params(6, 1, seed=seed)
        G = clipped_gradient(p, poisson1d, grid16, NoClipping(), arch1d)
        dJ = central_diff(lambda th: objective(p.with_vector(th), poisson1d, grid16, arch1d),
                          p.to_vector())
        assert relative_error(G, -0.5 * dJ) < 1e-5

    def test_clipping_changes_large_residuals(self, poisson1d, arch1d, grid16):
        p = init_params(6, 1, seed=0)
        a = clipped_gradient(p, poisson1d, grid16, CLIP, arch1d)
        b = clipped_gradient(p, poisson1d, grid16, NoClipping(), arch1d)
        assert np.linalg.norm(a) < np.linalg.norm(b)

    def test_monte_carlo_matches_quadrature(self, poisson1d, arch1d):
        p = init_params(10, 1, seed=3)
        exact = clipped_gradient(p, poisson1d, build_grid(poisson1d.domain, 64), CLIP, arch1d)
        G, se = clipped_gradient_mc(p, poisson1d, CLIP, arch1d, n_samples=1_000_000, seed=5)
        subset = np.random.default_rng(0).choice(p.size, 12, replace=False)
        assert np.all(np.abs(G - exact)[subset] <= 3 * se[subset])

    def test_monte_carlo_deterministic(self, poisson1d, arch1d):
        p = init_params(4, 1, seed=3)
        a = clipped_gradient_mc(p, poisson1d, CLIP, arch1d, 5000, seed=9)
        b = clipped_gradient_mc(p, poisson1d, CLIP, arch1d, 5000, seed=9)
        np.testing.assert_array_equal(a[0], b[0])


class TestTrainDGM:
    def test_stationary_at_zero(self, unit_interval, arch1d, grid16):
        p0 = zero_output(init_params(30, 1, seed=2))
        traj, p = train_dgm(p0, zero_problem(unit_interval, neg_laplace(1)), grid16, CLIP,
                            TrainConfig(dt=0.05, horizon=1.0), arch1d, return_params=True)
        np.testing.assert_array_equal(p.to_vector(), p0.to_vector())
        assert max(traj.J) == 0.0 and max(traj.max_param_dev) == 0.0

    def test_objective_decreases(self, poisson1d, arch1d, grid16):
        traj = train_dgm(init_params(50, 1, seed=0), poisson1d, grid16, CLIP,
                         TrainConfig(dt=0.01, horizon=1.0, stride=1), arch1d)
        assert np.all(np.diff(traj.J) <= 1e-10)
        assert traj.J[-1] < traj.J[0]
        assert np.all(np.diff(traj.times) > 0)

    def test_rk4_step_halving(self, poisson1d, arch1d, grid16):
        def final(dt):
            tc = TrainConfig(dt=dt, horizon=0.4, stride=1000)
            return train_dgm(init_params(20, 1, seed=4), poisson1d, grid16, CLIP, tc, arch1d,
                             return_params=True)[1].to_vector()
        a, b, c = final(0.04), final(0.02), final(0.01)
        # fourth order: each halving shrinks the gap roughly sixteenfold
        assert np.linalg.norm(b - c) < np.linalg.norm(a - b) / 8

    def test_euler_step_halving(self, poisson1d, arch1d, grid16):
        def final(dt):
            tc = TrainConfig(dt=dt, horizon=0.4, integrator="euler", stride=1000)
            return train_dgm(init_params(20, 1, seed=4), poisson1d, grid16, CLIP, tc, arch1d,
                             return_params=True)[1].to_vector()
        a, b, c = final(0.02), final(0.01), final(0.005)
        ratio = np.linalg.norm(a - b) / np.linalg.norm(b - c)
        assert 1.6 < ratio < 2.4

    def test_deterministic(self, poisson1d, arch1d, grid16):
        tc = TrainConfig(dt=0.02, horizon=0.2, stride=2)
        a = train_dgm(init_params(25, 1, seed=6), poisson1d, grid16, CLIP, tc, arch1d).summary()
        b = train_dgm(init_params(25, 1, seed=6), poisson1d, grid16, CLIP, tc, arch1d).summary()
        assert a.tobytes() == b.tobytes()

    def test_monte_carlo_mode(self, poisson1d, arch1d, grid16):
        tc = TrainConfig(dt=0.02, horizon=0.2, integral_mode="monte_carlo", batch=256, mc_seed=3)
        a = train_dgm(init_params(25, 1, seed=6), poisson1d, grid16, CLIP, tc, arch1d).summary()
        b = train_dgm(init_params(25, 1, seed=6), poisson1d, grid16, CLIP, tc, arch1d).summary()
        assert a.tobytes() == b.tobytes()
        assert a[-1, 1] < a[0, 1]

    def test_divergence_reported(self, unit_interval, arch1d, grid16):
        bad = HomogenizedProblem(neg_laplace(1), lambda X: np.full(len(X), np.nan), unit_interval)
        with pytest.raises(IntegrationDivergedError) as info:
            train_dgm(init_params(5, 1, seed=0), bad, grid16, CLIP, TrainConfig(dt=0.1, horizon=1.0),
                      arch1d)
        assert info.value.step == 1

    def test_csv_export(self, poisson1d, arch1d, grid16, tmp_path):
        traj = train_dgm(init_params(10, 1, seed=0), poisson1d, grid16, CLIP,
                         TrainConfig(dt=0.05, horizon=0.5, stride=2), arch1d)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["t", "J", "residual_l2", "max_param_dev"]
        assert len(rows) == len(traj.times) + 1
        assert float(rows[-1][0]) == pytest.approx(0.5)

    @pytest.mark.slow
    def test_wide_network_reduces_residual(self, poisson1d, arch1d, grid16):
        traj = train_dgm(init_params(500, 1, seed=0), poisson1d, grid16, CLIP,
                         TrainConfig(dt=0.01, horizon=50.0, stride=500), arch1d)
        ratio = traj.residual_l2[-1] / traj.residual_l2[0]
        assert ratio < 0.1
        assert ratio == pytest.approx(0.025498766598956966, rel=1e-8)


class TestTrainPINN:
    def test_needs_observations(self, poisson1d, arch1d, grid16):
        with pytest.raises(ContractError):
            train_pinn(init_params(5, 1, seed=0), poisson1d, grid16, None, CLIP, TrainConfig(), arch1d)

    def test_stationary_at_solution(self, unit_interval, arch1d, grid16):
        p0 = zero_output(init_params(10, 1, seed=0))
        obs = Observations(OBS_POINTS, np.zeros(3))
        traj, p = train_pinn(p0, zero_problem(unit_interval, neg_laplace(1)), grid16, obs, CLIP,
                             TrainConfig(dt=0.05, horizon=0.5), arch1d, return_params=True)
        np.testing.assert_array_equal(p.to_vector(), p0.to_vector())
        assert max(traj.J) == 0.0

    def test_objective_decreasing(self, poisson1d, arch1d, grid16):
        obs = Observations.from_solution(OBS_POINTS, poisson1d.exact)
        traj = train_pinn(init_params(500, 1, seed=0), poisson1d, grid16, obs, CLIP,
                          TrainConfig(dt=0.01, horizon=2.0, stride=10), arch1d)
        assert np.all(np.diff(traj.J) <= 1e-10)
        assert traj.J[-1] < 0.5 * traj.J[0]

    def test_data_term_gradient(self, unit_interval, arch1d, grid16):
        # with g = 0 and only data misfit, the unclipped flow is -(1/2) grad of the data term
        from ntkpde.training import _data_term
        p = init_params(4, 1, seed=2)
        obs = Observations(OBS_POINTS, np.array([0.3, -0.1, 0.2]))
        prob = zero_problem(unit_interval, neg_laplace(1))
        data = lambda th: (pinn_objective(p.with_vector(th), prob, grid16, obs, arch1d)
                           - objective(p.with_vector(th), prob, grid16, arch1d))
        G = _data_term(p, obs, NoClipping(), arch1d)
        assert relative_error(G, -0.5 * central_diff(data, p.to_vector())) < 1e-5

    def test_learning_rate_used(self, unit_interval, arch1d, grid16):
        # one Euler step moves theta by dt * alpha_N * G
        from ntkpde.training import _data_term
        p0 = init_params(9, 1, seed=5)
        obs = Observations(OBS_POINTS, np.array([1.0, 1.0, 1.0]))
        prob = zero_problem(unit_interval, neg_laplace(1))
        tc = TrainConfig(dt=0.01, horizon=0.01, integrator="euler")
        _, p1 = train_pinn(p0, prob, grid16, obs, CLIP, tc, arch1d, return_params=True)
        G = clipped_gradient(p0, prob, grid16, CLIP, arch1d) + _data_term(p0, obs, CLIP, arch1d)
        np.testing.assert_allclose(p1.to_vector() - p0.to_vector(), 0.01 * alpha_N(9, 0.6) * G,
                                   rtol=1e-12, atol=1e-16)
