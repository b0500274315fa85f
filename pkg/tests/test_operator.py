import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ntkpde.domain import DomainSpec, build_grid
from ntkpde.errors import ConfigurationError
from ntkpde.jets import Jet2
from ntkpde.operator import (OperatorSpec, advection_diffusion, apply_operator, check_symmetric,
                             ellipticity_sign, homogenize, identity, jet_multiindex_l1,
                             lipschitz_constant, make_operator, make_solution,
                             manufactured_problem, neg_laplace, neg_laplace_plus_c,
                             zero_problem)

UNIT = DomainSpec.interval(0.0, 1.0)
SQUARE = DomainSpec.box([0.0, 0.0], [1.0, 1.0])


def _x_jet(f, df, d2f):
    return lambda X: Jet2(f(X[:, 0]), df(X[:, 0])[:, None], d2f(X[:, 0])[:, None, None])


def _variable_operator():
    """a = -(1 + x^2), b = sin x, c0 = 2 + sin x in 1D."""
    return OperatorSpec(1, lambda X: -(1 + X[:, 0] ** 2)[:, None, None],
                        lambda X: np.sin(X[:, :1]), lambda X: 2 + np.sin(X[:, 0]))


class TestApplyOperator:
    def test_neg_laplace_of_sine(self):
        jet = Jet2(1.0, np.array([0.0]), np.array([[-math.pi ** 2]]))
        assert apply_operator(neg_laplace(1), jet, np.array([0.5])) == pytest.approx(math.pi ** 2)

    def test_identity_returns_value(self, rng):
        jet = Jet2(rng.normal(), rng.normal(size=2), np.eye(2))
        assert apply_operator(identity(2), jet, np.array([0.3, 0.4])) == jet.value

    def test_helmholtz_on_bilinear(self):
        jet = Jet2(1.0, np.array([1.0, 1.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert apply_operator(neg_laplace_plus_c(2, 1.0), jet, np.array([1.0, 1.0])) == 1.0

    def test_batched_extra_axes(self, rng):
        X = rng.uniform(size=(4, 2))
        jet = Jet2(rng.normal(size=(4, 3)), rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3, 2, 2)))
        op = advection_diffusion(2, nu=0.5, velocity=[1.0, -2.0], c=0.3)
        out = apply_operator(op, jet, X)
        assert out.shape == (4, 3)
        for i in range(4):
            for k in range(3):
                single = Jet2(jet.value[i, k], jet.gradient[i, k], jet.hessian[i, k])
                assert out[i, k] == pytest.approx(apply_operator(op, single, X[i]))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 31))
    def test_linear_in_jet(self, alpha, beta, seed):
        r = np.random.default_rng(seed)
        X = r.uniform(size=(3, 2))
        f = Jet2(r.normal(size=3), r.normal(size=(3, 2)), r.normal(size=(3, 2, 2)))
        g = Jet2(r.normal(size=3), r.normal(size=(3, 2)), r.normal(size=(3, 2, 2)))
        op = advection_diffusion(2, nu=1.3, velocity=[0.2, 0.7], c=-0.4)
        lhs = apply_operator(op, f.scale(alpha) + g.scale(beta), X)
        rhs = alpha * apply_operator(op, f, X) + beta * apply_operator(op, g, X)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


class TestOperatorChecks:
    def test_named_lookup(self):
        assert make_operator("neg_laplace", 2).name == "neg_laplace"
        with pytest.raises(ConfigurationError):
            make_operator("biharmonic", 1)

    def test_symmetry_and_sign(self):
        grid = build_grid(SQUARE, 4)
        assert check_symmetric(neg_laplace(2), grid)
        assert ellipticity_sign(neg_laplace(2), grid) == -1
        assert ellipticity_sign(identity(2), grid) == 0
        assert neg_laplace(1).has_bounded_inverse and not identity(1).has_bounded_inverse

    def test_asymmetric_coefficients_detected(self):
        op = OperatorSpec(2, lambda X: np.broadcast_to([[1.0, 2.0], [0.0, 1.0]], (len(X), 2, 2)),
                          lambda X: np.zeros((len(X), 2)), lambda X: np.zeros(len(X)))
        assert not check_symmetric(op, build_grid(SQUARE, 3))

    @pytest.mark.parametrize("op, expected", [(neg_laplace(1), 1.0), (identity(1), 1.0),
                                              (neg_laplace_plus_c(1, 3.0), 3.0)])
    def test_lipschitz_constant_coefficients(self, op, expected):
        assert lipschitz_constant(op, build_grid(UNIT, 8)) == expected

    def test_lipschitz_variable_c0(self):
        op = OperatorSpec(1, lambda X: -np.ones((len(X), 1, 1)), lambda X: np.zeros((len(X), 1)),
                          lambda X: 2 + np.sin(X[:, 0]))
        k = lipschitz_constant(op, build_grid(UNIT, 64))
        dense = 2 + np.sin(np.linspace(0, 1, 100_001)).max()
        assert k == pytest.approx(2 + math.sin(1), abs=1e-3)
        assert k <= dense

    def test_lipschitz_rejects_unbounded(self):
        op = OperatorSpec(1, lambda X: -np.ones((len(X), 1, 1)), lambda X: np.zeros((len(X), 1)),
                          lambda X: 1 / (X[:, 0] - X[:, 0]))
        with np.errstate(divide="ignore", invalid="ignore"), pytest.raises(ConfigurationError):
            lipschitz_constant(op, build_grid(UNIT, 4))

    @pytest.mark.parametrize("op", [neg_laplace(2), advection_diffusion(2, 0.7, [1.0, -3.0], 2.0),
                                    neg_laplace_plus_c(2, -4.0)])
    def test_lipschitz_bound_on_random_jets(self, op, rng):
        grid = build_grid(SQUARE, 5)
        k = lipschitz_constant(op, grid)
        X = grid.nodes
        for _ in range(20):
            f1 = Jet2(rng.normal(size=len(X)), rng.normal(size=(len(X), 2)), rng.normal(size=(len(X), 2, 2)))
            f2 = Jet2(rng.normal(size=len(X)), rng.normal(size=(len(X), 2)), rng.normal(size=(len(X), 2, 2)))
            f1 = Jet2(f1.value, f1.gradient, f1.hessian + np.swapaxes(f1.hessian, 1, 2))
            f2 = Jet2(f2.value, f2.gradient, f2.hessian + np.swapaxes(f2.hessian, 1, 2))
            diff = np.abs(apply_operator(op, f1, X) - apply_operator(op, f2, X))
            assert np.all(diff <= k * jet_multiindex_l1(f1 - f2) + 1e-12)


class TestHomogenize:
    def test_zero_extension_keeps_rhs(self):
        h = lambda X: np.cos(X[:, 0])
        zero = lambda X: Jet2.zeros(len(X), 1)
        prob = homogenize(neg_laplace(1), h, zero, UNIT)
        X = np.linspace(0.1, 0.9, 5)[:, None]
        np.testing.assert_array_equal(prob.rhs(X), h(X))

    def test_harmonic_extension(self):
        fbar = _x_jet(lambda x: x, np.ones_like, np.zeros_like)
        prob = homogenize(neg_laplace(1), lambda X: np.zeros(len(X)), fbar, UNIT)
        np.testing.assert_array_equal(prob.rhs(np.array([[0.2], [0.7]])), 0.0)

    def test_quadratic_extension_sign(self):
        # A f = -f'' = -2 for f = x^2, so g = 2 - (-2)
        fbar = _x_jet(lambda x: x ** 2, lambda x: 2 * x, lambda x: np.full_like(x, 2.0))
        prob = homogenize(neg_laplace(1), lambda X: np.full(len(X), 2.0), fbar, UNIT)
        np.testing.assert_allclose(prob.rhs(np.array([[0.2], [0.7]])), 4.0)

    def test_exact_solution_shifted(self):
        fbar = _x_jet(lambda x: 1 + x, np.ones_like, np.zeros_like)
        v = make_solution("sine", UNIT)
        shifted = _x_jet(lambda x: np.sin(np.pi * x) + 1 + x, lambda x: np.pi * np.cos(np.pi * x) + 1,
                         lambda x: -np.pi ** 2 * np.sin(np.pi * x))
        from ntkpde.operator import ExactSolution
        prob = homogenize(neg_laplace(1), lambda X: np.pi ** 2 * np.sin(np.pi * X[:, 0]), fbar, UNIT,
                          ExactSolution("v", shifted))
        X = np.linspace(0.05, 0.95, 7)[:, None]
        np.testing.assert_allclose(prob.exact(X), v(X), atol=1e-14)
        assert prob.residual_of_exact(build_grid(UNIT, 12)) < 1e-12


class TestManufacturedProblem:
    def test_sine_rhs(self):
        prob = manufactured_problem(UNIT, neg_laplace(1), make_solution("sine", UNIT))
        X = np.linspace(0.05, 0.95, 9)[:, None]
        np.testing.assert_allclose(prob.rhs(X), np.pi ** 2 * np.sin(np.pi * X[:, 0]), rtol=1e-13)

    def test_bubble_rhs(self):
        prob = manufactured_problem(UNIT, neg_laplace(1), make_solution("bubble", UNIT))
        np.testing.assert_allclose(prob.rhs(np.linspace(0.1, 0.9, 5)[:, None]), 2.0)

    def test_separable_sine_rhs(self):
        prob = manufactured_problem(SQUARE, neg_laplace(2), make_solution("sine", SQUARE))
        X = np.random.default_rng(0).uniform(size=(10, 2))
        expected = 2 * np.pi ** 2 * np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1])
        np.testing.assert_allclose(prob.rhs(X), expected, rtol=1e-12)

    def test_sine_needs_rectangular_domain(self):
        with pytest.raises(ConfigurationError):
            make_solution("sine", DomainSpec.ball([0.0, 0.0], 1.0))

    def test_nonvanishing_trace_rejected(self):
        from ntkpde.operator import ExactSolution
        bad = ExactSolution("one", lambda X: Jet2(np.ones(len(X)), np.zeros((len(X), 1)),
                                                  np.zeros((len(X), 1, 1))))
        with pytest.raises(ConfigurationError):
            manufactured_problem(UNIT, neg_laplace(1), bad)

    @pytest.mark.parametrize("domain, solution", [
        (UNIT, "sine"), (UNIT, "bubble"), (SQUARE, "sine"), (SQUARE, "bubble"),
        (DomainSpec.ball([0.0, 0.0], 1.0), "bubble")])
    def test_residual_on_finer_grid(self, domain, solution):
        op = advection_diffusion(domain.dim, 0.8, np.ones(domain.dim), 1.5)
        prob = manufactured_problem(domain, op, make_solution(solution, domain))
        assert prob.residual_of_exact(build_grid(domain, 20)) < 1e-10

    def test_sine_jet_matches_finite_differences(self, rng):
        u = make_solution("sine", SQUARE, amplitude=1.7)
        X = rng.uniform(0.1, 0.9, size=(6, 2))
        h = 1e-5
        jet = u.jet(X)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            np.testing.assert_allclose((u(X + e) - u(X - e)) / (2 * h), jet.gradient[:, k], atol=1e-8)
            np.testing.assert_allclose((u.jet(X + e).gradient - u.jet(X - e).gradient) / (2 * h),
                                       jet.hessian[:, k], atol=1e-7)

    def test_zero_problem(self):
        prob = zero_problem(UNIT, neg_laplace(1))
        assert prob.residual_of_exact(build_grid(UNIT, 4)) == 0.0
