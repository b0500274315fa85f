"""Randomised finite-difference checks of every closed-form derivative operation."""

import itertools

import numpy as np

from ntkpde.domain import DomainSpec, default_eta
from ntkpde.network import (eval_jet, get_activation, init_params,
                            mixed_param_space_derivative, param_gradient, param_gradient_of_AQ)
from ntkpde.operator import OperatorSpec, advection_diffusion, apply_operator, neg_laplace

from oracles import central_diff, relative_error

H = 1e-5


def variable_operator(d):
    """Non-constant, non-diagonal coefficients to exercise every term."""
    def a(X):
        A = -np.eye(d)[None] * (1 + X[:, :1, None] ** 2)
        if d == 2:
            off = 0.3 * np.sin(X[:, 0] + X[:, 1])
            A[:, 0, 1] += off
            A[:, 1, 0] += off
        return A
    return OperatorSpec(d, a, lambda X: np.cos(X), lambda X: 2 + np.sin(X.sum(axis=1)), "variable")


def random_case(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3))
    N = int(rng.integers(1, 11))
    if d == 2 and rng.random() < 0.3:
        domain = DomainSpec.ball([0.2, -0.1], 1.5)
    else:
        lo = rng.uniform(-1, 0, size=d)
        domain = DomainSpec.box(lo, lo + rng.uniform(0.5, 2, size=d))
    act = get_activation(["tanh", "sigmoid"][int(rng.integers(2))])
    op = [neg_laplace(d), advection_diffusion(d, 0.7, rng.normal(size=d), 1.3),
          variable_operator(d)][int(rng.integers(3))]
    params = init_params(N, d, seed=seed, beta=float(rng.uniform(0.55, 0.95)))
    x = domain.sample_uniform(rng, 1)[0]
    return params, default_eta(domain), act, op, x


def check_case(seed):
    """Worst relative error of each operation against central differences."""
    params, eta, act, op, x = random_case(seed)
    theta = params.to_vector()
    d = params.d
    errs = {}

    jet = eval_jet(params, eta, act, x)
    g_fd = central_diff(lambda y: eval_jet(params, eta, act, y).value, x, H)
    h_fd = central_diff(lambda y: eval_jet(params, eta, act, y).gradient, x, H)
    errs["eval_jet"] = max(relative_error(jet.gradient, g_fd), relative_error(jet.hessian, h_fd))

    q = lambda th: eval_jet(params.with_vector(th), eta, act, x).value
    errs["param_gradient"] = relative_error(param_gradient(params, eta, act, x),
                                            central_diff(q, theta, H))

    aq = lambda th: apply_operator(op, eval_jet(params.with_vector(th), eta, act, x), x)
    errs["param_gradient_of_AQ"] = relative_error(param_gradient_of_AQ(params, eta, act, op, x),
                                                  central_diff(aq, theta, H))

    worst = 0.0
    zero = (0,) * d
    for order in (1, 2):
        for axes in itertools.combinations_with_replacement(range(d), order):
            alpha = np.bincount(axes, minlength=d)
            lower = alpha.copy()
            lower[axes[-1]] -= 1
            k = axes[-1]
            fd = central_diff(
                lambda t: mixed_param_space_derivative(params, eta, act, x + t[0] * np.eye(d)[k], lower),
                np.zeros(1), H)[..., 0]
            got = mixed_param_space_derivative(params, eta, act, x, alpha)
            worst = max(worst, relative_error(got, fd))
    base = mixed_param_space_derivative(params, eta, act, x, zero)
    worst = max(worst, relative_error(base, param_gradient(params, eta, act, x), floor=1e-300))
    errs["mixed_param_space_derivative"] = worst
    return errs
