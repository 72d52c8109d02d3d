"""Numerical self-checks behind ``mixtwice check``.

Each check compares a production routine against an independent evaluation
on random small instances.
"""

import numpy as np

from .densities import UnitStats, build_component_tensor
from .estimator import (
    FitOptions,
    MixingPairView,
    constraint_violation,
    fit_tensor,
    gradient,
    hessian,
    neg_log_likelihood,
)
from .grids import VarianceGrid, build_effect_grid, build_variance_grid
from .inference import posterior


def random_instance(rng, max_m=50, max_k=3, max_l=4):
    """Small random data set with its grids and component tensor."""
    m = int(rng.integers(5, max_m + 1))
    K = int(rng.integers(1, max_k + 1))
    L = int(rng.integers(1, max_l + 1))
    nu = float(rng.uniform(2.0, 30.0))
    x = rng.normal(0.0, rng.uniform(0.5, 3.0), m)
    s2 = rng.uniform(0.3, 3.0) * rng.chisquare(nu, m) / nu
    stats = UnitStats(x, s2, nu)
    eg = build_effect_grid(stats, K)
    vg = build_variance_grid(stats, L)
    return stats, eg, vg, build_component_tensor(stats, eg, vg)


def random_interior(rng, n_g, n_h):
    """Strictly positive unimodal ``g`` and positive ``h`` on their simplices."""
    K = n_g // 2
    steps = rng.uniform(0.1, 1.0, K + 1)
    left = np.cumsum(steps)
    right = left[K] - np.cumsum(rng.uniform(0.0, left[K] / (K + 1), K))
    g = np.concatenate([left, right])
    h = rng.uniform(0.2, 1.0, n_h)
    return g / g.sum(), h / h.sum()


def _objective(tensor, z, n_g):
    return neg_log_likelihood(tensor, MixingPairView(z[:n_g], z[n_g:]))


def _grad(tensor, z, n_g):
    return gradient(tensor, MixingPairView(z[:n_g], z[n_g:]))


def _rel_err(approx, exact):
    return float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1e-300))


def gradient_error(tensor, g, h, step=1e-6):
    """Relative max-norm gap between the analytic and central-difference gradients."""
    n_g = g.size
    z = np.concatenate([g, h])
    fd = np.empty_like(z)
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = step
        fd[j] = (_objective(tensor, z + e, n_g) - _objective(tensor, z - e, n_g)) / (2 * step)
    return _rel_err(fd, _grad(tensor, z, n_g))


def hessian_error(tensor, g, h, step=1e-6):
    """Relative max-norm gap between the analytic Hessian and differenced gradients."""
    n_g = g.size
    z = np.concatenate([g, h])
    fd = np.empty((z.size, z.size))
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = step
        fd[:, j] = (_grad(tensor, z + e, n_g) - _grad(tensor, z - e, n_g)) / (2 * step)
    return _rel_err(fd, hessian(tensor, MixingPairView(g, h)))


def closed_form_posterior(x, g, points, variance):
    """Known-variance posterior ``g_k phi((x - a_k)/sigma) / sigma``, normalized."""
    z = (np.asarray(x)[:, None] - points[None, :]) / np.sqrt(variance)
    w = g[None, :] * np.exp(-0.5 * z**2)
    return w / w.sum(axis=1, keepdims=True)


def oracle_gap(rng):
    """Max abs difference between the single-variance posterior and its closed form."""
    stats, eg, _, _ = random_instance(rng)
    b = float(rng.uniform(0.3, 3.0))
    tensor = build_component_tensor(stats, eg, VarianceGrid(np.array([b])))
    g, _ = random_interior(rng, len(eg), 1)
    table = posterior(tensor, MixingPairView(g, np.ones(1)))
    return float(np.max(np.abs(table.mass - closed_form_posterior(stats.x, g, eg.points, b))))


def run_self_checks(seed=0, n_instances=20):
    """Return ``(name, passed, detail)`` triples."""
    rng = np.random.default_rng(seed)
    grad_errs, hess_errs, gaps, viols = [], [], [], []
    for _ in range(n_instances):
        _, eg, vg, tensor = random_instance(rng)
        g, h = random_interior(rng, len(eg), len(vg))
        grad_errs.append(gradient_error(tensor, g, h))
        hess_errs.append(hessian_error(tensor, g, h))
        gaps.append(oracle_gap(rng))
    for _ in range(max(1, n_instances // 4)):
        _, _, _, tensor = random_instance(rng)
        rep = fit_tensor(tensor, FitOptions())
        viols.append(constraint_violation(rep.mixing.g, rep.mixing.h))
    return [
        ("gradient", max(grad_errs) < 1e-5, f"max relative error {max(grad_errs):.2e}"),
        ("hessian", max(hess_errs) < 1e-4, f"max relative error {max(hess_errs):.2e}"),
        ("known-variance posterior", max(gaps) < 1e-10, f"max abs difference {max(gaps):.2e}"),
        ("fit constraints", max(viols) <= 1e-6, f"max violation {max(viols):.2e}"),
    ]
