"""Constrained maximum likelihood for the effect and variance mixing distributions.

The negative log-likelihood ``-l(g, h) = -sum_i log sum_k sum_l g_k h_l c[i,k,l]``
is minimized over the simplex for ``h`` and the unimodal simplex for ``g``
(nondecreasing up to the null grid point, nonincreasing after it). The solver is
an augmented Lagrangian outer loop around BFGS inner solves whose inverse
Hessian is seeded from the analytic Hessian.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.isotonic import isotonic_regression

from ._validation import InvalidInputError, check_probability_vector
from .densities import DENSITY_FLOOR, build_component_tensor

#: Slack allowed on simplex and ordering constraints when validating a MixingPair.
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MixingPair:
    """Probability vectors ``g`` over the effect grid and ``h`` over the variance grid."""

    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        g = check_probability_vector(self.g, "g", atol=FEASIBILITY_TOL)
        h = check_probability_vector(self.h, "h", atol=FEASIBILITY_TOL)
        if g.size % 2 != 1:
            raise InvalidInputError("g must have odd length 2K+1")
        if unimodality_violation(g) > FEASIBILITY_TOL:
            raise InvalidInputError("g is not unimodal about its central entry")
        for arr in (g, h):
            arr.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @classmethod
    def unchecked(cls, g, h):
        """Wrap vectors without validation, e.g. a non-converged solver output."""
        obj = cls.__new__(cls)
        object.__setattr__(obj, "g", np.array(g, dtype=float))
        object.__setattr__(obj, "h", np.array(h, dtype=float))
        obj.g.setflags(write=False)
        obj.h.setflags(write=False)
        return obj

    @classmethod
    def uniform(cls, n_g, n_h):
        return cls(np.full(n_g, 1.0 / n_g), np.full(n_h, 1.0 / n_h))

    def __eq__(self, other):
        return (isinstance(other, MixingPair) and np.array_equal(self.g, other.g)
                and np.array_equal(self.h, other.h))

    __hash__ = None


@dataclass(frozen=True)
class FitOptions:
    """Solver settings.

    Parameters
    ----------
    max_outer : int
        Augmented Lagrangian iterations before giving up.
    tol : float
        Outer stopping tolerance on the KKT residual (feasibility,
        complementarity and Lagrangian stationarity of the per-unit-averaged
        objective).
    inner_tol : float
        Gradient infinity-norm tolerance of each inner BFGS solve.
    initial_penalty, penalty_growth, violation_shrink : float
        The penalty is multiplied by ``penalty_growth`` whenever the constraint
        violation fails to drop below ``violation_shrink`` times its previous value.
    multi_start : int
        Number of starting points; the first is uniform, the rest random feasible.
    polish : bool
        Follow the joint solve with alternating g-given-h / h-given-g refinement.
    seed : int
        Seeds subsampling and random restarts.
    init : MixingPair or None
        Starting point replacing the uniform default.
    """

    max_outer: int = 50
    tol: float = 1e-7
    inner_tol: float = 1e-8
    max_inner: int = 2000
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    violation_shrink: float = 0.25
    max_penalty: float = 1e12
    multi_start: int = 1
    polish: bool = False
    polish_rounds: int = 20
    seed: int = 0
    init: MixingPair = None

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1:
            raise InvalidInputError("iteration limits must be positive")
        if not (self.tol > 0 and self.inner_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        if self.multi_start < 1:
            raise InvalidInputError("multi_start must be at least 1")


@dataclass(frozen=True)
class FitReport:
    mixing: MixingPair
    neg_log_lik: float
    outer_iterations: int
    constraint_violation: float
    converged: bool
    subsample_fraction: float = 1.0
    seed: int = 0
    n_units: int = 0
    kkt_residual: float = field(default=float("nan"), compare=False)


class MixingPairView:
    """Unvalidated ``(g, h)`` holder for optimizer iterates off the feasible set."""

    __slots__ = ("g", "h")

    def __init__(self, g, h):
        self.g = g
        self.h = h


def unimodality_violation(g):
    """Largest breach of the ordering constraints about the central entry."""
    g = np.asarray(g, dtype=float)
    K = g.size // 2
    rise = np.diff(g[: K + 1])      # g_{k+1} - g_k >= 0 for k < 0
    fall = -np.diff(g[K:])          # g_k - g_{k+1} >= 0 for k >= 0
    worst = np.concatenate([rise, fall, [0.0]])
    return float(max(0.0, -worst.min()))


def constraint_violation(g, h):
    """Max over simplex, nonnegativity and ordering constraints."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    return float(max(
        abs(g.sum() - 1.0), abs(h.sum() - 1.0),
        max(0.0, -g.min()), max(0.0, -h.min()),
        unimodality_violation(g),
    ))


# -- objective pieces --------------------------------------------------------

def _check_dims(tensor, g, h):
    _, n_k, n_l = tensor.shape
    if np.shape(g) != (n_k,) or np.shape(h) != (n_l,):
        raise InvalidInputError(
            f"mixing vectors of length {np.size(g)}, {np.size(h)} do not match tensor {tensor.shape}"
        )


def _contract(block, g, h):
    """Per-unit ``P = sum_l h_l c``, ``Q = sum_k g_k c`` and ``d`` for one block."""
    n, n_k, n_l = block.shape
    P = (block.reshape(n * n_k, n_l) @ h).reshape(n, n_k)
    Q = np.matmul(g, block)
    d = np.maximum(P @ g, DENSITY_FLOOR)
    return P, Q, d


def _value_and_grad(tensor, g, h, need_grad=True, strict=False):
    """Objective and gradient; ``strict`` returns +inf where some ``d_i <= 0``."""
    f = 0.0
    gg = np.zeros(len(g))
    gh = np.zeros(len(h))
    for lo, hi, block in tensor.blocks():
        n, n_k, n_l = block.shape
        flat = block.reshape(n * n_k, n_l)
        P = (flat @ h).reshape(n, n_k)
        d = P @ g
        if strict and not d.min() > 0:
            return np.inf, gg + np.nan, gh + np.nan
        d = np.maximum(d, DENSITY_FLOOR)
        f -= np.sum(np.log(d)) + np.sum(tensor.log_scale[lo:hi])
        if need_grad:
            w = 1.0 / d
            gg -= P.T @ w
            gh -= np.outer(w, g).ravel() @ flat
    return f, gg, gh


def neg_log_likelihood(tensor, mix):
    """``-sum_i log d_i`` with ``d_i`` floored at the smallest normal double."""
    g, h = np.asarray(mix.g, float), np.asarray(mix.h, float)
    _check_dims(tensor, g, h)
    return float(_value_and_grad(tensor, g, h, need_grad=False)[0])


def gradient(tensor, mix):
    """Gradient of the negative log-likelihood, ordered ``(g, h)``."""
    g, h = np.asarray(mix.g, float), np.asarray(mix.h, float)
    _check_dims(tensor, g, h)
    _, gg, gh = _value_and_grad(tensor, g, h)
    return np.concatenate([gg, gh])


def hessian(tensor, mix):
    """Hessian of the negative log-likelihood as the block matrix ``[[A, B], [B', C]]``.

    ``A`` and ``C`` are sums of outer products ``P_i P_i' / d_i^2`` and
    ``Q_i Q_i' / d_i^2``; the mixed block is
    ``sum_i P_i Q_i' / d_i^2 - c_i / d_i``.
    """
    g, h = np.asarray(mix.g, float), np.asarray(mix.h, float)
    _check_dims(tensor, g, h)
    n_k, n_l = g.size, h.size
    A = np.zeros((n_k, n_k))
    B = np.zeros((n_k, n_l))
    C = np.zeros((n_l, n_l))
    for _, _, block in tensor.blocks():
        P, Q, d = _contract(block, g, h)
        Pw = P / d[:, None]
        Qw = Q / d[:, None]
        A += Pw.T @ Pw
        C += Qw.T @ Qw
        B += Pw.T @ Qw - np.tensordot(1.0 / d, block, axes=(0, 0))
    A = 0.5 * (A + A.T)
    C = 0.5 * (C + C.T)
    return np.block([[A, B], [B.T, C]])


# -- augmented Lagrangian ------------------------------------------------------

def _ordering_matrix(n_g):
    """Rows ``r`` with ``r @ g >= 0`` encoding unimodality about the centre."""
    K = n_g // 2
    rows = np.zeros((2 * K, n_g))
    for j, k in enumerate(range(K)):          # g[k+1] - g[k] >= 0 left of the mode
        rows[j, k], rows[j, k + 1] = -1.0, 1.0
    for j, k in enumerate(range(K, n_g - 1)):  # g[k] - g[k+1] >= 0 right of the mode
        rows[K + j, k], rows[K + j, k + 1] = 1.0, -1.0
    return rows


@dataclass
class _Problem:
    """Linear-constrained problem in the free variables ``z``."""

    fun: object            # z -> (value, grad)
    hess: object           # z -> Hessian of the objective
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray       # A_in @ z >= 0
    lam0: np.ndarray


def _seed_inverse(H):
    """Inverse of ``H`` after lifting its spectrum to be safely positive."""
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    floor = max(w.max(), 1.0) * 1e-8
    w = np.maximum(w, floor)
    return (V / w) @ V.T


def _bfgs(fun, x, seed, tol, maxiter, regime=None):
    """Dense BFGS with Wolfe line search.

    ``seed(x)`` supplies an inverse-Hessian approximation. It is used at the
    start and again whenever ``regime(x)`` changes; for a piecewise-quadratic
    penalty that marks a jump in curvature the secant updates cannot track.
    """
    f, grad = fun(x)
    H_inv = seed(x)
    state = None if regime is None else regime(x)
    n_iter = 0
    for n_iter in range(1, maxiter + 1):
        if np.abs(grad).max() <= tol:
            break
        p = -H_inv @ grad
        slope = grad @ p
        if slope >= 0:
            H_inv = np.eye(x.size)
            p = -grad
            slope = grad @ p
        step, f_new, x_new, g_new = _line_search(fun, x, f, grad, p, slope)
        if step is None:
            break
        s = x_new - x
        y = g_new - grad
        sy = s @ y
        x, f_old, f, grad = x_new, f, f_new, g_new
        new_state = None if regime is None else regime(x)
        if new_state is not None and not np.array_equal(new_state, state):
            H_inv = seed(x)
            state = new_state
        elif sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            rho = 1.0 / sy
            Hy = H_inv @ y
            H_inv = (H_inv - rho * (np.outer(Hy, s) + np.outer(s, Hy))
                     + (rho * rho * (y @ Hy) + rho) * np.outer(s, s))
        if f_old - f <= 1e-16 * max(1.0, abs(f)) and np.abs(grad).max() <= 1e3 * tol:
            break
    return x, f, grad, n_iter


def _line_search(fun, x, f, grad, p, slope, c1=1e-4, c2=0.9, max_steps=40, max_move=0.25):
    """Weak Wolfe bracketing search; returns ``(step, f, x, grad)`` or all None.

    The first trial step moves no coordinate by more than ``max_move``;
    the variables are probabilities, so larger moves are never useful.
    """
    lo, hi = 0.0, np.inf
    t = min(1.0, max_move / max(np.abs(p).max(), 1e-300))
    best = None
    for _ in range(max_steps):
        x_new = x + t * p
        f_new, g_new = fun(x_new)
        if not np.isfinite(f_new) or f_new > f + c1 * t * slope:
            hi = t
        elif g_new @ p < c2 * slope:
            best = (t, f_new, x_new, g_new)
            lo = t
        else:
            return t, f_new, x_new, g_new
        t = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo
    if best is not None:
        return best
    return None, None, None, None


def _auglag(problem, z0, opts):
    """Powell-Hestenes-Rockafellar augmented Lagrangian for linear constraints.

    Returns the final iterate, outer iteration count, convergence flag and the
    KKT residual (max of infeasibility, complementarity and the infinity norm
    of the Lagrangian gradient).
    """
    A_eq, b_eq, A_in = problem.A_eq, problem.b_eq, problem.A_in
    lam = problem.lam0.astype(float).copy()
    mu = np.zeros(A_in.shape[0])
    rho = float(opts.initial_penalty)
    z = np.asarray(z0, float).copy()

    def merit(v):
        f, grad = problem.fun(v)
        e = A_eq @ v - b_eq
        c = A_in @ v
        active = c < mu / rho
        f += -lam @ e + 0.5 * rho * (e @ e)
        f += np.sum(-mu[active] * c[active] + 0.5 * rho * c[active] ** 2)
        f -= np.sum(mu[~active] ** 2) / (2.0 * rho)
        grad = grad + A_eq.T @ (rho * e - lam) + A_in.T @ np.where(active, rho * c - mu, 0.0)
        return f, grad

    def merit_hessian(v):
        c = A_in @ v
        act = A_in[c < mu / rho]
        return problem.hess(v) + rho * (A_eq.T @ A_eq + act.T @ act)

    def violation(v):
        e = np.abs(A_eq @ v - b_eq).max(initial=0.0)
        return max(e, max(0.0, -(A_in @ v).min(initial=0.0)))

    prev_viol = violation(z)
    residual = np.inf
    outer = 0
    converged = False
    for outer in range(1, opts.max_outer + 1):
        z, _, _, _ = _bfgs(merit, z, lambda v: _seed_inverse(merit_hessian(v)), opts.inner_tol,
                           opts.max_inner, regime=lambda v: A_in @ v < mu / rho)
        viol = violation(z)
        c = A_in @ z
        lam = lam - rho * (A_eq @ z - b_eq)
        mu = np.maximum(0.0, mu - rho * c)
        _, grad = problem.fun(z)
        stationarity = np.abs(grad - A_eq.T @ lam - A_in.T @ mu).max()
        complementarity = np.abs(np.minimum(mu, np.maximum(c, 0.0))).max(initial=0.0)
        residual = max(viol, stationarity, complementarity)
        if residual <= opts.tol:
            converged = True
            break
        if viol > opts.violation_shrink * prev_viol:
            rho = min(rho * opts.penalty_growth, opts.max_penalty)
        prev_viol = viol
    return z, outer, converged, residual


def _polish_blocks(tensor, z_g, z_h, opts, scale):
    """Alternate the two convex conditional problems until the objective stalls."""
    f_old = np.inf
    rounds = 0
    converged = False
    for rounds in range(1, opts.polish_rounds + 1):
        z_g, *_ = _auglag(_g_problem(tensor, z_h, scale), z_g, opts)
        z_h, *_ = _auglag(_h_problem(tensor, z_g, scale), z_h, opts)
        f = _value_and_grad(tensor, z_g, z_h, need_grad=False)[0] * scale
        if f_old - f <= opts.tol:
            converged = True
            break
        f_old = f
    return z_g, z_h, rounds, converged


def _joint_problem(tensor, scale):
    _, n_g, n_h = tensor.shape
    A_eq = np.zeros((2, n_g + n_h))
    A_eq[0, :n_g] = 1.0
    A_eq[1, n_g:] = 1.0
    order = np.hstack([_ordering_matrix(n_g), np.zeros((2 * (n_g // 2), n_h))])
    A_in = np.vstack([order, np.eye(n_g + n_h)])

    def fun(z):
        f, gg, gh = _value_and_grad(tensor, z[:n_g], z[n_g:], strict=True)
        return f * scale, np.concatenate([gg, gh]) * scale

    def hess(z):
        return hessian(tensor, MixingPairView(z[:n_g], z[n_g:])) * scale

    # d_i is homogeneous of degree one in each block, so at any KKT point the
    # simplex multipliers equal -1 for the per-unit-averaged objective.
    return _Problem(fun, hess, A_eq, np.ones(2), A_in, -np.ones(2))


def _g_problem(tensor, h, scale):
    n_g = tensor.shape[1]

    def fun(g):
        f, gg, _ = _value_and_grad(tensor, g, h, strict=True)
        return f * scale, gg * scale

    def hess(g):
        return hessian(tensor, MixingPairView(g, h))[:n_g, :n_g] * scale

    A_in = np.vstack([_ordering_matrix(n_g), np.eye(n_g)])
    return _Problem(fun, hess, np.ones((1, n_g)), np.ones(1), A_in, -np.ones(1))


def _h_problem(tensor, g, scale):
    n_h = tensor.shape[2]

    def fun(h):
        f, _, gh = _value_and_grad(tensor, g, h, strict=True)
        return f * scale, gh * scale

    def hess(h):
        return hessian(tensor, MixingPairView(g, h))[-n_h:, -n_h:] * scale

    return _Problem(fun, hess, np.ones((1, n_h)), np.ones(1), np.eye(n_h), -np.ones(1))


def _project(v, slack=1e-10):
    """Zero negative entries no larger than ``slack`` in magnitude and renormalize."""
    v = np.where((v < 0) & (v >= -slack), 0.0, v)
    return v / v.sum()


def _project_unimodal(g, slack=1e-10):
    """Clamp, then pool residual ordering breaches on each side of the mode."""
    g = _project(g, slack)
    if unimodality_violation(g) == 0.0:
        return g
    K = g.size // 2
    left = isotonic_regression(g[: K + 1], increasing=True)
    right = isotonic_regression(g[K:], increasing=False)
    out = np.concatenate([left[:K], [max(left[K], right[0])], right[1:]])
    return _project(out, slack)


def _random_start(rng, n_g, n_h):
    w = np.sort(rng.dirichlet(np.ones(n_g)))[::-1]
    g = np.empty(n_g)
    K = n_g // 2
    # largest weight at the mode, then alternate outward
    order = [K] + [K + s * j for j in range(1, K + 1) for s in (-1, 1)]
    g[order] = w
    return g, rng.dirichlet(np.ones(n_h))


def fit_tensor(tensor, options=None, fix_h=None):
    """Fit the mixing pair on a prebuilt component tensor.

    ``fix_h`` freezes the variance mixing vector (used for the known-variance
    baseline); with a single variance grid point ``h`` is fixed at ``[1]``.
    """
    opts = options or FitOptions()
    m, n_g, n_h = tensor.shape
    scale = 1.0 / m
    if fix_h is None and n_h == 1:
        fix_h = np.ones(1)

    starts = []
    if opts.init is not None:
        _check_dims(tensor, opts.init.g, opts.init.h)
        starts.append((np.array(opts.init.g, float), np.array(opts.init.h, float)))
    else:
        starts.append((np.full(n_g, 1.0 / n_g), np.full(n_h, 1.0 / n_h)))
    rng = np.random.default_rng(opts.seed)
    while len(starts) < opts.multi_start:
        starts.append(_random_start(rng, n_g, n_h))
    if fix_h is not None:
        fix_h = np.asarray(fix_h, float)
        starts = [(g0, fix_h) for g0, _ in starts]

    g_init, h_init = starts[0]
    f_init = _value_and_grad(tensor, g_init, h_init, need_grad=False)[0]

    best = None
    for g0, h0 in starts:
        if fix_h is not None:
            g, outer, conv, resid = _auglag(_g_problem(tensor, fix_h, scale), g0, opts)
            h = fix_h.copy()
        else:
            z, outer, conv, resid = _auglag(_joint_problem(tensor, scale), np.concatenate([g0, h0]), opts)
            g, h = z[:n_g], z[n_g:]
            if opts.polish:
                g, h, extra, pconv = _polish_blocks(tensor, g, h, opts, scale)
                outer += extra
        slack = max(1e-10, opts.tol)
        g, h = _project_unimodal(g, slack), _project(h, slack)
        f = _value_and_grad(tensor, g, h, need_grad=False)[0]
        candidate = (f, g, h, outer, conv, resid)
        if best is None or f < best[0]:
            best = candidate

    f, g, h, outer, conv, resid = best
    # never report something worse than the feasible starting point
    if f > f_init and constraint_violation(g_init, h_init) <= FEASIBILITY_TOL:
        f, g, h = f_init, g_init / g_init.sum(), h_init / h_init.sum()
    viol = constraint_violation(g, h)
    mixing = MixingPair(g, h) if viol <= FEASIBILITY_TOL else MixingPair.unchecked(g, h)
    return FitReport(
        mixing=mixing,
        neg_log_lik=float(f),
        outer_iterations=int(outer),
        constraint_violation=viol,
        converged=bool(conv),
        subsample_fraction=1.0,
        seed=int(opts.seed),
        n_units=int(m),
        kkt_residual=float(resid),
    )


def fit(stats, effect_grid, variance_grid, options=None, **tensor_kwargs):
    """Constrained MLE of ``(g, h)`` from all units."""
    tensor = build_component_tensor(stats, effect_grid, variance_grid, **tensor_kwargs)
    return fit_tensor(tensor, options)


def subsample_indices(m, fraction, seed):
    """Sorted uniform sample without replacement of ``round(fraction * m)`` units."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return np.arange(m)
    size = int(round(fraction * m))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(m, size=size, replace=False))


def subsample_fit(stats, effect_grid, variance_grid, fraction=1.0, seed=0, options=None,
                  **tensor_kwargs):
    """Fit on a random subset of units; the grids still come from the caller.

    Raises
    ------
    InvalidInputError
        If the subset has fewer units than free parameters ``(2K+1) + L``.
    """
    fraction = float(fraction)
    n_params = len(effect_grid) + len(variance_grid)
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"fraction must lie in (0, 1], got {fraction}")
    if round(fraction * len(stats)) < n_params:
        raise InvalidInputError(
            f"subsample of {round(fraction * len(stats))} units is smaller than the "
            f"{n_params} mixing parameters"
        )
    opts = options or FitOptions()
    opts = replace(opts, seed=int(seed))
    idx = subsample_indices(len(stats), fraction, seed)
    sub = stats if idx.size == len(stats) else stats.subset(idx)
    report = fit(sub, effect_grid, variance_grid, opts, **tensor_kwargs)
    return replace(report, subsample_fraction=fraction)
