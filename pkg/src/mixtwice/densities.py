"""Sampling densities and the per-unit component density tensor.

Every likelihood, gradient and posterior computation reduces to contractions
of the tensor ``c[i, k, l]``: the joint density of unit ``i``'s summary
statistics when its effect sits at grid point ``a_k`` and its variance at
``b_l``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._parallel import chunk_bounds, map_ordered
from ._validation import InvalidInputError, as_1d_float, check_positive

LOG_2PI = np.log(2.0 * np.pi)
#: Per-unit likelihood floor applied before taking logarithms.
DENSITY_FLOOR = np.finfo(float).tiny
#: Degrees of freedom above which tensors are built in log space by default.
LOG_SPACE_NU = 300.0
#: Default cap on the materialized tensor size, in bytes.
DEFAULT_MEMORY_BUDGET = 2 * 1024**3
#: Target size of one block handed to the reduction kernels; roughly cache sized.
BLOCK_BYTES = 1024**2


@dataclass(frozen=True, eq=False)
class UnitStats:
    """Summary statistics for ``m`` testing units.

    Parameters
    ----------
    x : array-like of shape (m,)
        Effect estimates.
    s2 : array-like of shape (m,)
        Squared standard errors, strictly positive.
    nu : float or array-like of shape (m,)
        Degrees of freedom of the chi-square model for ``s2``. Non-integer
        values are allowed.
    """

    x: np.ndarray
    s2: np.ndarray
    nu: np.ndarray = field(default=None)

    def __post_init__(self):
        x = as_1d_float(self.x, "x")
        s2 = check_positive(as_1d_float(self.s2, "s2"), "s2")
        if s2.shape != x.shape:
            raise InvalidInputError(f"x and s2 lengths differ ({x.size} vs {s2.size})")
        if self.nu is None:
            raise InvalidInputError("degrees of freedom nu are required")
        nu = as_1d_float(self.nu, "nu")
        if nu.size == 1:
            nu = np.full(x.shape, nu[0])
        if nu.shape != x.shape:
            raise InvalidInputError(f"nu has length {nu.size}, expected {x.size}")
        check_positive(nu, "nu")
        for arr in (x, s2, nu):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def from_standard_errors(cls, x, s, nu):
        s = check_positive(as_1d_float(s, "s"), "s")
        return cls(x, s**2, nu)

    def __len__(self):
        return self.x.size

    def subset(self, index):
        index = np.asarray(index)
        return UnitStats(self.x[index], self.s2[index], self.nu[index])


def normal_density(x, mean, variance):
    """Gaussian density ``phi((x - mean) / sqrt(variance)) / sqrt(variance)``."""
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise InvalidInputError("variance must be strictly positive")
    z2 = (np.asarray(x, dtype=float) - mean) ** 2 / variance
    return np.exp(-0.5 * z2) / np.sqrt(2.0 * np.pi * variance)


def log_scaled_chisq_density(s2, b, nu):
    """Log density of ``s2`` when ``nu * s2 / b`` is chi-square on ``nu`` df."""
    s2, b, nu = (np.asarray(v, dtype=float) for v in (s2, b, nu))
    if np.any(~(s2 > 0)) or np.any(~(b > 0)) or np.any(~(nu > 0)):
        raise InvalidInputError("s2, b and nu must all be strictly positive")
    half = 0.5 * nu
    t = nu * s2 / b
    return np.log(nu / b) + (half - 1.0) * np.log(t) - 0.5 * t - half * np.log(2.0) - gammaln(half)


def scaled_chisq_density(s2, b, nu):
    """Density of ``s2`` given true variance ``b``: ``(nu/b) * chi2_nu(nu * s2 / b)``."""
    return np.exp(log_scaled_chisq_density(s2, b, nu))


def _log_components(x, s2, nu, a, b):
    # (n, K', L) log of c[i, k, l]
    log_norm = -0.5 * (LOG_2PI + np.log(b))[None, None, :] - (
        (x[:, None] - a[None, :]) ** 2
    )[:, :, None] / (2.0 * b)[None, None, :]
    log_chi = log_scaled_chisq_density(s2[:, None], b[None, :], nu[:, None])
    return log_norm + log_chi[:, None, :]


def _linear_components(x, s2, nu, a, b):
    norm = normal_density(x[:, None, None], a[None, :, None], b[None, None, :])
    chi = scaled_chisq_density(s2[:, None], b[None, :], nu[:, None])
    return norm * chi[:, None, :]


class ComponentTensor:
    """The ``m x (2K+1) x L`` array of component densities ``c[i, k, l]``.

    Parameters
    ----------
    stats : UnitStats
    effect_grid : EffectGrid
    variance_grid : VarianceGrid
    log_space : bool or None, default=None
        Build entries as ``exp(log c - log_scale[i])`` with a per-unit offset
        ``log_scale[i] = max_{k,l} log c[i, k, l]``. ``None`` switches this on
        when any ``nu`` exceeds ``LOG_SPACE_NU``. With the offset, the stored
        block for unit ``i`` equals the true slice times ``exp(-log_scale[i])``;
        likelihood routines add the offset back.
    memory_budget : int, default=DEFAULT_MEMORY_BUDGET
        When the full tensor would take more bytes than this, slices are
        recomputed on demand in chunks of units instead of being stored.
    chunk_size : int or None
        Units per block, both for reductions and for on-demand recomputation
        in streaming mode. Defaults to about ``BLOCK_BYTES`` per block.

    Attributes
    ----------
    values : ndarray or None
        The materialized tensor, or None in streaming mode.
    log_scale : ndarray of shape (m,)
        Per-unit log offsets (zeros in linear mode).
    """

    def __init__(self, stats, effect_grid, variance_grid, log_space=None,
                 memory_budget=DEFAULT_MEMORY_BUDGET, chunk_size=None):
        self.stats = stats
        self.effect_grid = effect_grid
        self.variance_grid = variance_grid
        if log_space is None:
            log_space = bool(np.any(stats.nu > LOG_SPACE_NU))
        self.log_space = bool(log_space)
        m, n_k, n_l = self.shape
        per_unit = 8 * n_k * n_l
        if chunk_size is None:
            chunk_size = max(1, BLOCK_BYTES // per_unit)
        self.chunk_size = int(chunk_size)
        self.streaming = m * per_unit > memory_budget
        self._bounds = chunk_bounds(m, self.chunk_size)
        if self.streaming:
            self.values = None
            self.log_scale = np.concatenate([self._compute(lo, hi)[1] for lo, hi in self._bounds])
        else:
            parts = map_ordered(lambda bounds: self._compute(*bounds), self._bounds)
            self.values = np.concatenate([p[0] for p in parts], axis=0)
            self.log_scale = np.concatenate([p[1] for p in parts])

    @classmethod
    def from_array(cls, values, effect_grid, variance_grid, stats=None, log_scale=None):
        """Wrap a precomputed ``(m, 2K+1, L)`` array."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[1:] != (len(effect_grid), len(variance_grid)):
            raise InvalidInputError(f"tensor shape {values.shape} does not match the grids")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidInputError("component densities must be finite and nonnegative")
        obj = cls.__new__(cls)
        obj.stats = stats
        obj.effect_grid = effect_grid
        obj.variance_grid = variance_grid
        obj.log_space = log_scale is not None
        obj.values = values
        obj.log_scale = np.zeros(values.shape[0]) if log_scale is None else np.asarray(log_scale, float)
        obj.streaming = False
        obj._m = values.shape[0]
        obj.chunk_size = max(1, BLOCK_BYTES // (8 * values.shape[1] * values.shape[2]))
        obj._bounds = chunk_bounds(obj._m, obj.chunk_size)
        return obj

    def _compute(self, lo, hi):
        s = self.stats
        a, b = self.effect_grid.points, self.variance_grid.points
        args = (s.x[lo:hi], s.s2[lo:hi], s.nu[lo:hi], a, b)
        if self.log_space:
            logc = _log_components(*args)
            scale = logc.max(axis=(1, 2))
            return np.exp(logc - scale[:, None, None]), scale
        return _linear_components(*args), np.zeros(hi - lo)

    @property
    def shape(self):
        m = self._m if self.stats is None else len(self.stats)
        return (m, len(self.effect_grid), len(self.variance_grid))

    def __len__(self):
        return self.shape[0]

    def blocks(self):
        """Yield ``(lo, hi, block)`` over consecutive unit ranges in fixed order.

        Blocks are about ``BLOCK_BYTES`` so that the several contractions a
        caller makes on one block hit cache; reductions summed block by block
        in this order are reproducible.
        """
        for lo, hi in self._bounds:
            if self.streaming:
                yield lo, hi, self._compute(lo, hi)[0]
            else:
                yield lo, hi, self.values[lo:hi]

    def dense(self):
        """Full tensor in true (unscaled) units; for tests and small problems."""
        vals = self.values if not self.streaming else np.concatenate(
            [blk for _, _, blk in self.blocks()], axis=0)
        if self.log_space:
            return vals * np.exp(self.log_scale)[:, None, None]
        return vals


def build_component_tensor(stats, effect_grid, variance_grid, **kwargs):
    """Entry ``(i, k, l)`` is ``normal_density(x_i, a_k, b_l) * scaled_chisq_density(s2_i, b_l, nu_i)``."""
    if len(stats) == 0:
        raise InvalidInputError("at least one unit is required")
    return ComponentTensor(stats, effect_grid, variance_grid, **kwargs)


def unit_likelihood(c_slice, g, h):
    """Mixture density ``sum_k sum_l g_k h_l c[k, l]`` for one unit."""
    c_slice = np.asarray(c_slice, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if c_slice.ndim != 2 or c_slice.shape != (g.size, h.size):
        raise InvalidInputError(
            f"slice shape {c_slice.shape} does not match g ({g.size}) and h ({h.size})"
        )
    return float(g @ c_slice @ h)
