"""Finite supports for the effect and variance mixing distributions."""

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ._validation import DegenerateRangeError, InvalidInputError, as_1d_float

#: Tail probability on each side used to inflate the observed s^2 range.
VARIANCE_TAIL = 0.005


@dataclass(frozen=True, eq=False)
class EffectGrid:
    """Regular grid ``a_{-K}, ..., a_0, ..., a_K`` symmetric about the null value.

    Parameters
    ----------
    points : ndarray of shape (2K+1,)
        Strictly increasing, equally spaced support points.
    mode_index : int
        Position of the null value ``a_0`` inside ``points`` (always ``K``).
    spacing : float
        Common gap between neighbouring points.
    """

    points: np.ndarray
    mode_index: int
    spacing: float

    def __post_init__(self):
        pts = as_1d_float(self.points, "effect grid points")
        if pts.size % 2 != 1:
            raise InvalidInputError("effect grid must have an odd number of points")
        K = pts.size // 2
        if self.mode_index != K:
            raise InvalidInputError(f"mode_index must be {K}, got {self.mode_index}")
        if not self.spacing > 0:
            raise InvalidInputError("effect grid spacing must be positive")
        if pts.size > 1:
            gaps = np.diff(pts)
            if np.any(gaps <= 0):
                raise InvalidInputError("effect grid points must be strictly increasing")
            if not np.allclose(gaps, self.spacing, rtol=1e-9, atol=0):
                raise InvalidInputError("effect grid must be regular")
            centre = pts[K]
            scale = max(abs(centre), pts[-1] - pts[0])
            if not np.allclose(pts[::-1], 2 * centre - pts, rtol=0, atol=1e-12 * scale):
                raise InvalidInputError("effect grid must be symmetric about its mode")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def regular(cls, null_value, half_width, K):
        """Grid with ``K`` points on each side of ``null_value`` out to ``half_width``."""
        K = int(K)
        if K < 1:
            raise InvalidInputError(f"K must be at least 1, got {K}")
        if not half_width > 0:
            raise DegenerateRangeError("effect grid would have zero width")
        offsets = half_width * np.arange(1, K + 1) / K
        pts = np.concatenate([null_value - offsets[::-1], [null_value], null_value + offsets])
        return cls(pts, K, half_width / K)

    @property
    def K(self):
        return self.mode_index

    @property
    def null_value(self):
        return float(self.points[self.mode_index])

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, EffectGrid) and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class VarianceGrid:
    """Strictly increasing positive support ``b_1 < ... < b_L`` for the variances."""

    points: np.ndarray

    def __post_init__(self):
        pts = as_1d_float(self.points, "variance grid points")
        if np.any(pts <= 0):
            raise InvalidInputError("variance grid points must be strictly positive")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("variance grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def L(self):
        return self.points.size

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, VarianceGrid) and np.array_equal(self.points, other.points)

    __hash__ = None


def build_effect_grid(stats, K=15, null_value=0.0):
    """Regular symmetric effect grid spanning every observed estimate.

    The outermost point sits at ``null_value + max_i |x_i - null_value|`` and
    the remaining points divide that half-width into ``K`` equal steps.

    Raises
    ------
    DegenerateRangeError
        If every estimate equals ``null_value``.
    """
    x = as_1d_float(stats.x, "x")
    null_value = float(null_value)
    half_width = float(np.max(np.abs(x - null_value)))
    if half_width == 0:
        raise DegenerateRangeError(
            "all effect estimates equal the null value; effect grid would have zero width"
        )
    return EffectGrid.regular(null_value, half_width, K)


def variance_range(s2, nu, tail=VARIANCE_TAIL):
    """Interval of variances that plausibly produced the observed ``s2``.

    Uses the ``tail`` and ``1 - tail`` quantiles of chi-square(nu)/nu.
    """
    s2 = as_1d_float(s2, "s2")
    if np.any(s2 <= 0):
        raise InvalidInputError("squared standard errors must be strictly positive")
    nu = np.broadcast_to(as_1d_float(nu, "nu"), s2.shape)
    q_lo = sps.chi2.ppf(tail, nu) / nu
    q_hi = sps.chi2.isf(tail, nu) / nu
    return float(np.min(s2 / q_hi)), float(np.max(s2 / q_lo))


def build_variance_grid(stats, L=15, log_spaced=False, tail=VARIANCE_TAIL):
    """Variance grid over the chi-square-inflated range of observed ``s2``.

    With ``L == 1`` the grid is the single midpoint of that range. ``log_spaced``
    switches from linear to geometric spacing.
    """
    L = int(L)
    if L < 1:
        raise InvalidInputError(f"L must be at least 1, got {L}")
    lo, hi = variance_range(stats.s2, stats.nu, tail)
    if L == 1:
        mid = np.sqrt(lo * hi) if log_spaced else 0.5 * (lo + hi)
        return VarianceGrid(np.array([mid]))
    if log_spaced:
        pts = np.geomspace(lo, hi, L)
    else:
        pts = np.linspace(lo, hi, L)
    return VarianceGrid(pts)
