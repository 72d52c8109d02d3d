import numpy as np
import pytest

from mixtwice import DegenerateRangeError, EffectGrid, InvalidInputError, UnitStats, VarianceGrid
from mixtwice.grids import build_effect_grid, build_variance_grid, variance_range


def stats_from(x, s2=None, nu=10.0):
    x = np.asarray(x, float)
    return UnitStats(x, np.ones_like(x) if s2 is None else s2, nu)


def test_effect_grid_halving():
    eg = build_effect_grid(stats_from([-1.0, 0.5, 1.0]), K=2)
    np.testing.assert_allclose(eg.points, [-1.0, -0.5, 0.0, 0.5, 1.0], atol=1e-15)
    assert eg.mode_index == 2 and eg.spacing == pytest.approx(0.5)


def test_effect_grid_single_unit():
    eg = build_effect_grid(stats_from([0.3]), K=1)
    np.testing.assert_allclose(eg.points, [-0.3, 0.0, 0.3])


def test_effect_grid_degenerate():
    with pytest.raises(DegenerateRangeError):
        build_effect_grid(stats_from([0.0, 0.0, 0.0]), K=15)


def test_effect_grid_nonzero_null_covers_data():
    x = np.array([1.0, 2.5, -0.7, 3.9])
    eg = build_effect_grid(stats_from(x), K=4, null_value=1.0)
    assert eg.null_value == 1.0
    assert eg.points[0] <= x.min() and eg.points[-1] >= x.max()
    np.testing.assert_allclose(eg.points[::-1], 2 * 1.0 - eg.points, atol=1e-14)


def test_effect_grid_invariants_checked():
    with pytest.raises(InvalidInputError):
        EffectGrid(np.array([-1.0, 0.0, 1.0, 2.0]), 2, 1.0)
    with pytest.raises(InvalidInputError):
        EffectGrid(np.array([-1.0, 0.0, 2.0]), 1, 1.0)
    with pytest.raises(InvalidInputError):
        EffectGrid.regular(0.0, 1.0, 0)


def test_variance_grid_large_nu_limit():
    vg = build_variance_grid(UnitStats([0.1, 0.2], [1.0, 1.0], 1e7), L=1)
    assert vg.points.shape == (1,)
    assert vg.points[0] == pytest.approx(1.0, abs=5e-3)


def test_variance_grid_matches_table_quantiles():
    # chi-square(10) 0.5% and 99.5% points from a printed table
    q_lo, q_hi = 2.156 / 10, 25.188 / 10
    vg = build_variance_grid(UnitStats([0.1], [1.0], 10.0), L=3)
    np.testing.assert_allclose(vg.points[[0, -1]], [1 / q_hi, 1 / q_lo], rtol=2e-4)
    gaps = np.diff(vg.points)
    assert gaps[0] == pytest.approx(gaps[1], rel=1e-12)


def test_variance_grid_rejects_zero():
    with pytest.raises(InvalidInputError):
        variance_range(np.array([1.0, 0.0]), 10.0)


def test_unitstats_rejects_zero_variance():
    with pytest.raises(InvalidInputError):
        UnitStats([0.1, 0.2], [1.0, 0.0], 10.0)


def test_variance_grid_log_spacing():
    st = UnitStats([0.1, 0.2, 0.3], [0.5, 1.0, 4.0], 8.0)
    vg = build_variance_grid(st, L=5, log_spaced=True)
    ratios = vg.points[1:] / vg.points[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
    lo, hi = variance_range(st.s2, st.nu)
    np.testing.assert_allclose(vg.points[[0, -1]], [lo, hi], rtol=1e-12)


def test_variance_grid_validation():
    with pytest.raises(InvalidInputError):
        VarianceGrid(np.array([1.0, 0.5]))
    with pytest.raises(InvalidInputError):
        VarianceGrid(np.array([-1.0]))
    with pytest.raises(InvalidInputError):
        build_variance_grid(UnitStats([0.1], [1.0], 10.0), L=0)


def test_grid_equality():
    a = EffectGrid.regular(0.0, 2.0, 3)
    assert a == EffectGrid.regular(0.0, 2.0, 3)
    assert a != EffectGrid.regular(0.0, 2.0, 4)
