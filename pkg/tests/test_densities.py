import math

import numpy as np
import pytest
from scipy import integrate

from mixtwice import InvalidInputError, UnitStats, VarianceGrid
from mixtwice.densities import (
    ComponentTensor,
    build_component_tensor,
    log_scaled_chisq_density,
    normal_density,
    scaled_chisq_density,
    unit_likelihood,
)
from mixtwice.grids import EffectGrid, build_effect_grid, build_variance_grid


@pytest.mark.parametrize("args, expected", [
    ((0.0, 0.0, 1.0), 0.3989423),
    ((1.0, 1.0, 4.0), 0.1994711),
    ((2.0, 0.0, 1.0), 0.0539910),
])
def test_normal_density_values(args, expected):
    assert normal_density(*args) == pytest.approx(expected, abs=5e-8)


def test_normal_density_rejects_bad_variance():
    with pytest.raises(InvalidInputError):
        normal_density(0.0, 0.0, 0.0)


def test_scaled_chisq_two_df():
    # chi2_2 density is exp(-t/2)/2, so (2/1) * exp(-1)/2
    assert scaled_chisq_density(1.0, 1.0, 2.0) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_scaled_chisq_change_of_variables():
    # t = 4 * 0.5 / 2 = 1; chi2_4(t) = t exp(-t/2) / 4
    expected = (4 / 2) * 1.0 * math.exp(-0.5) / 4
    assert scaled_chisq_density(0.5, 2.0, 4.0) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("b, nu", [(1.0, 1.0), (0.3, 4.5), (2.0, 18.0), (1.0, 60.0)])
def test_scaled_chisq_integrates_to_one(b, nu):
    total, _ = integrate.quad(lambda s2: scaled_chisq_density(s2, b, nu), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_scaled_chisq_rejects_nonpositive():
    for args in [(0.0, 1.0, 2.0), (1.0, -1.0, 2.0), (1.0, 1.0, 0.0)]:
        with pytest.raises(InvalidInputError):
            scaled_chisq_density(*args)


def test_log_density_survives_large_nu():
    val = log_scaled_chisq_density(1.0, 1.0, 5000.0)
    assert np.isfinite(val)
    # near the mode the scaled density is roughly normal with sd sqrt(2/nu)
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi * 2 / 5000.0), abs=1e-3)


def test_tensor_single_entry():
    st = UnitStats([0.0], [1.0], 2.0)
    eg = EffectGrid(np.array([0.0]), 0, 1.0)
    tensor = build_component_tensor(st, eg, VarianceGrid(np.array([1.0])))
    assert tensor.dense()[0, 0, 0] == pytest.approx(0.3989423 * 0.3678794, rel=1e-6)
    assert tensor.dense()[0, 0, 0] == pytest.approx(0.1467626, abs=1e-7)


def _tensor(seed=0, m=40, **kw):
    rng = np.random.default_rng(seed)
    st = UnitStats(rng.normal(0, 2, m), rng.uniform(0.2, 2.0, m), 12.0)
    eg = build_effect_grid(st, 3)
    vg = build_variance_grid(st, 4)
    return st, eg, vg, build_component_tensor(st, eg, vg, **kw)


def test_tensor_entries_by_definition():
    st, eg, vg, tensor = _tensor()
    c = tensor.dense()
    for i in (0, 7, 39):
        for k in range(len(eg)):
            for l in range(len(vg)):
                b = vg.points[l]
                expected = (math.exp(-0.5 * (st.x[i] - eg.points[k]) ** 2 / b) / math.sqrt(2 * math.pi * b)
                            * scaled_chisq_density(st.s2[i], b, st.nu[i]))
                assert c[i, k, l] == pytest.approx(expected, rel=1e-12)


def test_tensor_permutation_equivariance():
    st, eg, vg, tensor = _tensor()
    perm = np.random.default_rng(1).permutation(len(st))
    permuted = build_component_tensor(st.subset(perm), eg, vg)
    np.testing.assert_array_equal(permuted.dense(), tensor.dense()[perm])


def test_tensor_scale_cancellation():
    st, eg, vg, tensor = _tensor()
    st2 = UnitStats(st.x, 2 * st.s2, st.nu)
    vg2 = VarianceGrid(2 * vg.points)
    ratio = build_component_tensor(st2, eg, vg2).dense() / tensor.dense()
    normal_ratio = (normal_density(st.x[:, None, None], eg.points[None, :, None], vg2.points[None, None, :])
                    / normal_density(st.x[:, None, None], eg.points[None, :, None], vg.points[None, None, :]))
    # the chi-square factor halves with the nu/b prefactor
    np.testing.assert_allclose(ratio, 0.5 * normal_ratio, rtol=1e-12)


def test_tensor_log_space_matches_linear():
    _, _, _, lin = _tensor(log_space=False)
    _, _, _, logt = _tensor(log_space=True)
    np.testing.assert_allclose(logt.dense(), lin.dense(), rtol=1e-12)
    assert np.all(logt.values.max(axis=(1, 2)) == 1.0)


def test_streaming_tensor_matches_materialized():
    _, _, _, full = _tensor()
    _, _, _, stream = _tensor(memory_budget=1000, chunk_size=7)
    assert stream.streaming and stream.values is None
    np.testing.assert_array_equal(stream.dense(), full.dense())
    assert [hi - lo for lo, hi, _ in stream.blocks()][:5] == [7] * 5


def test_tensor_nonnegative_finite():
    _, _, _, tensor = _tensor(m=100)
    c = tensor.dense()
    assert np.all(c >= 0) and np.all(np.isfinite(c))


def test_from_array_validates():
    eg = EffectGrid.regular(0.0, 1.0, 1)
    vg = VarianceGrid(np.array([1.0]))
    with pytest.raises(InvalidInputError):
        ComponentTensor.from_array(np.ones((2, 2, 1)), eg, vg)
    with pytest.raises(InvalidInputError):
        ComponentTensor.from_array(-np.ones((2, 3, 1)), eg, vg)


def test_unit_likelihood_point_masses():
    c = np.arange(1.0, 7.0).reshape(3, 2)
    assert unit_likelihood(c, [0, 1, 0], [0, 1]) == c[1, 1]
    assert unit_likelihood(c, np.full(3, 1 / 3), [0.5, 0.5]) == pytest.approx(c.mean(), rel=1e-15)


def test_unit_likelihood_double_loop():
    rng = np.random.default_rng(5)
    c = rng.random((3, 2))
    g = rng.dirichlet(np.ones(3))
    h = rng.dirichlet(np.ones(2))
    brute = sum(g[k] * h[l] * c[k, l] for k in range(3) for l in range(2))
    assert unit_likelihood(c, g, h) == pytest.approx(brute, rel=1e-14)


def test_unit_likelihood_bilinear():
    rng = np.random.default_rng(6)
    c = rng.random((5, 3))
    g1, g2 = rng.dirichlet(np.ones(5), 2)
    h = rng.dirichlet(np.ones(3))
    alpha = 0.3
    lhs = unit_likelihood(c, alpha * g1 + (1 - alpha) * g2, h)
    rhs = alpha * unit_likelihood(c, g1, h) + (1 - alpha) * unit_likelihood(c, g2, h)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_unit_likelihood_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        unit_likelihood(np.ones((3, 2)), np.ones(2) / 2, np.ones(2) / 2)


def test_unitstats_broadcast_and_validation():
    st = UnitStats.from_standard_errors([0.5, 1.0], [0.1, 0.2], 22)
    np.testing.assert_allclose(st.s2, [0.01, 0.04])
    np.testing.assert_array_equal(st.nu, [22.0, 22.0])
    with pytest.raises(InvalidInputError):
        UnitStats([0.1, 0.2], [1.0], 3.0)
    with pytest.raises(InvalidInputError):
        UnitStats([np.nan], [1.0], 3.0)
    with pytest.raises(InvalidInputError):
        UnitStats([0.1], [1.0], None)
