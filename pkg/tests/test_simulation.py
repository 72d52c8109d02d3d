import numpy as np
import pytest
from scipy import stats as sps

from mixtwice import InvalidInputError, VarianceGrid
from mixtwice.densities import build_component_tensor
from mixtwice.estimator import fit_tensor
from mixtwice.grids import EffectGrid, build_effect_grid
from mixtwice.inference import DiscoveryList, posterior
from mixtwice.simulation import (
    SHAPES,
    CalibrationConfig,
    Pi0Law,
    ReplicateTruth,
    ScenarioSpec,
    VarianceLaw,
    aggregate_rows,
    ash_normal_oracle,
    discretize_truth,
    empirical_fdr,
    generate_replicate,
    pi0_stratum,
    run_calibration,
    summarize,
    wasserstein1,
)


def spec(**kw):
    base = dict(shape="near-normal", pi0_law=Pi0Law("fixed", (0.8,)), m=200, replicates=2)
    base.update(kw)
    return ScenarioSpec(**base)


def test_all_null_law():
    data, groups, truth = generate_replicate(spec(pi0_law=Pi0Law("fixed", (1.0,))), 0)
    assert truth.null_mask.all() and np.all(truth.theta == 0)
    assert data.shape == (200, 20) and groups.sum() == 10


def test_point_mass_variance():
    _, _, truth = generate_replicate(spec(variance_law=VarianceLaw("point-mass", (1.0,))), 0)
    np.testing.assert_array_equal(truth.obs_variance, 1.0)
    np.testing.assert_allclose(truth.sigma2, 2.0 / 10)


def test_replicate_determinism_and_independence():
    s = spec()
    a = generate_replicate(s, 3)[0]
    np.testing.assert_array_equal(a, generate_replicate(s, 3)[0])
    assert not np.array_equal(a, generate_replicate(s, 4)[0])


def test_bimodal_shape_is_centred():
    draws = SHAPES["bimodal"].sample(np.random.default_rng(0), 100_000)
    assert abs(draws.mean()) < 3 * draws.std() / np.sqrt(draws.size)


@pytest.mark.parametrize("name", sorted(SHAPES))
def test_shape_cdf_matches_sampler(name):
    draws = SHAPES[name].sample(np.random.default_rng(1), 20_000)
    ks = sps.kstest(draws, SHAPES[name].cdf)
    assert ks.pvalue > 1e-3


def test_generated_sampling_variance():
    s = spec(pi0_law=Pi0Law("fixed", (1.0,)), m=4000,
             variance_law=VarianceLaw("two-point", (0.5, 2.0, 0.5)))
    data, groups, truth = generate_replicate(s, 0)
    st = summarize(data, groups)
    for v in (0.5, 2.0):
        sel = truth.obs_variance == v
        assert st.x[sel].var() == pytest.approx(v * 2 / 10, rel=0.1)


def test_inverse_gamma_law_mean():
    draws = VarianceLaw("inverse-gamma", (3.0, 2.0)).draw(np.random.default_rng(2), 200_000)
    assert draws.mean() == pytest.approx(2.0 / (3.0 - 1.0), rel=0.02)


def test_summarize_pooled_example():
    st = summarize(np.array([[0.0, 2.0, 0.0, 0.0]]), np.array([True, True, False, False]))
    assert st.x[0] == 1.0 and st.s2[0] == 1.0 and st.nu[0] == 2.0


def test_summarize_identical_and_swapped():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(5, 8))
    groups = np.array([True] * 4 + [False] * 4)
    same = summarize(np.hstack([data[:, :4], data[:, :4]]), groups)
    np.testing.assert_array_equal(same.x, 0.0)
    a, b = summarize(data, groups), summarize(data, ~groups)
    np.testing.assert_allclose(b.x, -a.x, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(a.s2, b.s2)
    np.testing.assert_array_equal(a.nu, b.nu)


def test_summarize_letter_labels_and_errors():
    data = np.array([[0.0, 2.0, 0.0, 0.0]])
    assert summarize(data, np.array(["A", "A", "B", "B"])).x[0] == 1.0
    with pytest.raises(InvalidInputError):
        summarize(data, np.array([True, False, False, False]))
    with pytest.raises(InvalidInputError):
        summarize(data, np.array([True, False]))


def test_oracle_equals_single_point_grid():
    data, groups, truth = generate_replicate(spec(), 0)
    st = summarize(data, groups)
    eg = build_effect_grid(st, 10)
    table, rep = ash_normal_oracle(st, truth.sigma2, eg)
    tensor = build_component_tensor(st, eg, VarianceGrid(np.array([truth.sigma2[0]])))
    ours = fit_tensor(tensor)
    assert np.max(np.abs(posterior(tensor, ours.mixing).mass - table.mass)) < 1e-10
    np.testing.assert_allclose(ours.mixing.g, rep.mixing.g, atol=1e-10)


def test_empirical_fdr_counts():
    theta = np.array([0.0, 1.0, 0.0, -2.0, 0.5])
    truth = ReplicateTruth(theta, np.ones(5), theta == 0, 0.4)
    lists = {"empty": [], "alt": [1, 3, 4], "null": [0, 2], "mixed": DiscoveryList(0.1, "threshold", "lfdr", np.array([0, 1, 3]))}
    assert empirical_fdr(truth, lists) == {"empty": 0.0, "alt": 0.0, "null": 1.0, "mixed": pytest.approx(1 / 3)}


def test_truth_mask_must_match():
    with pytest.raises(InvalidInputError):
        ReplicateTruth(np.array([0.0, 1.0]), np.ones(2), np.array([False, False]), 0.5)


def test_wasserstein_basic():
    eg = EffectGrid.regular(0.0, 2.0, 4)
    p = np.zeros(9)
    q = np.zeros(9)
    p[3], q[4] = 1.0, 1.0
    assert wasserstein1(p, p, eg) == 0.0
    assert wasserstein1(p, q, eg) == pytest.approx(eg.spacing)
    with pytest.raises(InvalidInputError):
        wasserstein1(p[:5], q[:5], eg)


def test_wasserstein_matches_transport_solver():
    rng = np.random.default_rng(4)
    eg = EffectGrid.regular(0.0, 3.0, 5)
    for _ in range(10):
        p, q = rng.dirichlet(np.ones(11), 2)
        ref = sps.wasserstein_distance(eg.points, eg.points, p, q)
        assert wasserstein1(p, q, eg) == pytest.approx(ref, rel=1e-12)


def test_discretize_truth():
    eg = EffectGrid.regular(0.0, 8.0, 15)
    mass = discretize_truth(SHAPES["near-normal"], 0.7, eg)
    assert mass.sum() == pytest.approx(1.0) and mass[15] > 0.7
    np.testing.assert_allclose(mass, mass[::-1], atol=1e-15)


def test_pi0_strata():
    assert pi0_stratum(0.5) == "0.5-0.625"
    assert pi0_stratum(0.625) == "0.625-0.75"
    assert pi0_stratum(0.9) == "0.875-1"
    assert pi0_stratum(1.0) == "0.875-1"
    assert pi0_stratum(0.3) == "other"


def test_law_parsing():
    assert Pi0Law.parse("fixed:0.9") == Pi0Law("fixed", (0.9,))
    assert VarianceLaw.parse("two-point:0.5,2,0.5").params == (0.5, 2.0, 0.5)
    for bad in ("fixed", "uniform:0.5", "beta:1,2", "fixed:1.5"):
        with pytest.raises(InvalidInputError):
            Pi0Law.parse(bad)
    with pytest.raises(InvalidInputError):
        ScenarioSpec(shape="square")
    with pytest.raises(InvalidInputError):
        ScenarioSpec(n_per_group=1)


def test_calibration_report_structure_and_workers():
    s = spec(pi0_law=Pi0Law("uniform", (0.5, 1.0)), replicates=3, m=150)
    cfg = CalibrationConfig(levels=(0.1, 0.2), K=6, L=5)
    serial = run_calibration(s, cfg, workers=1)
    parallel = run_calibration(s, cfg, workers=2)
    np.testing.assert_equal(serial.rows, parallel.rows)
    assert len(serial.rows) == 6 and len(serial.per_replicate()) == 3
    for row in serial.rows:
        assert 0.0 <= row["fdp_threshold"] <= 1.0
        assert 0.0 <= row["fdp_cumulative_mean"] <= 1.0
    overall = [r for r in serial.aggregate if r["stratum"] == "all"]
    assert [r["level"] for r in overall] == [0.1, 0.2]
    assert overall[0]["replicates"] == 3


def test_aggregate_mean_and_se():
    rows = [{"pi0_true": 0.9, "pi0_hat": 0.8, "level": 0.1, "fdp_threshold": f,
             "fdp_cumulative_mean": f, "w1_g": 0.0} for f in (0.0, 0.2)]
    agg = [r for r in aggregate_rows(rows, (0.1,)) if r["stratum"] == "0.875-1"][0]
    assert agg["mean_fdp_threshold"] == pytest.approx(0.1)
    assert agg["se_fdp_threshold"] == pytest.approx(0.1)
    assert agg["mae_pi0"] == pytest.approx(0.1)
