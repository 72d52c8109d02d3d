"""Synthetic two-group experiments and calibration metrics.

Effects follow ``pi0 * delta_0 + (1 - pi0) * g_alt`` with ``g_alt`` one of the
standard benchmark shapes; each unit gets ``n_per_group`` Gaussian
observations per group. The variance law gives the per-observation variance,
so the true sampling variance of the mean difference is
``obs_var * (1/n_A + 1/n_B)``.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from ._parallel import n_threads
from ._validation import InvalidInputError
from .densities import ComponentTensor, UnitStats, build_component_tensor, normal_density
from .estimator import FitOptions, fit_tensor
from .grids import VarianceGrid, build_effect_grid, build_variance_grid
from .inference import discovery_list, pi0_estimate, posterior

#: Upper edges of the pi0 strata; the last stratum is closed on the right.
PI0_STRATA = (0.5, 0.625, 0.75, 0.875, 1.0)
DEFAULT_LEVELS = (0.05, 0.1, 0.2)


@dataclass(frozen=True)
class NormalMixture:
    weights: tuple
    means: tuple
    sds: tuple

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        return rng.normal(np.asarray(self.means)[comp], np.asarray(self.sds)[comp])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(np.asarray(self.weights) * sps.norm.cdf(x, self.means, self.sds), axis=-1)


SHAPES = {
    "spiky": NormalMixture((0.4, 0.2, 0.2, 0.2), (0, 0, 0, 0), (0.25, 0.5, 1.0, 2.0)),
    "near-normal": NormalMixture((2 / 3, 1 / 3), (0, 0), (1.0, 2.0)),
    "flattop": NormalMixture((1 / 7,) * 7, (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5), (0.5,) * 7),
    "big-variance": NormalMixture((1.0,), (0.0,), (4.0,)),
    "bimodal": NormalMixture((0.5, 0.5), (-2.0, 2.0), (1.0, 1.0)),
}
SHAPE_ALIASES = {"normal": "near-normal", "bi-modal": "bimodal", "bigvariance": "big-variance"}


def _shape_name(name):
    name = SHAPE_ALIASES.get(name, name)
    if name not in SHAPES:
        raise InvalidInputError(f"unknown g_alt shape {name!r}; choose from {sorted(SHAPES)}")
    return name


def _parse_law(text, kinds):
    kind, _, rest = str(text).partition(":")
    if kind not in kinds:
        raise InvalidInputError(f"unknown law {kind!r}; choose from {sorted(kinds)}")
    params = tuple(float(v) for v in rest.split(",")) if rest else ()
    if len(params) != kinds[kind]:
        raise InvalidInputError(f"law {kind!r} takes {kinds[kind]} parameter(s), got {len(params)}")
    return kind, params


@dataclass(frozen=True)
class Pi0Law:
    kind: str = "uniform"
    params: tuple = (0.5, 1.0)

    KINDS = {"fixed": 1, "uniform": 2}

    def __post_init__(self):
        if self.kind not in self.KINDS or len(self.params) != self.KINDS[self.kind]:
            raise InvalidInputError(f"bad pi0 law {self.kind}{self.params}")
        if any(not 0.0 <= p <= 1.0 for p in self.params):
            raise InvalidInputError("pi0 law parameters must lie in [0, 1]")

    @classmethod
    def parse(cls, text):
        """``fixed:0.9`` or ``uniform:0.5,1``."""
        return cls(*_parse_law(text, cls.KINDS))

    def draw(self, rng):
        if self.kind == "fixed":
            return self.params[0]
        return float(rng.uniform(*self.params))


@dataclass(frozen=True)
class VarianceLaw:
    """Law of the per-observation variance of each unit."""

    kind: str = "point-mass"
    params: tuple = (1.0,)

    KINDS = {"point-mass": 1, "two-point": 3, "inverse-gamma": 2}

    def __post_init__(self):
        if self.kind not in self.KINDS or len(self.params) != self.KINDS[self.kind]:
            raise InvalidInputError(f"bad variance law {self.kind}{self.params}")
        if self.kind == "two-point":
            v1, v2, w = self.params
            if not (v1 > 0 and v2 > 0 and 0.0 <= w <= 1.0):
                raise InvalidInputError("two-point law needs positive variances and w in [0, 1]")
        elif any(p <= 0 for p in self.params):
            raise InvalidInputError("variance law parameters must be positive")

    @classmethod
    def parse(cls, text):
        """``point-mass:1``, ``two-point:0.5,2,0.5`` or ``inverse-gamma:3,2``."""
        return cls(*_parse_law(text, cls.KINDS))

    def draw(self, rng, size):
        if self.kind == "point-mass":
            return np.full(size, self.params[0])
        if self.kind == "two-point":
            v1, v2, w = self.params
            return np.where(rng.random(size) < w, v1, v2)
        alpha, beta = self.params
        return beta / rng.gamma(alpha, 1.0, size)


@dataclass(frozen=True)
class ScenarioSpec:
    shape: str = "near-normal"
    pi0_law: Pi0Law = field(default_factory=Pi0Law)
    variance_law: VarianceLaw = field(default_factory=VarianceLaw)
    n_per_group: int = 10
    m: int = 1000
    replicates: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", _shape_name(self.shape))
        for name in ("n_per_group", "m", "replicates"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.n_per_group < 2:
            raise InvalidInputError("n_per_group must be at least 2 to estimate a variance")

    @property
    def g_alt(self):
        return SHAPES[self.shape]


@dataclass(frozen=True, eq=False)
class ReplicateTruth:
    """Generative state of one replicate.

    ``sigma2`` is the true sampling variance of each mean difference;
    ``obs_variance`` the per-observation variance it derives from.
    """

    theta: np.ndarray
    sigma2: np.ndarray
    null_mask: np.ndarray
    pi0: float
    obs_variance: np.ndarray = None

    def __post_init__(self):
        if not np.array_equal(self.null_mask, self.theta == 0):
            raise InvalidInputError("null_mask must flag exactly the zero effects")


def replicate_rng(seed, replicate_index):
    return np.random.default_rng([int(seed), int(replicate_index)])


def generate_replicate(spec, replicate_index):
    """Draw one replicate.

    Returns
    -------
    data : ndarray of shape (m, 2 * n_per_group)
        Group A columns first, then group B.
    groups : ndarray of shape (2 * n_per_group,)
        Boolean, True for group A.
    truth : ReplicateTruth
    """
    rng = replicate_rng(spec.seed, replicate_index)
    m, n = spec.m, spec.n_per_group
    pi0 = spec.pi0_law.draw(rng)
    null = rng.random(m) < pi0
    theta = np.zeros(m)
    theta[~null] = spec.g_alt.sample(rng, int((~null).sum()))
    # a continuous draw of exactly zero would break the null mask
    theta[~null & (theta == 0)] = np.finfo(float).tiny
    obs_var = spec.variance_law.draw(rng, m)
    sd = np.sqrt(obs_var)[:, None]
    a = theta[:, None] + sd * rng.standard_normal((m, n))
    b = sd * rng.standard_normal((m, n))
    data = np.hstack([a, b])
    groups = np.r_[np.ones(n, bool), np.zeros(n, bool)]
    truth = ReplicateTruth(theta, obs_var * (2.0 / n), null, float(pi0), obs_var)
    return data, groups, truth


def summarize(data, groups):
    """Mean difference, pooled squared standard error and df for each row.

    ``groups`` marks group A columns (True or ``"A"``); the rest form group B.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    groups = np.asarray(groups)
    if groups.dtype != bool:
        groups = groups.astype(str) == "A"
    if groups.shape != (data.shape[1],):
        raise InvalidInputError(
            f"{groups.size} group labels for a matrix with {data.shape[1]} columns"
        )
    A, B = data[:, groups], data[:, ~groups]
    n_a, n_b = A.shape[1], B.shape[1]
    if n_a < 2 or n_b < 2:
        raise InvalidInputError(f"each group needs at least 2 observations (got {n_a}, {n_b})")
    x = A.mean(axis=1) - B.mean(axis=1)
    pooled = ((n_a - 1) * A.var(axis=1, ddof=1) + (n_b - 1) * B.var(axis=1, ddof=1)) / (n_a + n_b - 2)
    s2 = pooled * (1.0 / n_a + 1.0 / n_b)
    return UnitStats(x, s2, float(n_a + n_b - 2))


def known_variance_tensor(stats, sigma2, effect_grid):
    """Tensor with one variance column holding ``normal_density(x_i, a_k, sigma2_i)``."""
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), stats.x.shape)
    vals = normal_density(stats.x[:, None], effect_grid.points[None, :], sigma2[:, None])
    nominal = VarianceGrid(np.array([float(np.mean(sigma2))]))
    return ComponentTensor.from_array(vals[:, :, None], effect_grid, nominal, stats=None)


def ash_normal_oracle(stats, sigma2, effect_grid, options=None):
    """Known-variance baseline: fit ``g`` alone with the true variances plugged in.

    Returns the posterior table (rows proportional to
    ``g_k phi((x_i - a_k) / sigma_i) / sigma_i``) and the fit report.
    """
    tensor = known_variance_tensor(stats, sigma2, effect_grid)
    report = fit_tensor(tensor, options, fix_h=np.ones(1))
    return posterior(tensor, report.mixing), report


def empirical_fdr(truth, lists):
    """False discovery proportion of each list; an empty list scores 0."""
    out = {}
    for key, lst in lists.items():
        idx = np.asarray(lst.indices if hasattr(lst, "indices") else lst, dtype=int)
        out[key] = float(truth.null_mask[idx].sum()) / max(1, idx.size)
    return out


def wasserstein1(p, q, grid):
    """1-Wasserstein distance between two probability vectors on the same grid.

    Computed as the integral of ``|CDF_p - CDF_q|`` between grid points, which
    for a regular grid equals ``spacing * sum_k |CDF_p(k) - CDF_q(k)|``.
    """
    points = np.asarray(getattr(grid, "points", grid), dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != points.shape or q.shape != points.shape:
        raise InvalidInputError(
            f"vectors of length {p.size} and {q.size} do not match a grid of {points.size} points"
        )
    gaps = np.diff(points)
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))[:-1] * gaps))


def discretize_truth(g_alt, pi0, effect_grid):
    """Project ``pi0 * delta_0 + (1 - pi0) * g_alt`` onto the grid cells."""
    pts = effect_grid.points
    edges = np.concatenate([[-np.inf], 0.5 * (pts[1:] + pts[:-1]), [np.inf]])
    mass = (1.0 - pi0) * np.diff(g_alt.cdf(edges))
    mass[effect_grid.mode_index] += pi0
    return mass / mass.sum()


def pi0_stratum(pi0):
    """Label of the stratum holding ``pi0``; ``"other"`` outside ``[0.5, 1]``."""
    edges = PI0_STRATA
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= pi0 < hi or (hi == edges[-1] and pi0 == hi):
            return f"{lo:g}-{hi:g}"
    return "other"


@dataclass(frozen=True)
class CalibrationConfig:
    levels: tuple = DEFAULT_LEVELS
    K: int = 15
    L: int = 15
    options: FitOptions = field(default_factory=FitOptions)
    oracle: bool = False


def run_replicate(spec, index, config):
    """Fit one replicate and return one flat row per nominal level."""
    data, groups, truth = generate_replicate(spec, index)
    stats = summarize(data, groups)
    eg = build_effect_grid(stats, config.K, 0.0)
    vg = build_variance_grid(stats, config.L)
    tensor = build_component_tensor(stats, eg, vg)
    report = fit_tensor(tensor, config.options)
    table = posterior(tensor, report.mixing)
    pi0_hat = pi0_estimate(report.mixing)
    w1 = wasserstein1(report.mixing.g, discretize_truth(spec.g_alt, truth.pi0, eg), eg)
    oracle_pi0 = float("nan")
    if config.oracle:
        _, orep = ash_normal_oracle(stats, truth.sigma2, eg, config.options)
        oracle_pi0 = pi0_estimate(orep.mixing)
    rows = []
    for level in config.levels:
        thr = discovery_list(table, level, "lfdr", "threshold")
        cum = discovery_list(table, level, "lfdr", "cumulative-mean")
        fdp = empirical_fdr(truth, {"threshold": thr, "cumulative-mean": cum})
        rows.append({
            "replicate": index,
            "pi0_true": truth.pi0,
            "pi0_hat": pi0_hat,
            "pi0_hat_oracle": oracle_pi0,
            "w1_g": w1,
            "converged": report.converged,
            "level": level,
            "fdp_threshold": fdp["threshold"],
            "n_threshold": len(thr),
            "fdp_cumulative_mean": fdp["cumulative-mean"],
            "n_cumulative_mean": len(cum),
        })
    return rows


def _run_replicate_star(args):
    return run_replicate(*args)


@dataclass(frozen=True)
class CalibrationReport:
    """Per-replicate rows (one per replicate and level) plus stratified aggregates."""

    rows: list
    aggregate: list

    REPLICATE_COLUMNS = ("replicate", "pi0_true", "pi0_hat", "pi0_hat_oracle", "w1_g",
                         "converged", "level", "fdp_threshold", "n_threshold",
                         "fdp_cumulative_mean", "n_cumulative_mean")
    AGGREGATE_COLUMNS = ("stratum", "level", "replicates", "mean_fdp_threshold",
                         "se_fdp_threshold", "mean_fdp_cumulative_mean",
                         "se_fdp_cumulative_mean", "mean_pi0_true", "mean_pi0_hat",
                         "mae_pi0", "mean_w1_g")

    def per_replicate(self):
        """One record per replicate with the level-independent fields."""
        seen = {}
        for row in self.rows:
            seen.setdefault(row["replicate"], row)
        return [seen[k] for k in sorted(seen)]

    def column(self, name, level=None):
        rows = self.per_replicate() if level is None else [r for r in self.rows if r["level"] == level]
        return np.array([r[name] for r in rows], dtype=float)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan")
    se = values.std(ddof=1) / math.sqrt(values.size) if values.size > 1 else float("nan")
    return float(values.mean()), float(se)


def aggregate_rows(rows, levels):
    out = []
    strata = [pi0_stratum(r["pi0_true"]) for r in rows]
    labels = [f"{lo:g}-{hi:g}" for lo, hi in zip(PI0_STRATA[:-1], PI0_STRATA[1:])]
    if "other" in strata:
        labels.append("other")
    for label in labels + ["all"]:
        for level in levels:
            sel = [r for r, s in zip(rows, strata)
                   if r["level"] == level and (label == "all" or s == label)]
            if not sel:
                continue
            thr = _mean_se([r["fdp_threshold"] for r in sel])
            cum = _mean_se([r["fdp_cumulative_mean"] for r in sel])
            pi0_true = np.array([r["pi0_true"] for r in sel])
            pi0_hat = np.array([r["pi0_hat"] for r in sel])
            out.append({
                "stratum": label,
                "level": level,
                "replicates": len(sel),
                "mean_fdp_threshold": thr[0],
                "se_fdp_threshold": thr[1],
                "mean_fdp_cumulative_mean": cum[0],
                "se_fdp_cumulative_mean": cum[1],
                "mean_pi0_true": float(pi0_true.mean()),
                "mean_pi0_hat": float(pi0_hat.mean()),
                "mae_pi0": float(np.abs(pi0_hat - pi0_true).mean()),
                "mean_w1_g": float(np.mean([r["w1_g"] for r in sel])),
            })
    return out


def run_calibration(spec, config=None, workers=None):
    """Run every replicate of ``spec`` and aggregate by pi0 stratum.

    Replicates use independent streams seeded by ``(spec.seed, index)``, so the
    result does not depend on ``workers``.
    """
    config = config or CalibrationConfig()
    workers = n_threads() if workers is None else int(workers)
    jobs = [(spec, i, config) for i in range(spec.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate_star, jobs))
    else:
        results = [_run_replicate_star(job) for job in jobs]
    rows = [row for rep in results for row in rep]
    return CalibrationReport(rows, aggregate_rows(rows, config.levels))
