"""Estimator-style front end bundling grid construction, fitting and inference."""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, InvalidInputError, check_level
from .densities import UnitStats, build_component_tensor
from .estimator import FitOptions, fit_tensor, subsample_indices
from .grids import build_effect_grid, build_variance_grid
from .inference import RULES, STATISTICS, discovery_list, pi0_estimate, posterior


def _split_columns(X, nu):
    X = check_array(X, ensure_2d=True, dtype=float)
    if X.shape[1] not in (2, 3):
        raise InvalidInputError(
            f"expected columns (x, s) or (x, s, nu), got {X.shape[1]} columns"
        )
    if X.shape[1] == 3:
        nu = X[:, 2]
    elif nu is None:
        raise ConfigurationError("degrees of freedom missing: pass a third column or set nu")
    return UnitStats.from_standard_errors(X[:, 0], X[:, 1], nu)


class MixTwice(BaseEstimator, TransformerMixin):
    """Empirical-Bayes effect and variance mixing with lfdr / lfsr output.

    ``X`` has one row per testing unit with columns ``x`` (effect estimate),
    ``s`` (standard error) and optionally ``nu`` (degrees of freedom).

    Parameters
    ----------
    grid_k : int, default=15
        Effect grid has ``2 * grid_k + 1`` points.
    grid_l : int, default=15
        Number of variance grid points.
    null_value : float, default=0.0
    nu : float or None
        Degrees of freedom used when ``X`` has only two columns.
    log_variance_grid : bool, default=False
    prop : float, default=1.0
        Fraction of units used to fit the mixing distributions; the posterior
        is still computed for every unit.
    level, statistic, rule
        Defaults for :meth:`predict`.
    seed, max_outer, tol, multi_start, polish
        Solver settings, see :class:`FitOptions`.

    Attributes
    ----------
    effect_grid_, variance_grid_ : EffectGrid, VarianceGrid
    mixing_ : MixingPair
    report_ : FitReport
    pi0_ : float
    posterior_ : PosteriorTable
        Posterior of the units passed to ``fit``.
    """

    def __init__(self, grid_k=15, grid_l=15, null_value=0.0, nu=None, log_variance_grid=False,
                 prop=1.0, level=0.1, statistic="lfsr", rule="threshold", seed=0,
                 max_outer=50, tol=1e-7, multi_start=1, polish=False):
        self.grid_k = grid_k
        self.grid_l = grid_l
        self.null_value = null_value
        self.nu = nu
        self.log_variance_grid = log_variance_grid
        self.prop = prop
        self.level = level
        self.statistic = statistic
        self.rule = rule
        self.seed = seed
        self.max_outer = max_outer
        self.tol = tol
        self.multi_start = multi_start
        self.polish = polish

    def _options(self):
        return FitOptions(max_outer=int(self.max_outer), tol=float(self.tol),
                          multi_start=int(self.multi_start), polish=bool(self.polish),
                          seed=int(self.seed))

    def fit(self, X, y=None):
        stats = _split_columns(X, self.nu)
        prop = float(self.prop)
        eg = build_effect_grid(stats, self.grid_k, self.null_value)
        vg = build_variance_grid(stats, self.grid_l, self.log_variance_grid)
        idx = subsample_indices(len(stats), prop, self.seed)
        if idx.size < len(eg) + len(vg):
            raise InvalidInputError(
                f"{idx.size} units cannot identify {len(eg) + len(vg)} mixing parameters"
            )
        tensor = build_component_tensor(stats, eg, vg)
        fit_on = tensor if idx.size == len(stats) else build_component_tensor(stats.subset(idx), eg, vg)
        report = fit_tensor(fit_on, self._options())
        if prop < 1.0:
            report = replace(report, subsample_fraction=prop)
        self.effect_grid_ = eg
        self.variance_grid_ = vg
        self.report_ = report
        self.mixing_ = report.mixing
        self.pi0_ = pi0_estimate(report.mixing)
        self.posterior_ = posterior(tensor, report.mixing)
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def posterior(self, X):
        """Posterior table of new units under the fitted mixing distributions."""
        check_is_fitted(self, "mixing_")
        stats = _split_columns(X, self.nu)
        tensor = build_component_tensor(stats, self.effect_grid_, self.variance_grid_)
        return posterior(tensor, self.mixing_)

    def transform(self, X):
        """Return an ``(m, 2)`` array with columns lfdr and lfsr."""
        table = self.posterior(X)
        return np.column_stack([table.lfdr, table.lfsr])

    def predict(self, X, level=None, statistic=None, rule=None):
        """Boolean discovery indicator per unit."""
        level = check_level(self.level if level is None else level)
        statistic = statistic or self.statistic
        rule = rule or self.rule
        if statistic not in STATISTICS or rule not in RULES:
            raise InvalidInputError(f"unknown statistic {statistic!r} or rule {rule!r}")
        table = self.posterior(X)
        flags = np.zeros(len(table), dtype=bool)
        flags[discovery_list(table, level, statistic, rule).indices] = True
        return flags
