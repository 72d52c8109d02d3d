"""Posterior effect distributions, lfdr / lfsr and discovery lists."""

from dataclasses import dataclass

import numpy as np

from ._validation import InvalidInputError, NumericalDegeneracyError, check_level

STATISTICS = ("lfdr", "lfsr")
RULES = ("threshold", "cumulative-mean")


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """Per-unit posterior over the effect grid.

    Attributes
    ----------
    mass : ndarray of shape (m, 2K+1)
        Row ``i`` is ``P(theta_i = a_k | x_i, s2_i)``.
    lfdr : ndarray of shape (m,)
        Posterior mass at the null grid point.
    lfsr : ndarray of shape (m,)
        Smaller of the two tail masses, each including the null point.
    mode_index : int
        Column of the null grid point.
    """

    mass: np.ndarray
    lfdr: np.ndarray
    lfsr: np.ndarray
    mode_index: int

    @classmethod
    def from_mass(cls, mass, mode_index):
        mass = np.asarray(mass, dtype=float)
        K = mode_index
        below = mass[:, : K + 1].sum(axis=1)
        above = mass[:, K:].sum(axis=1)
        lfdr = mass[:, K].copy()
        lfsr = np.minimum(below, above)
        # rounding in the two partial sums can leave lfsr a hair under lfdr
        lfsr = np.clip(np.maximum(lfsr, lfdr), 0.0, 1.0)
        for arr in (mass, lfdr, lfsr):
            arr.setflags(write=False)
        return cls(mass, lfdr, lfsr, K)

    def __len__(self):
        return self.lfdr.size

    def posterior_mean(self, points):
        return self.mass @ np.asarray(points, dtype=float)

    def statistic(self, name):
        if name not in STATISTICS:
            raise InvalidInputError(f"statistic must be one of {STATISTICS}, got {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class DiscoveryList:
    level: float
    rule: str
    statistic: str
    indices: np.ndarray

    def __len__(self):
        return self.indices.size

    def __contains__(self, i):
        return bool(np.isin(i, self.indices))


def _normalize_rows(unnorm):
    totals = unnorm.sum(axis=1)
    bad = np.flatnonzero(~(totals > 0) | ~np.isfinite(totals))
    if bad.size:
        raise NumericalDegeneracyError(
            f"unit {bad[0]} has zero posterior mass on every grid point"
        )
    return unnorm / totals[:, None]


def posterior(tensor, mix):
    """Posterior over the effect grid: row ``i`` is proportional to ``g_k sum_l h_l c[i,k,l]``.

    Raises
    ------
    NumericalDegeneracyError
        If some unit has zero unnormalized mass everywhere.
    """
    g = np.asarray(mix.g, dtype=float)
    h = np.asarray(mix.h, dtype=float)
    _, n_k, n_l = tensor.shape
    if g.shape != (n_k,) or h.shape != (n_l,):
        raise InvalidInputError("mixing vectors do not match the tensor grids")
    rows = []
    for _, _, block in tensor.blocks():
        n = block.shape[0]
        P = (block.reshape(n * n_k, n_l) @ h).reshape(n, n_k)
        rows.append(_normalize_rows(P * g))
    return PosteriorTable.from_mass(np.concatenate(rows, axis=0), tensor.effect_grid.mode_index)


def discovery_list(table, level, statistic="lfdr", rule="threshold"):
    """Units declared significant at ``level``.

    ``threshold`` keeps every unit whose statistic is at most ``level``.
    ``cumulative-mean`` sorts the statistic and keeps the longest prefix whose
    running mean stays at or below ``level``; tied values enter or leave
    together.
    """
    level = check_level(level)
    if rule not in RULES:
        raise InvalidInputError(f"rule must be one of {RULES}, got {rule!r}")
    stat = np.asarray(table.statistic(statistic) if hasattr(table, "statistic") else table, float)
    if rule == "threshold":
        idx = np.flatnonzero(stat <= level)
    else:
        order = np.argsort(stat, kind="stable")
        sorted_stat = stat[order]
        # mean <= level  <=>  sum of (stat - level) <= 0; the latter does not
        # round a run of values at or under the level to just above it
        excess = np.cumsum(sorted_stat - level)
        # prefix may only end where the next value differs (tie groups stay whole)
        ends = np.flatnonzero(np.append(sorted_stat[1:] != sorted_stat[:-1], True))
        ok = ends[excess[ends] <= 0]
        n_keep = ok[-1] + 1 if ok.size else 0
        idx = np.sort(order[:n_keep])
    idx.setflags(write=False)
    return DiscoveryList(level, rule, statistic, idx)


def pi0_estimate(mix):
    """Fitted mass at the null grid point."""
    g = np.asarray(mix.g, dtype=float)
    return float(g[g.size // 2])
