"""Command-line entry point: ``mixtwice fit | simulate | check``."""

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from ._validation import (
    ConfigurationError,
    InvalidInputError,
    NumericalDegeneracyError,
    check_level,
)
from .densities import UnitStats, build_component_tensor
from .estimator import FitOptions, MixingPair, fit_tensor, subsample_indices
from .grids import build_effect_grid, build_variance_grid
from .inference import RULES, STATISTICS, discovery_list, pi0_estimate, posterior
from .simulation import (
    CalibrationConfig,
    CalibrationReport,
    Pi0Law,
    ScenarioSpec,
    VarianceLaw,
    run_calibration,
    summarize,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_NUMERICAL = 5

DEFAULT_FDR_LEVELS = (0.01, 0.05, 0.1)


def _fmt(value):
    # shortest repr that round-trips to the same double
    return repr(float(value))


@dataclass
class RunConfig:
    subcommand: str
    input: str = None
    output: str = None
    groups: str = None
    nu: float = None
    grid_k: int = 15
    grid_l: int = 15
    null_value: float = 0.0
    fdr_levels: tuple = DEFAULT_FDR_LEVELS
    statistic: str = "lfsr"
    rule: str = "threshold"
    prop: float = 1.0
    seed: int = 0
    max_outer: int = 50
    tol: float = 1e-7
    multi_start: int = 1
    sep: str = "\t"
    scenario: str = "near-normal"
    pi0: str = "uniform:0.5,1"
    variance: str = "point-mass:1"
    replicates: int = 100
    n_per_group: int = 10
    m: int = 1000
    oracle: bool = False

    def validate(self):
        if self.subcommand in ("fit", "simulate") and not self.output:
            raise ConfigurationError(f"{self.subcommand} requires --output")
        if self.subcommand == "fit" and not self.input:
            raise ConfigurationError("fit requires --input")
        if not 0.0 < self.prop <= 1.0:
            raise ConfigurationError(f"--prop must lie in (0, 1], got {self.prop}")
        if self.grid_k < 1 or self.grid_l < 1:
            raise ConfigurationError("--grid-k and --grid-l must be at least 1")
        if self.nu is not None and not self.nu > 0:
            raise ConfigurationError("--nu must be positive")
        if self.statistic not in STATISTICS:
            raise ConfigurationError(f"--statistic must be one of {STATISTICS}")
        if self.rule not in RULES:
            raise ConfigurationError(f"--rule must be one of {RULES}")
        try:
            self.fdr_levels = tuple(sorted({check_level(v) for v in self.fdr_levels}))
        except InvalidInputError as exc:
            raise ConfigurationError(str(exc)) from exc
        return self

    def options(self):
        return FitOptions(max_outer=self.max_outer, tol=self.tol,
                          multi_start=self.multi_start, seed=self.seed)


# ---------------------------------------------------------------- ingestion


def _rows(path, sep):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=sep), start=1):
            if row and any(cell.strip() for cell in row):
                yield lineno, [cell.strip() for cell in row]


def _float(text, what, lineno):
    try:
        return float(text)
    except ValueError:
        raise InvalidInputError(f"line {lineno}: {what} value {text!r} is not a number") from None


def ingest_summary(path, nu=None, sep="\t"):
    """Read a table with header columns ``id``, ``x``, ``s`` and optional ``nu``.

    ``s`` is the standard error; it is squared on input. A ``nu`` argument
    overrides the file's column.

    Returns
    -------
    ids : list of str
    stats : UnitStats
    """
    rows = _rows(path, sep)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise InvalidInputError(f"{path} is empty") from None
    col = {name: i for i, name in enumerate(header)}
    missing = [c for c in ("id", "x", "s") if c not in col]
    if missing:
        raise InvalidInputError(f"line {lineno}: header lacks column(s) {', '.join(missing)}")
    has_nu = "nu" in col
    if not has_nu and nu is None:
        raise ConfigurationError("input has no nu column; supply --nu")
    ids, xs, ss, nus = [], [], [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise InvalidInputError(
                f"line {lineno}: expected {len(header)} fields, found {len(row)}"
            )
        uid = row[col["id"]]
        x = _float(row[col["x"]], "x", lineno)
        s = _float(row[col["s"]], "s", lineno)
        if not np.isfinite(x):
            raise InvalidInputError(f"line {lineno}: unit {uid!r} has non-finite x")
        if not (s > 0 and np.isfinite(s)):
            raise InvalidInputError(
                f"unit {uid!r} (line {lineno}): standard error must be positive, got {s!r}"
            )
        if has_nu and nu is None:
            v = _float(row[col["nu"]], "nu", lineno)
            if not v > 0:
                raise InvalidInputError(f"unit {uid!r} (line {lineno}): nu must be positive")
            nus.append(v)
        ids.append(uid)
        xs.append(x)
        ss.append(s)
    if not ids:
        raise InvalidInputError(f"{path} has a header but no units")
    return ids, UnitStats.from_standard_errors(xs, ss, nu if nu is not None else nus)


def _parse_labels(tokens, where):
    labels = [t.strip().upper() for t in tokens if t.strip()]
    bad = sorted({t for t in labels if t not in ("A", "B")})
    if bad:
        raise InvalidInputError(f"{where}: group labels must be A or B, found {bad}")
    return np.array([t == "A" for t in labels])


def read_group_labels(path):
    with open(path) as fh:
        return _parse_labels(fh.read().replace(",", " ").split(), path)


def ingest_matrix(path, group_labels=None, sep="\t"):
    """Read a units-by-samples matrix and summarize each row.

    The first column holds unit ids. Group labels come from ``group_labels``
    (one ``A``/``B`` per sample column) or from a leading line
    ``#groups<sep>A<sep>A<sep>B...``. A header row starting with ``id`` is
    skipped.
    """
    ids, values = [], []
    labels = None if group_labels is None else np.asarray(group_labels, dtype=bool)
    for lineno, row in _rows(path, sep):
        if row[0] == "#groups":
            if labels is None:
                labels = _parse_labels(row[1:], f"line {lineno}")
            continue
        if row[0].startswith("#") or (not ids and row[0] == "id"):
            continue
        vals = [_float(v, "sample", lineno) for v in row[1:]]
        if values and len(vals) != len(values[0]):
            raise InvalidInputError(
                f"line {lineno}: expected {len(values[0])} samples, found {len(vals)}"
            )
        ids.append(row[0])
        values.append(vals)
    if labels is None:
        raise ConfigurationError("matrix input needs group labels (--groups or a #groups line)")
    if not ids:
        raise InvalidInputError(f"{path} has no data rows")
    data = np.array(values, dtype=float)
    if labels.size != data.shape[1]:
        raise InvalidInputError(
            f"{labels.size} group labels for {data.shape[1]} sample columns"
        )
    return ids, summarize(data, labels)


def _load_input(cfg):
    if cfg.groups:
        ids, stats = ingest_matrix(cfg.input, read_group_labels(cfg.groups), cfg.sep)
    else:
        with open(cfg.input) as fh:
            first = fh.readline()
        if first.startswith("#groups"):
            ids, stats = ingest_matrix(cfg.input, None, cfg.sep)
        else:
            return ingest_summary(cfg.input, cfg.nu, cfg.sep)
    if cfg.nu is not None:
        stats = UnitStats(stats.x, stats.s2, cfg.nu)
    return ids, stats


# ---------------------------------------------------------------- commands


def _level_tag(level):
    return f"{level:g}"


def run_fit(cfg):
    ids, stats = _load_input(cfg)
    eg = build_effect_grid(stats, cfg.grid_k, cfg.null_value)
    vg = build_variance_grid(stats, cfg.grid_l)
    tensor = build_component_tensor(stats, eg, vg)
    idx = subsample_indices(len(stats), cfg.prop, cfg.seed)
    if idx.size < len(eg) + len(vg):
        raise InvalidInputError(
            f"subsample of {idx.size} units cannot identify {len(eg) + len(vg)} mixing parameters"
        )
    fit_on = tensor if idx.size == len(stats) else build_component_tensor(stats.subset(idx), eg, vg)
    report = fit_tensor(fit_on, cfg.options())
    table = posterior(tensor, report.mixing)

    flags = {}
    for level in cfg.fdr_levels:
        for stat in STATISTICS:
            mask = np.zeros(len(table), dtype=bool)
            mask[discovery_list(table, level, stat, cfg.rule).indices] = True
            flags[(stat, level)] = mask

    post_mean = table.posterior_mean(eg.points)
    sign = np.where(post_mean > eg.null_value, "+", np.where(post_mean < eg.null_value, "-", ""))
    s = np.sqrt(stats.s2)
    header = ["id", "x", "s", "lfdr", "lfsr", "sign"]
    header += [f"{stat}_{_level_tag(level)}" for level in cfg.fdr_levels for stat in STATISTICS]
    with open(cfg.output + ".results.tsv", "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=cfg.sep, lineterminator="\n")
        writer.writerow(header)
        for i, uid in enumerate(ids):
            row = [uid, _fmt(stats.x[i]), _fmt(s[i]), _fmt(table.lfdr[i]), _fmt(table.lfsr[i]), sign[i]]
            row += [int(flags[(stat, level)][i]) for level in cfg.fdr_levels for stat in STATISTICS]
            writer.writerow(row)

    summary = {
        "version": __version__,
        "n_units": len(stats),
        "seed": cfg.seed,
        "subsample_fraction": cfg.prop,
        "rule": cfg.rule,
        "statistic": cfg.statistic,
        "effect_grid": eg.points.tolist(),
        "variance_grid": vg.points.tolist(),
        "g": np.asarray(report.mixing.g).tolist(),
        "h": np.asarray(report.mixing.h).tolist(),
        "pi0": pi0_estimate(report.mixing),
        "neg_log_lik": report.neg_log_lik,
        "outer_iterations": report.outer_iterations,
        "constraint_violation": report.constraint_violation,
        "kkt_residual": report.kkt_residual,
        "converged": report.converged,
        "discoveries": {_level_tag(level): int(flags[(cfg.statistic, level)].sum())
                        for level in cfg.fdr_levels},
    }
    with open(cfg.output + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"{len(stats)} units, pi0 = {summary['pi0']:.4f}, converged = {report.converged}")
    for level in cfg.fdr_levels:
        print(f"  {cfg.statistic} <= {level:g} ({cfg.rule}): {summary['discoveries'][_level_tag(level)]} discoveries")
    return EXIT_OK


def load_summary(path):
    """Re-read a fit summary and revalidate its mixing vectors."""
    with open(path) as fh:
        summary = json.load(fh)
    summary["mixing"] = MixingPair(np.array(summary["g"]), np.array(summary["h"]))
    return summary


def _write_table(path, rows, columns, sep):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=sep, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            out = []
            for c in columns:
                v = row[c]
                if isinstance(v, (bool, np.bool_)):
                    out.append(int(v))
                elif isinstance(v, float):
                    out.append(_fmt(v))
                else:
                    out.append(v)
            writer.writerow(out)


def run_simulate(cfg):
    try:
        spec = ScenarioSpec(cfg.scenario, Pi0Law.parse(cfg.pi0), VarianceLaw.parse(cfg.variance),
                            cfg.n_per_group, cfg.m, cfg.replicates, cfg.seed)
    except InvalidInputError as exc:
        raise ConfigurationError(str(exc)) from exc
    config = CalibrationConfig(levels=cfg.fdr_levels, K=cfg.grid_k, L=cfg.grid_l,
                               options=cfg.options(), oracle=cfg.oracle)
    report = run_calibration(spec, config)
    _write_table(cfg.output + ".replicates.tsv", report.rows, CalibrationReport.REPLICATE_COLUMNS, cfg.sep)
    _write_table(cfg.output + ".aggregate.tsv", report.aggregate, CalibrationReport.AGGREGATE_COLUMNS, cfg.sep)
    for row in report.aggregate:
        if row["stratum"] == "all":
            print(f"level {row['level']:g}: FDR threshold {row['mean_fdp_threshold']:.4f}, "
                  f"cumulative-mean {row['mean_fdp_cumulative_mean']:.4f}, "
                  f"pi0 MAE {row['mae_pi0']:.4f}")
    return EXIT_OK


def run_check(cfg):
    from .selfcheck import run_self_checks

    results = run_self_checks(seed=cfg.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK_FAILED


COMMANDS = {"fit": run_fit, "simulate": run_simulate, "check": run_check}


def run(cfg):
    """Execute a validated configuration and map failures to exit codes."""
    try:
        cfg.validate()
        return COMMANDS[cfg.subcommand](cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidInputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NumericalDegeneracyError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


# ---------------------------------------------------------------- parsing


def _separator(text):
    return {"tab": "\t", "\\t": "\t", "comma": ",", ",": ","}.get(text, text)


def build_parser():
    parser = argparse.ArgumentParser(prog="mixtwice", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="output path prefix")
    common.add_argument("--grid-k", type=int, default=15)
    common.add_argument("--grid-l", type=int, default=15)
    common.add_argument("--fdr-level", type=float, action="append", dest="fdr_levels")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--max-outer", type=int, default=50)
    common.add_argument("--tol", type=float, default=1e-7)
    common.add_argument("--multi-start", type=int, default=1)
    common.add_argument("--sep", type=_separator, default="\t", help="field separator: tab or comma")

    p_fit = sub.add_parser("fit", parents=[common], help="fit and score a data set")
    p_fit.add_argument("--input", help="summary table (id, x, s[, nu]) or sample matrix")
    p_fit.add_argument("--groups", help="sidecar of A/B labels; marks --input as a sample matrix")
    p_fit.add_argument("--nu", type=float, help="degrees of freedom for every unit")
    p_fit.add_argument("--null-value", type=float, default=0.0)
    p_fit.add_argument("--statistic", choices=STATISTICS, default="lfsr")
    p_fit.add_argument("--rule", choices=RULES, default="threshold")
    p_fit.add_argument("--prop", type=float, default=1.0, help="fraction of units used to fit")

    p_sim = sub.add_parser("simulate", parents=[common], help="run a synthetic calibration study")
    p_sim.add_argument("--scenario", default="near-normal",
                       help="spiky, near-normal (normal), flattop, big-variance or bimodal")
    p_sim.add_argument("--pi0", default="uniform:0.5,1", help="fixed:P or uniform:LO,HI")
    p_sim.add_argument("--variance", default="point-mass:1",
                       help="point-mass:V, two-point:V1,V2,W or inverse-gamma:A,B")
    p_sim.add_argument("--replicates", type=int, default=100)
    p_sim.add_argument("--n-per-group", type=int, default=10)
    p_sim.add_argument("--m", type=int, default=1000)
    p_sim.add_argument("--oracle", action="store_true", help="also fit the known-variance baseline")

    sub.add_parser("check", parents=[common], help="run the numerical self-checks")
    return parser


def config_from_args(args):
    values = {k: v for k, v in vars(args).items() if v is not None}
    levels = values.pop("fdr_levels", None)
    cfg = RunConfig(**{k: v for k, v in values.items() if k in RunConfig.__dataclass_fields__})
    if levels:
        cfg.fdr_levels = tuple(levels)
    elif cfg.subcommand == "simulate":
        cfg.fdr_levels = (0.05, 0.1, 0.2)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(config_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
