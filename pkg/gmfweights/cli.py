"""
Command-line interface: ``gmfweights {avocado,nrho,linear-check,sweep}``.

Settings are resolved as defaults < ``--config`` YAML file < explicit flags.
"""

import argparse
import logging
import sys
from collections.abc import Sequence

from gmfweights.exceptions import ConfigError
from gmfweights.metrics import MetricsReport
from gmfweights.scenarios import (
    Scenario,
    ScenarioConfig,
    TruthSource,
    avocado_grids,
    avocado_trials,
    nrho_trials,
    run_avocado_baseline,
    run_linear_check,
    run_sweep,
    summarize,
)
from gmfweights.updaters import UpdaterKind
from gmfweights.utils import write_grid, write_reports, write_trials
from gmfweights.weights import CovarianceForm, SigmaVariant, WeightScheme

__all__ = ["main", "build_parser"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FLAGGED = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    add = parser.add_argument
    add("--config", dest="config_file", help="YAML file with config overrides")
    add("--seed", type=int, required=True, help="Root random seed")
    add("--updater", choices=[k.value for k in UpdaterKind])
    add("--scheme", choices=[s.value for s in WeightScheme])
    add("-M", "--components", type=int, help="Mixture components / ensemble size")
    add("--monte-carlo", type=int, help="Number of Monte Carlo trials")
    add("--bruf-steps", type=int)
    add("--alpha", type=float)
    add("--beta", type=float)
    add("--kappa", type=float)
    add("--covariance-form", choices=[f.value for f in CovarianceForm])
    add("--sigma-variant", choices=[v.value for v in SigmaVariant])
    add("--rel-tol", type=float)
    add("--abs-tol", type=float)
    add("--n-jobs", type=int, help="joblib workers for trials")
    add("--max-flagged-fraction", type=float)
    add("-o", "--output", help="Report file (.csv or YAML)")
    add("--trials-csv", help="Per-trial CSV file")
    add("-v", "--verbose", action="count", default=0, dest="verbosity")
    add("-q", "--quiet", action="store_true", help="Hide progress bars")


def _add_avocado(parser: argparse.ArgumentParser) -> None:
    add = parser.add_argument
    add("--truth-source", choices=[t.value for t in TruthSource])
    add("--fixed-truth", action="store_true", default=argparse.SUPPRESS)
    add("--grid-nodes", type=int)
    add("--grid-dir", help="Directory for x1,x2,density grid dumps")
    add("--kld-prefactor", type=float)
    add("--kld-support", type=float, help="Posterior level bounding the KLD region")
    add("--baseline", action="store_true", help="Also report the single-Gaussian row")


def _add_nrho(parser: argparse.ArgumentParser) -> None:
    add = parser.add_argument
    add("--orbits", type=int)
    add(
        "--no-noise",
        dest="measurement_noise",
        action="store_false",
        default=argparse.SUPPRESS,
    )
    add("--divergence-gate", type=float, help="Position RMSE gate in LU")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmfweights",
        description="Gaussian mixture filtering with traditional and improved weights",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    avocado = subparsers.add_parser("avocado", help="Quadratic measurement example")
    _add_common(avocado)
    _add_avocado(avocado)

    nrho = subparsers.add_parser("nrho", help="Cislunar NRHO tracking with the EnGMF")
    _add_common(nrho)
    _add_nrho(nrho)

    linear = subparsers.add_parser(
        "linear-check", help="Weight equivalence on random linear models"
    )
    _add_common(linear)
    linear.add_argument("--cases", dest="linear_cases", type=int)

    sweep = subparsers.add_parser("sweep", help="Component-count sweep")
    _add_common(sweep)
    _add_avocado(sweep)
    _add_nrho(sweep)
    sweep.add_argument(
        "--scenario", choices=[Scenario.AVOCADO.value, Scenario.NRHO.value]
    )
    sweep.add_argument(
        "--counts",
        dest="counts",
        type=int,
        nargs="+",
        default=[10, 25, 50, 100, 200],
        help="Component counts to visit",
    )
    sweep.add_argument(
        "--methods",
        nargs="+",
        default=["ekf:traditional", "ekf:improved"],
        help="updater:scheme pairs or updater-single baselines",
    )
    return parser


_CLI_ONLY = {
    "command",
    "config_file",
    "verbosity",
    "quiet",
    "baseline",
    "counts",
    "methods",
}


def _resolve_config(args: argparse.Namespace, scenario: Scenario) -> ScenarioConfig:
    base = (
        ScenarioConfig.from_yaml(args.config_file)
        if args.config_file
        else ScenarioConfig()
    )
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in _CLI_ONLY and value is not None
    }
    if args.command != "sweep":
        overrides["scenario"] = scenario
    elif overrides.get("scenario", base.scenario) == Scenario.LINEAR_CHECK:
        raise ConfigError("sweep needs an avocado or nrho scenario")
    return base.with_overrides(**overrides)


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def _print_reports(reports: Sequence[MetricsReport]) -> None:
    for report in reports:
        fields = [f"rmse={report.rmse:.4f}"]
        for name in ("rmse_position", "kld", "snees"):
            value = getattr(report, name)
            if value is not None:
                fields.append(f"{name}={value:.4f}")
        print(
            f"{report.method:<28} M={report.components:<4} "
            f"{' '.join(fields)} trials={report.trials} "
            f"flagged={report.flagged_trials}"
        )


def _finish(reports: Sequence[MetricsReport], cfg: ScenarioConfig) -> int:
    _print_reports(reports)
    if cfg.output is not None:
        write_reports(reports, cfg.output)
        logger.info("Wrote %d report rows to %s", len(reports), cfg.output)

    over = [r for r in reports if r.flagged_fraction > cfg.max_flagged_fraction]
    for report in over:
        logger.error(
            "%s M=%d: %.0f%% of trials flagged",
            report.method,
            report.components,
            100 * report.flagged_fraction,
        )
    return EXIT_FLAGGED if over else EXIT_OK


def _run(args: argparse.Namespace) -> int:
    progress = not args.quiet
    match args.command:
        case "avocado":
            cfg = _resolve_config(args, Scenario.AVOCADO)
            records = avocado_trials(cfg, progress=progress)
            reports = [summarize(records, cfg.method, cfg.components)]
            if args.baseline:
                reports.append(run_avocado_baseline(cfg, progress=progress))
            if cfg.trials_csv is not None:
                write_trials(records, cfg.trials_csv)
            if cfg.grid_dir is not None:
                for label, field in avocado_grids(cfg).items():
                    write_grid(field, cfg.grid_dir / f"{label.replace(':', '_')}.csv")
            return _finish(reports, cfg)

        case "nrho":
            cfg = _resolve_config(args, Scenario.NRHO)
            records = nrho_trials(cfg, progress=progress)
            if cfg.trials_csv is not None:
                write_trials(records, cfg.trials_csv)
            return _finish([summarize(records, cfg.method, cfg.components)], cfg)

        case "linear-check":
            cfg = _resolve_config(args, Scenario.LINEAR_CHECK)
            report = run_linear_check(cfg, progress=progress)
            for method, value in report.discrepancies.items():
                print(f"{method:<28} max_discrepancy={value:.3e}")
            print(f"passed={report.passed} (tolerance {report.tolerance:g})")
            return EXIT_OK if report.passed else EXIT_FLAGGED

        case "sweep":
            cfg = _resolve_config(args, Scenario.AVOCADO)
            reports = run_sweep(cfg, args.counts, args.methods, progress=progress)
            return _finish(reports, cfg)

    raise ConfigError(f"Unknown command: {args.command}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbosity)

    try:
        return _run(args)
    except ConfigError as e:
        print(f"gmfweights: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
