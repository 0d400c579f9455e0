"""Command-line entry point: ``python -m app.cli {simulate,evaluate,study,plot} ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Sequence

from src.data_models import AssociationKind, JointModelSpec
from src.dataset_io import EVENTS_FILE, LONGITUDINAL_FILE, read_dataset, read_residuals, write_dataset, write_replicates
from src.diagnostics import (
    DEFAULT_BINS,
    bands_to_dataframe,
    detrended_pd_wormplot,
    npd_percentile_bands,
    npd_qq_points,
    qq_to_dataframe,
    wormplot_to_dataframe,
)
from src.errors import NumericalError, SpecError
from src.evaluation import DEFAULT_K, DEFAULT_SEED, evaluate_model, write_evaluation_outputs
from src.model_core import base_model_spec
from src.pdf_report import generate_pdf_report
from src.plots import render_svg
from src.simulator import DEFAULT_N_TIMES, default_design, simulate_dataset
from src.spec_io import load_spec, scenario_from_config
from src.study import DEFAULT_STUDIES, FAMILIES, SAMPLE_SIZES, run_scenarios, scenario_grid, scenario_results_to_dataframe
from src.utils import configure_logging, ensure_directory

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class CliParser(argparse.ArgumentParser):
    """Usage errors surface as SpecError so every failure shares one exit path."""

    def error(self, message: str):  # type: ignore[override]
        raise SpecError(f"{self.prog}: {message}", field="argv")


def _spec_from_args(args: argparse.Namespace) -> JointModelSpec:
    if args.spec:
        return load_spec(args.spec)
    return base_model_spec(association=args.association)


def _cmd_simulate(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    if args.n < 1:
        raise SpecError("--n must be at least 1", field="n")
    design = default_design(args.n, study_end=spec.study_end, n_times=args.times)
    subjects = simulate_dataset(spec, design, args.seed, study=args.study)
    write_dataset(subjects, args.out)
    n_events = sum(subject.event.observed for subject in subjects)
    LOGGER.info("Simulated %d subjects under %s (%d events) into %s", len(subjects), spec.name, n_events, args.out)
    return EXIT_OK


def _dataset_paths(args: argparse.Namespace) -> tuple[Path, Path]:
    if args.data:
        base = Path(args.data)
        return base / LONGITUDINAL_FILE, base / EVENTS_FILE
    if not (args.longitudinal and args.events):
        raise SpecError("pass --data DIR or both --longitudinal and --events", field="data")
    return Path(args.longitudinal), Path(args.events)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    if args.k < 2:
        raise SpecError("--k must be at least 2", field="k")
    longitudinal_path, events_path = _dataset_paths(args)
    subjects = read_dataset(longitudinal_path, events_path)
    design = None
    if args.times:
        design = default_design(len(subjects), study_end=spec.study_end, n_times=args.times)
    result = evaluate_model(
        subjects,
        spec,
        design=design,
        k=args.k,
        seed=args.seed,
        n_bins=args.bins,
        with_vpc=not args.no_vpc,
        keep_replicates=args.export_replicates,
    )
    out = ensure_directory(args.out)
    write_evaluation_outputs(result, out)
    if args.export_replicates and result.replicates is not None:
        write_replicates(result.replicates, out)
    if args.pdf:
        (out / "report.pdf").write_bytes(generate_pdf_report(result).getvalue())
    for decision in (result.report.global_decision, result.report.ks_decision):
        verdict = "reject" if decision.reject else "do not reject"
        min_p = decision.components[decision.driving_component]
        print(f"{spec.name} {decision.name}: {verdict} (min p {min_p:.4g} via {decision.driving_component})")
    return EXIT_OK


def _cmd_study(args: argparse.Namespace) -> int:
    if args.config:
        scenario = scenario_from_config(args.config)
        overrides = {}
        if args.studies is not None:
            overrides["n_replicate_studies"] = args.studies
        if args.k_sim is not None:
            overrides["k"] = args.k_sim
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        sizes = args.n or [scenario.n_subjects]
        scenarios = [dataclasses.replace(scenario, n_subjects=n, **overrides) for n in sizes]
    else:
        scenarios = scenario_grid(
            args.family,
            sample_sizes=args.n or SAMPLE_SIZES,
            n_replicate_studies=args.studies if args.studies is not None else DEFAULT_STUDIES,
            k=args.k_sim if args.k_sim is not None else DEFAULT_K,
            master_seed=args.seed if args.seed is not None else DEFAULT_SEED,
        )
    if any(s.n_replicate_studies < 1 for s in scenarios):
        raise SpecError("--studies must be at least 1", field="studies")
    if any(s.k < 2 for s in scenarios):
        raise SpecError("--k-sim must be at least 2", field="k_sim")
    results = run_scenarios(scenarios, workers=args.workers, progress=not args.quiet)
    frame = scenario_results_to_dataframe(results)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
        LOGGER.info("Wrote %d rows to %s", len(frame), path)
    else:
        frame.to_csv(sys.stdout, index=False)
    return EXIT_OK


def _cmd_plot(args: argparse.Namespace) -> int:
    table = read_residuals(args.residuals)
    out = ensure_directory(args.out)
    if table.longitudinal:
        bands = npd_percentile_bands(table.longitudinal, n_bins=args.bins)
        bands_to_dataframe(bands).to_csv(out / "bands.csv", index=False)
        (out / "bands.svg").write_bytes(render_svg(bands, kind="bands"))
    if table.tte:
        worm = detrended_pd_wormplot(table.tte)
        wormplot_to_dataframe(worm).to_csv(out / "wormplot.csv", index=False)
        (out / "wormplot.svg").write_bytes(render_svg(worm, kind="wormplot"))
        qq = npd_qq_points(table.npd_tte_values())
        qq_to_dataframe(qq).to_csv(out / "qq_tte.csv", index=False)
        (out / "qq_tte.svg").write_bytes(render_svg(qq, kind="qq"))
    LOGGER.info("Wrote diagnostic plots to %s", out)
    return EXIT_OK


def _add_spec_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", help="model spec JSON (default: the base model)")
    parser.add_argument(
        "--association",
        default=AssociationKind.CURRENT_PSA.value,
        choices=[kind.value for kind in AssociationKind],
        help="association link of the base model when --spec is not given",
    )


def build_parser() -> CliParser:
    parser = CliParser(prog="jmnpde", description="Evaluate joint longitudinal/time-to-event models with npd/npde.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="simulate a dataset")
    _add_spec_arguments(simulate)
    simulate.add_argument("--n", type=int, default=100, help="number of subjects")
    simulate.add_argument("--times", type=int, default=DEFAULT_N_TIMES, help="equally spaced planned times on [0, study end]")
    simulate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    simulate.add_argument("--study", type=int, default=0, help="study index within the master seed")
    simulate.add_argument("--out", required=True, help="output directory for longitudinal.csv and events.csv")
    simulate.set_defaults(handler=_cmd_simulate)

    evaluate = commands.add_parser("evaluate", help="compute residuals, tests and diagnostics")
    _add_spec_arguments(evaluate)
    evaluate.add_argument("--data", help="directory holding longitudinal.csv and events.csv")
    evaluate.add_argument("--longitudinal", help="longitudinal CSV (id,time,value)")
    evaluate.add_argument("--events", help="events CSV (id,time,event[,time_upper])")
    evaluate.add_argument("--k", type=int, default=DEFAULT_K, help="Monte-Carlo replicates")
    evaluate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    evaluate.add_argument("--times", type=int, help="planned grid size; default is the dataset's own times")
    evaluate.add_argument("--bins", type=int, default=DEFAULT_BINS)
    evaluate.add_argument("--no-vpc", action="store_true", help="skip the Kaplan-Meier VPC")
    evaluate.add_argument("--pdf", action="store_true", help="also write report.pdf")
    evaluate.add_argument("--export-replicates", action="store_true", help="also write the replicate tables")
    evaluate.add_argument("--out", required=True)
    evaluate.set_defaults(handler=_cmd_evaluate)

    study = commands.add_parser("study", help="type I error / power over replicate studies")
    source = study.add_mutually_exclusive_group(required=True)
    source.add_argument("--family", choices=FAMILIES)
    source.add_argument("--config", help="scenario config JSON")
    study.add_argument("--n", type=int, nargs="+", help="sample sizes (default 50 100 200)")
    study.add_argument("--studies", type=int, help=f"replicate studies per scenario (default {DEFAULT_STUDIES})")
    study.add_argument("--k-sim", type=int, help=f"replicates per study (default {DEFAULT_K})")
    study.add_argument("--seed", type=int)
    study.add_argument("--workers", type=int, default=1)
    study.add_argument("--out", help="CSV path (default: stdout)")
    study.set_defaults(handler=_cmd_study)

    plot = commands.add_parser("plot", help="render diagnostics from a residual CSV")
    plot.add_argument("--residuals", required=True)
    plot.add_argument("--bins", type=int, default=DEFAULT_BINS)
    plot.add_argument("--out", required=True)
    plot.set_defaults(handler=_cmd_plot)
    return parser


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(list(argv) if argv is not None else None)
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        configure_logging(level)
        return args.handler(args)
    except SpecError as exc:
        field = f" [{exc.field}]" if exc.field and exc.field != "argv" else ""
        print(f"error{field}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.context:
            print(f"context: {exc.context}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv: List[str] | None = None) -> None:
    sys.exit(cli_dispatch(argv))


if __name__ == "__main__":
    main()
