"""
Command-line driver for blf-py
"""

import argparse
import logging
import logging.handlers
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .baselines import avd, evaluate_segmentation, evaluate_segmentations, voting_segmentations
from .config import ConfigError, config_to_dict, hyper_from_config, load_config
from .covariates import dataset_from_inputs
from .diagnostics import diagnostics_report, trace_export
from .fileio import MatrixParseError, read_data_dir, read_json, write_json, write_manifest, write_matrix_csv, write_pgm
from .lattice import build_lattice
from .metrics import MetricsManager
from .models import Config, SamplerConfig, SimulationConfig
from .samplers import run_chain
from .simgen import export_instance, generate_simulation
from .summaries import aggregate_reports, posterior_volumes, rb_probability_map, reliability_maps, threshold_map
from .utils import InvalidArgumentError, format_duration

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1

VOLUME_LEVEL = 0.99


def setup_logging(config: Config, level: Optional[str] = None):
    """Setup logging configuration"""
    log_config = config.logging

    # Configure root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, (level or log_config.level).upper(), logging.INFO))

    # Clear existing handlers
    root_logger.handlers.clear()

    # Create formatter
    if log_config.json:
        formatter = logging.Formatter(
            '{"time":"%(asctime)s","level":"%(levelname)s","logger":"%(name)s","msg":"%(message)s"}'
        )
    else:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

    # Console handler; stdout stays free for scripting
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # File handler if configured
    if log_config.file:
        log_file = Path(log_config.file)
        log_file.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=log_config.max_size_mb * 1024 * 1024,
            backupCount=log_config.backup_count,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {value}")
    return value


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blf", description="Bayesian spatial label fusion")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override the configured log level")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Generate a synthetic fusion experiment")
    simulate.add_argument("--out", required=True, help="Output directory")
    simulate.add_argument("--seed", type=_non_negative_int, default=0, help="Random seed")
    simulate.add_argument("--config", "-c", default=None, help="Configuration file path")
    simulate.add_argument("--height", type=_positive_int, default=None, help="Grid height")
    simulate.add_argument("--width", type=_positive_int, default=None, help="Grid width")
    simulate.add_argument("--raters", type=_positive_int, default=None, help="Number of raters")
    simulate.add_argument("--good-arc-prob", type=float, default=None, help="Perturbed sector share, good atlas")
    simulate.add_argument("--poor-arc-prob", type=float, default=None, help="Perturbed sector share, poor atlases")
    simulate.add_argument("--intensity-offset", type=int, default=None, help="Offset of intensity discrepancies (pixels)")
    simulate.add_argument("--discrepancy", type=float, default=None, help="Peak intensity discrepancy of poor raters")
    simulate.add_argument("--max-retries", type=_positive_int, default=None, help="Regeneration attempts")

    fuse = sub.add_parser("fuse", help="Run the fusion sampler on a data directory")
    fuse.add_argument("--data", required=True, help="Input data directory")
    fuse.add_argument("--out", required=True, help="Output directory")
    fuse.add_argument("--config", "-c", default=None, help="Configuration file path (YAML or JSON)")
    fuse.add_argument("--iters", type=_positive_int, default=None, help="Number of sweeps")
    fuse.add_argument("--burnin", type=_non_negative_int, default=None, help="Burn-in sweeps (default half)")
    fuse.add_argument("--thin", type=_positive_int, default=None, help="Thinning interval")
    fuse.add_argument("--seed", type=_non_negative_int, default=None, help="Random seed")
    fuse.add_argument("--workers", type=_positive_int, default=None, help="Threads for the field updates")
    fuse.add_argument("--threshold", type=_unit_interval, default=0.5, help="Segmentation threshold")
    fuse.add_argument("--keep-last", type=_positive_int, default=None, help="Keep only the last K thinned samples")
    fuse.add_argument("--stream-dir", default=None, help="Stream retained samples to this directory")
    fuse.add_argument("--progress", action="store_true", help="Show a progress bar")

    vote = sub.add_parser("vote", help="Run the voting baselines on a data directory")
    vote.add_argument("--data", required=True, help="Input data directory")
    vote.add_argument("--out", required=True, help="Output directory")
    vote.add_argument("--config", "-c", default=None, help="Configuration file path")
    vote.add_argument("--epsilon", type=_non_negative_float, default=None, help="Weight regularizer (>= 0)")

    aggregate = sub.add_parser("aggregate", help="Pool report.json files across targets")
    aggregate.add_argument("reports", nargs="+", help="report.json files")
    aggregate.add_argument("--out", required=True, help="Output JSON file")
    return parser


def _simulation_overrides(simulation: SimulationConfig, args: argparse.Namespace) -> SimulationConfig:
    overrides = {
        "height": args.height,
        "width": args.width,
        "n_raters": args.raters,
        "good_arc_prob": args.good_arc_prob,
        "poor_arc_prob": args.poor_arc_prob,
        "intensity_offset": args.intensity_offset,
        "discrepancy_magnitude": args.discrepancy,
        "max_retries": args.max_retries,
    }
    return replace(simulation, **{k: v for k, v in overrides.items() if v is not None})


def _sampler_overrides(sampler: SamplerConfig, args: argparse.Namespace) -> SamplerConfig:
    """Apply command-line overrides; a new --iters without --burnin re-derives the half burn-in"""
    burn_in = args.burnin
    if burn_in is None and args.iters is None:
        burn_in = sampler.burn_in
    return replace(
        sampler,
        n_iterations=args.iters if args.iters is not None else sampler.n_iterations,
        burn_in=burn_in,
        thin=args.thin if args.thin is not None else sampler.thin,
        rng_seed=args.seed if args.seed is not None else sampler.rng_seed,
        n_workers=args.workers if args.workers is not None else sampler.n_workers,
        keep_last=args.keep_last if args.keep_last is not None else sampler.keep_last,
        stream_dir=args.stream_dir if args.stream_dir is not None else sampler.stream_dir,
        progress=args.progress or sampler.progress,
    )


def apply_overrides(config: Config, args: argparse.Namespace) -> Config:
    """Fold command-line flags into the loaded configuration

    Raises InvalidArgumentError when the resulting sections are inconsistent,
    e.g. a burn-in not below the number of sweeps.
    """
    if args.command == "simulate":
        return replace(config, simulation=_simulation_overrides(config.simulation, args))
    if args.command == "fuse":
        return replace(config, sampler=_sampler_overrides(config.sampler, args))
    if args.command == "vote" and args.epsilon is not None:
        return replace(config, covariates=replace(config.covariates, epsilon=args.epsilon))
    return config


def cmd_simulate(args: argparse.Namespace, config: Config) -> int:
    instance = generate_simulation(config.simulation, args.seed, config.covariates)
    out_dir = export_instance(instance, args.out)
    write_manifest(out_dir, "simulate", args.seed, config_to_dict(config))
    return EXIT_OK


def _fusion_report(segmentation: np.ndarray, prob_volumes: Dict[str, Any], segmentations: Dict[str, np.ndarray],
                   truth: Optional[np.ndarray], threshold: float) -> Dict[str, Any]:
    methods = [evaluate_segmentation("blf", segmentation, truth)] + evaluate_segmentations(segmentations, truth)
    truth_volume = float(truth.sum()) if truth is not None else None
    volumes = []
    for name, volume in (("BLF_PM", prob_volumes["posterior_mean"]), ("BLF_TH", prob_volumes["thresholded"])):
        row: Dict[str, Any] = {"method": name, "volume": volume, "avd": None}
        if truth_volume:
            row["avd"] = avd(volume, truth_volume)
        volumes.append(row)

    interval = prob_volumes["interval"]
    return {
        "threshold": threshold,
        "truth_volume": truth_volume,
        "methods": methods,
        "volumes": volumes,
        "volume_interval": {
            "level": prob_volumes["level"],
            "interval": interval,
            "contains_truth": (bool(interval[0] <= truth_volume <= interval[1])
                               if interval is not None and truth_volume is not None else None),
        },
    }


def cmd_fuse(args: argparse.Namespace, config: Config) -> int:
    inputs = read_data_dir(args.data)
    shape = (inputs.height, inputs.width)
    graph = build_lattice(*shape)
    dataset, _ = dataset_from_inputs(inputs.labels, inputs.rater_intensity, inputs.target_intensity,
                                     graph, config.covariates, inputs.channel)
    hyper = hyper_from_config(config.model, dataset.design)
    sampler = config.sampler

    metrics = MetricsManager()
    chain = run_chain(dataset, graph, hyper, sampler, metrics=metrics)
    prob_map = rb_probability_map(chain)
    segmentation = threshold_map(prob_map, args.threshold)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(prob_map.mean.reshape(shape), out_dir / "prob_mean.csv")
    write_matrix_csv(prob_map.sd.reshape(shape), out_dir / "prob_sd.csv")
    write_pgm(prob_map.mean.reshape(shape), out_dir / "prob_mean.pgm")
    write_matrix_csv(segmentation.reshape(shape), out_dir / "segmentation.csv")
    write_matrix_csv(chain.volume_samples, out_dir / "volume_samples.csv")
    trace_export(chain, out_dir / "traces.csv")
    for kind, fields in reliability_maps(chain).items():
        for r in range(dataset.n_raters):
            write_matrix_csv(fields[:, r].reshape(shape), out_dir / f"{kind}_{r + 1}.csv")

    write_json({
        "acceptance_rate_delta": chain.acceptance_rate_delta,
        "n_samples": chain.n_samples,
        "traces": diagnostics_report(chain),
    }, out_dir / "diagnostics.json")

    segmentations = voting_segmentations(inputs.labels, inputs.rater_intensity, inputs.target_intensity,
                                         config.covariates.epsilon)
    prob_volumes = posterior_volumes(chain, prob_map, args.threshold, VOLUME_LEVEL)
    write_json(_fusion_report(segmentation, prob_volumes, segmentations, inputs.truth, args.threshold),
               out_dir / "report.json")

    extra: Dict[str, Any] = {"data": str(args.data), "metrics": chain.metrics}
    if hyper.cmp is not None:
        extra["cmp"] = hyper.cmp.to_dict()
    write_manifest(out_dir, "fuse", sampler.rng_seed, config_to_dict(config), extra)
    logger.info(f"Fusion finished in {format_duration(chain.metrics.get('wall_seconds', 0.0))}; "
                f"outputs in {out_dir}")
    return EXIT_OK


def cmd_vote(args: argparse.Namespace, config: Config) -> int:
    inputs = read_data_dir(args.data)
    epsilon = config.covariates.epsilon
    segmentations = voting_segmentations(inputs.labels, inputs.rater_intensity, inputs.target_intensity, epsilon)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for method, segmentation in segmentations.items():
        write_matrix_csv(segmentation.reshape(inputs.height, inputs.width), out_dir / f"{method}_segmentation.csv")
    write_json({"epsilon": epsilon, "methods": evaluate_segmentations(segmentations, inputs.truth)},
               out_dir / "report.json")
    write_manifest(out_dir, "vote", None, config_to_dict(config), {"data": str(args.data)})
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace, config: Config) -> int:
    reports: List[Dict[str, Any]] = [read_json(path) for path in args.reports]
    write_json({"n_reports": len(reports), "methods": aggregate_reports(reports)}, Path(args.out))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fuse": cmd_fuse,
    "vote": cmd_vote,
    "aggregate": cmd_aggregate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns 0 on success and 1 on runtime failure

    Usage errors, including inconsistent flag combinations, exit with
    status 2 through argparse.
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(getattr(args, "config", None))
    except ConfigError as e:
        print(f"blf: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        config = apply_overrides(config, args)
    except InvalidArgumentError as e:
        parser.error(str(e))
    setup_logging(config, args.log_level)

    try:
        return COMMANDS[args.command](args, config)
    except (OSError, ValueError, ArithmeticError, RuntimeError, MatrixParseError, ConfigError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"blf: error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
