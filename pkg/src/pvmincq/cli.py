"""pvmincq command line: bench, run, pv and validate."""

import argparse
import logging
import sys
from pathlib import Path

from pvmincq import bench, pipeline
from pvmincq.dataset import ShiftSpec, read_csv
from pvmincq.pv import compute_matching, epsilon_quantiles
from pvmincq.utils import PVMinCqError, pp, write_atomic
from pvmincq.voters import DimensionMismatch

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PIPELINE_ERROR = 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors exiting 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def shift_arg(text: str) -> ShiftSpec:
    try:
        return ShiftSpec.parse(text)
    except ValueError as ex:
        raise argparse.ArgumentTypeError(str(ex)) from None


def positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def parse_args(args: list[str]) -> argparse.Namespace:
    common = ArgumentParser(add_help=False)
    common.add_argument("--debug", action="store_true", help="Enable debug logging")

    configured = ArgumentParser(add_help=False, parents=[common])
    configured.add_argument(
        "--config",
        type=str,
        help="A yaml file with the benchmark configuration (built-in defaults otherwise).",
    )

    single = ArgumentParser(add_help=False, parents=[configured])
    single.add_argument("--method", required=True, choices=pipeline.METHODS)
    single.add_argument(
        "--shift",
        type=shift_arg,
        default=ShiftSpec.rotation(20),
        help="rot<angle> or trans (default rot20).",
    )
    single.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Repetition index of the task; samples derive from it and the config base seed.",
    )

    parser = ArgumentParser(
        prog="pvmincq",
        description="Domain adaptation with the perturbed variation and MinCq.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    bench_parser = subparsers.add_parser(
        "bench", parents=[configured], help="Run the full benchmark table."
    )
    bench_parser.add_argument("--seed", type=int, help="Base seed of all repetitions.")
    bench_parser.add_argument("--seeds", type=int, help="Number of repetitions per cell.")
    bench_parser.add_argument("--out", type=str, help="Output directory.")
    bench_parser.add_argument(
        "--method",
        action="append",
        choices=pipeline.METHODS,
        help="Restrict to this method (repeatable).",
    )
    bench_parser.add_argument(
        "--shift",
        action="append",
        type=shift_arg,
        help="Restrict to this shift, rot<angle> or trans (repeatable).",
    )
    bench_parser.add_argument("--jobs", type=int, help="Number of jobs run concurrently.")
    bench_parser.add_argument("--no-plots", action="store_true", help="Skip the SVG plots.")
    bench_parser.add_argument(
        "--show-progress", action="store_true", help="Show a progress bar over the jobs."
    )

    run_parser = subparsers.add_parser(
        "run", parents=[single], help="Run one method on one task and print its JSON report."
    )
    run_parser.add_argument(
        "--out", type=str, help="Also write the run report (and plot) under this directory."
    )

    validate_parser = subparsers.add_parser(
        "validate", parents=[single], help="Print the hyperparameter selection of one method."
    )
    validate_parser.add_argument(
        "--out", type=str, help="Also write the per-cell report as CSV under this directory."
    )

    pv_parser = subparsers.add_parser(
        "pv", parents=[common], help="Perturbed variation between two CSV samples."
    )
    pv_parser.add_argument("source", type=str, help="Source sample CSV.")
    pv_parser.add_argument("target", type=str, help="Target sample CSV.")
    radius = pv_parser.add_mutually_exclusive_group(required=True)
    radius.add_argument("--eps", type=positive_float, help="Matching radius.")
    radius.add_argument(
        "--quantile",
        type=positive_float,
        help="Matching radius as a quantile in (0, 1] of the source-target distances.",
    )

    parsed = parser.parse_args(args)
    if getattr(parsed, "jobs", None) is not None and parsed.jobs < 1:
        parser.error("--jobs must be >= 1")
    if getattr(parsed, "quantile", None) is not None and parsed.quantile > 1:
        parser.error("--quantile must be in (0, 1]")
    return parsed


def do_bench(args: argparse.Namespace) -> int:
    overrides = {}
    if args.shift:
        overrides["rotations"] = tuple(s.angle for s in args.shift if s.kind == "rotation")
        overrides["translation"] = any(s.kind == "translation" for s in args.shift)
    config = bench.load_config(
        args.config,
        base_seed=args.seed,
        seeds=args.seeds,
        output_dir=args.out,
        methods=args.method,
        jobs=args.jobs,
        plots=False if args.no_plots else None,
        **overrides,
    )
    bench.run_benchmark(config, show_progress=args.show_progress)
    return EXIT_OK


def do_run(args: argparse.Namespace) -> int:
    config = bench.load_config(args.config)
    if args.out:
        result = bench.run_job(
            config, args.method, config.resolve_shift(args.shift), args.seed, plot=True
        )
        bench.write_job(result, args.out)
        payload = result.payload
    else:
        payload = bench.run_single(config, args.method, args.shift, args.seed)
    pp(payload)
    return EXIT_OK


def do_validate(args: argparse.Namespace) -> int:
    config = bench.load_config(args.config)
    shift = config.resolve_shift(args.shift)
    report = bench.validate_single(config, args.method, shift, args.seed)
    if args.out:
        path = Path(args.out) / f"validation_{args.method}_{shift.name}_seed{args.seed}.csv"
        write_atomic(path, report.to_frame().to_csv(index=False, float_format="%.10g"))
        LOG.info("Wrote %s", path)
    pp(report.to_dict())
    return EXIT_OK


def do_pv(args: argparse.Namespace) -> int:
    source = read_csv(args.source)
    target = read_csv(args.target)
    if source.dim != target.dim:
        raise DimensionMismatch(
            f"{args.source} has d={source.dim} but {args.target} has d={target.dim}"
        )
    eps = args.eps
    if eps is None:
        eps = epsilon_quantiles(source.points, target.points, [args.quantile])[0]
        if not eps > 0:
            raise PVMinCqError(f"the {args.quantile} distance quantile is 0, pick a larger one")
    matching = compute_matching(source.points, target.points, eps)
    report = matching.to_dict()
    report.update(
        unmatched_source=matching.unmatched_source,
        unmatched_target=matching.unmatched_target,
    )
    pp(report)
    return EXIT_OK


COMMANDS = {
    "bench": do_bench,
    "run": do_run,
    "validate": do_validate,
    "pv": do_pv,
}


def main(arg_list: list[str]) -> int:
    args = parse_args(arg_list)

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)-8s %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    if args.debug:
        logging.getLogger("pvmincq").setLevel(logging.DEBUG)

    try:
        return COMMANDS[args.command](args)
    except PVMinCqError as ex:
        LOG.error("%s failed: %s", args.command, ex)
        return EXIT_PIPELINE_ERROR


def launch_main():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    launch_main()
