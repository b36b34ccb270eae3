#!/usr/bin/env python3
"""
Macro-Dataflow Toolchain
Main entry point: parse, verify, map, simulate and explore timing-safe
macro-dataflow programs from the command line.
"""

import argparse
import logging
import os
import sys

from command_handlers import CommandHandlers, RunConfig
from errors import EXIT_USAGE, MdfgError

# Configure logging
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=os.getenv('MDFG_LOG_LEVEL', 'WARNING').upper()
)
logger = logging.getLogger(__name__)


class UsageError(MdfgError):
    """Bad command line."""


class CliParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the toolchain reserves 2 for Reject."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _phase(text: str) -> tuple:
    name, _, value = text.partition("=")
    try:
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NODE=MS, got '{text}'") from None


def build_parser() -> CliParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", dest="output_dir", help="directory for artifacts (env MDFG_OUTPUT_DIR)")
    common.add_argument("--format", choices=("human", "json"), default="human")

    parser = CliParser(prog="mdfg", description="Timing-safe macro-dataflow toolchain")
    commands = parser.add_subparsers(dest="subcommand", parser_class=CliParser)

    def with_program(sub):
        sub.add_argument("program", help=".mdfg program")

    def with_platform(sub):
        sub.add_argument("--platform", required=True, help="platform JSON")
        sub.add_argument("--perf", required=True, help="performance specification JSON")
        sub.add_argument("--mapping", help="pin file fixing part or all of the mapping")
        sub.add_argument("--exhaustive", action="store_true", help="power-optimal exhaustive mapping")
        sub.add_argument("--margin", type=float, default=0.0, help="utilization margin in [0, 1)")
        sub.add_argument("--allow-blocking", dest="allow_blocking", action="store_true",
                         help="downgrade response-bound failures to warnings")

    check = commands.add_parser("check", parents=[common], help="verify timing of a program")
    with_program(check)
    with_platform(check)

    mapping = commands.add_parser("map", parents=[common], help="map compute nodes to processing elements")
    with_program(mapping)
    with_platform(mapping)

    simulate = commands.add_parser("simulate", parents=[common], help="discrete-event simulation")
    with_program(simulate)
    with_platform(simulate)
    simulate.add_argument("--env", help="env trace CSV (time_ms,workload)")
    simulate.add_argument("--horizon-ms", dest="horizon_ms", type=float,
                          help="simulated time (env MDFG_HORIZON_MS, default 60000)")
    simulate.add_argument("--mode", dest="latency_mode", choices=("wcet", "model"), default="wcet")
    simulate.add_argument("--histogram", dest="histogram_bins", type=int, metavar="BINS",
                          help="write per-sink latency histogram CSV")
    simulate.add_argument("--phase", dest="phase_items", type=_phase, action="append", default=[],
                          metavar="NODE=MS", help="per-node timer phase offset")

    pareto = commands.add_parser("pareto", parents=[common], help="latency-vs-power frontier of a knob model")
    pareto.add_argument("knobs", help="knob model JSON")
    pareto.add_argument("--deadline-ms", dest="deadline_ms", type=float)
    pareto.add_argument("--workload", type=float, help="workload units the frontier is evaluated at")
    pareto.add_argument("--node", help="node name for the emitted perf entries")
    pareto.add_argument("--exhaustive", action="store_true", help="enumerate every configuration")
    pareto.add_argument("--workers", type=int, default=1)

    bandwidth = commands.add_parser("bandwidth", parents=[common], help="per-edge and per-stage data volume")
    with_program(bandwidth)

    govern = commands.add_parser("govern", parents=[common], help="replay an env trace through the governor")
    govern.add_argument("knobs", help="knob model JSON")
    govern.add_argument("--env", required=True, help="env trace CSV")
    govern.add_argument("--deadline-ms", dest="deadline_ms", type=float)
    govern.add_argument("--workload", type=float, help="design workload of the frontier")
    govern.add_argument("--hysteresis", type=float, default=0.1)
    govern.add_argument("--confirm-steps", dest="confirm_steps", type=int, default=3)
    govern.add_argument("--step-ms", dest="step_ms", type=float, default=100.0)
    govern.add_argument("--horizon-ms", dest="horizon_ms", type=float)
    return parser


def run(argv=None) -> int:
    """Run one pipeline invocation and return its exit code."""
    parser = build_parser()
    handlers = None
    try:
        args = parser.parse_args(argv)
        if not args.subcommand:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        args.phases_ms = dict(getattr(args, "phase_items", []))
        config = RunConfig.from_args(args)
        handlers = CommandHandlers(config)
        config.validate()

        routes = {
            "check": handlers.check_command,
            "map": handlers.map_command,
            "simulate": handlers.simulate_command,
            "pareto": handlers.pareto_command,
            "bandwidth": handlers.bandwidth_command,
            "govern": handlers.govern_command,
        }
        logger.info(f"Running {config.subcommand}")
        return routes[config.subcommand]()
    except MdfgError as e:
        if handlers is None:
            print(f"error: {e.message}", file=sys.stderr)
            return e.exit_code
        return handlers.error_handler(e)


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
