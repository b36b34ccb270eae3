"""
Command Handlers
Contains the handler for every toolchain subcommand, the run configuration
and atomic artifact writing.
"""

import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from accelgen import (Governor, enumerate_pareto, frontier_perf_entries, load_knob_space,
                      pruned_pareto, replay_governor)
from desim import compare_static_dynamic, load_env_trace, simulate
from dsl_frontend import compile_file
from errors import EXIT_OK, EXIT_REJECT, InputFileError, MdfgError, MdfgSyntaxError
from mapper import Pins, exhaustive_map, first_fit_map, load_pins, pinned_map
from mdfg import NodeKind, bandwidth_profile, validate_graph
from perf_spec import load_perf, load_platform
from timing_verifier import VerifierConfig, verify

logger = logging.getLogger(__name__)

DEFAULT_HORIZON_MS = 60000.0
DEFAULT_OUTPUT_DIR = "out"


def _env_horizon_ms() -> float:
    raw = os.getenv("MDFG_HORIZON_MS")
    if raw is None:
        return DEFAULT_HORIZON_MS
    try:
        value = float(raw)
    except ValueError:
        raise InputFileError(f"MDFG_HORIZON_MS must be a number, got '{raw}'") from None
    if not math.isfinite(value):
        raise InputFileError(f"MDFG_HORIZON_MS must be finite, got '{raw}'")
    return value


@dataclass
class RunConfig:
    """Resolved command-line invocation; defaults come from the environment."""

    subcommand: str
    program: Optional[Path] = None
    platform: Optional[Path] = None
    perf: Optional[Path] = None
    env: Optional[Path] = None
    mapping: Optional[Path] = None
    knobs: Optional[Path] = None
    horizon_ms: float = field(default_factory=_env_horizon_ms)
    latency_mode: str = "wcet"
    output_dir: Path = field(default_factory=lambda: Path(os.getenv("MDFG_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)))
    margin: float = 0.0
    allow_blocking: bool = False
    exhaustive: bool = False
    format: str = "human"
    histogram_bins: Optional[int] = None
    workers: int = 1
    deadline_ms: Optional[float] = None
    workload: Optional[float] = None
    node: Optional[str] = None
    hysteresis: float = 0.1
    confirm_steps: int = 3
    step_ms: float = 100.0
    phases_ms: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        values = {}
        for name in cls.__dataclass_fields__:
            value = getattr(args, name, None)
            if value is not None:
                values[name] = value
        for name in ("program", "platform", "perf", "env", "mapping", "knobs", "output_dir"):
            if name in values:
                values[name] = Path(values[name])
        return cls(**values)

    def validate(self):
        """Referenced input files must exist before any analysis runs."""
        for name in ("program", "platform", "perf", "env", "mapping", "knobs"):
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise InputFileError(f"{name} file not found: {path}")
        if not 0.0 <= self.margin < 1.0:
            raise InputFileError(f"margin must lie in [0, 1), got {self.margin}")
        if self.horizon_ms < 0:
            raise InputFileError("horizon must be non-negative")


class CommandHandlers:
    """Handles every subcommand of the toolchain."""

    def __init__(self, config: RunConfig):
        self.config = config

    def save_text(self, name: str, text: str) -> Path:
        """Write an artifact atomically into the output directory."""
        directory = self.config.output_dir
        directory.mkdir(parents=True, exist_ok=True)
        target = directory / name
        try:
            with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=directory,
                                             prefix=f".{name}.", delete=False) as f:
                f.write(text)
                temporary = f.name
            os.replace(temporary, target)
        except OSError as e:
            logger.error(f"Error saving {target}: {e}")
            raise InputFileError(f"cannot write {target}: {e}") from e
        logger.info(f"Wrote {target}")
        return target

    def save_json(self, name: str, data) -> Path:
        return self.save_text(name, json.dumps(data, indent=2, ensure_ascii=False) + "\n")

    def save_csv(self, name: str, rows: list) -> Path:
        buffer = io.StringIO()
        csv.writer(buffer, lineterminator="\n").writerows(rows)
        return self.save_text(name, buffer.getvalue())

    def load_program(self):
        return compile_file(self.config.program)

    def load_pins(self) -> Optional[Pins]:
        if self.config.mapping is None:
            return None
        return load_pins(self.config.mapping)

    def build_mapping(self, graph, platform, perf):
        pins = self.load_pins()
        compute = [name for name, node in graph.nodes.items() if node.kind is NodeKind.COMPUTE]
        if pins is not None and all(name in pins.pes for name in compute):
            return pinned_map(graph, platform, perf, pins)
        if self.config.exhaustive:
            return exhaustive_map(graph, platform, perf, pins)
        return first_fit_map(graph, platform, perf, pins)

    def verifier_config(self) -> VerifierConfig:
        return VerifierConfig(margin=self.config.margin, blocking_is_fatal=not self.config.allow_blocking)

    def _analyze(self):
        _, graph, constraints = self.load_program()
        platform = load_platform(self.config.platform)
        perf = load_perf(self.config.perf)
        validation = validate_graph(graph)
        if not validation.ok:
            return graph, constraints, platform, perf, None
        mapping = self.build_mapping(graph, platform, perf)
        return graph, constraints, platform, perf, mapping

    def check_command(self) -> int:
        """parse, lower, validate, map and verify."""
        graph, constraints, platform, perf, mapping = self._analyze()
        if mapping is None:
            report = verify(graph, constraints, platform, perf, None)
        else:
            report = verify(graph, constraints, platform, perf, mapping, self.verifier_config())
            self.save_json("mapping.json", mapping.to_dict())
        self.save_json("report.json", report.to_dict())
        if self.config.format == "json":
            print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
        else:
            print(report.to_table())
        if report.accepted:
            print(f"✅ {self.config.program.name}: Accept")
            return EXIT_OK
        print(f"❌ {self.config.program.name}: Reject")
        return EXIT_REJECT

    def map_command(self) -> int:
        graph, _, platform, perf, mapping = self._analyze()
        if mapping is None:
            print("❌ graph has structural errors; nothing to map")
            return EXIT_REJECT
        self.save_json("mapping.json", mapping.to_dict())
        for node in sorted(mapping.assignment):
            config = mapping.config_of(node)
            suffix = f" ({config})" if config else ""
            print(f"{node:<16} -> {mapping.assignment[node]}{suffix}")
        print(f"📊 total active power: {mapping.objective_value:g} mW")
        return EXIT_OK

    def simulate_command(self) -> int:
        graph, constraints, platform, perf, mapping = self._analyze()
        if mapping is None:
            print("❌ graph has structural errors; nothing to simulate")
            return EXIT_REJECT
        env = load_env_trace(self.config.env) if self.config.env else None
        report = verify(graph, constraints, platform, perf, mapping, self.verifier_config())
        metrics, events = simulate(graph, mapping, perf, env, self.config.horizon_ms,
                                   self.config.latency_mode, phases_ms=self.config.phases_ms)
        deviations = compare_static_dynamic(report, metrics)
        self.save_json("metrics.json", metrics.to_dict())
        self.save_json("deviation.json", deviations.to_dict())
        self.save_text("events.log", events.text())
        if self.config.histogram_bins:
            rows = [("sink", "bin_low_ms", "bin_high_ms", "count")]
            rows.extend((sink, f"{low:.6g}", f"{high:.6g}", count)
                        for sink, low, high, count in metrics.histogram_rows(self.config.histogram_bins))
            self.save_csv("latency_histogram.csv", rows)

        for name in sorted(metrics.nodes):
            stats = metrics.nodes[name]
            spread = ""
            if stats.inst_rate_min_hz is not None:
                spread = f", inst {stats.inst_rate_min_hz:.2f}-{stats.inst_rate_max_hz:.2f} Hz"
            print(f"{name:<16} {stats.achieved_hz:8.2f} Hz achieved, {stats.deadline_misses} miss(es)"
                  f"{spread}")
        for sink, samples in sorted(metrics.sink_latencies.items()):
            if samples:
                print(f"📊 {sink}: max end-to-end latency {max(samples):.3f} ms over {len(samples)} samples")
        for flag in deviations.flags:
            print(f"⚠️ {flag}")
        if deviations.ok:
            print("✅ simulation stayed within every static guarantee")
            return EXIT_OK
        if self.config.latency_mode == "wcet":
            print("❌ static guarantees violated in wcet mode")
            return EXIT_REJECT
        return EXIT_OK

    def pareto_command(self) -> int:
        space, document = load_knob_space(self.config.knobs)
        deadline = self.config.deadline_ms if self.config.deadline_ms is not None \
            else document.get("deadline_ms")
        if deadline is None:
            raise InputFileError("pareto needs --deadline-ms or a 'deadline_ms' in the knob model")
        workload = self.config.workload if self.config.workload is not None \
            else float(document.get("workload_max", 0.0))
        if self.config.exhaustive:
            frontier = enumerate_pareto(space, float(deadline), workload, self.config.workers)
        else:
            frontier = pruned_pareto(space, float(deadline), workload)
        node = self.config.node or document.get("node", "Accelerator")
        entries = frontier_perf_entries(frontier, node, workload, document.get("workload_mean"))
        self.save_csv("frontier.csv", frontier.csv_rows([knob.name for knob in space.knobs]))
        self.save_json("frontier_perf.json", entries.to_dict())
        for point in frontier:
            print(f"{point.latency_ms:10.4f} ms {point.power_mw:10.4f} mW  {point.config_id}")
        print(f"📊 {len(frontier)} frontier point(s); visited {frontier.visited} of "
              f"{frontier.space_size} configs")
        return EXIT_OK

    def bandwidth_command(self) -> int:
        _, graph, _ = self.load_program()
        profile = bandwidth_profile(graph)
        self.save_json("bandwidth.json", profile.to_dict())
        for depth in sorted(profile.per_stage):
            print(f"stage {depth}: {profile.per_stage[depth] / 1e6:12.6f} MB/s")
        print(f"📥 total input:  {profile.total_input / 1e6:.3f} MB/s")
        print(f"📤 total output: {profile.total_output / 1e3:.3f} KB/s")
        if profile.is_funnel():
            print("✅ per-stage volume strictly decreasing")
        else:
            print("⚠️ per-stage volume is not strictly decreasing")
        return EXIT_OK

    def govern_command(self) -> int:
        space, document = load_knob_space(self.config.knobs)
        if self.config.env is None:
            raise InputFileError("govern needs --env")
        deadline = self.config.deadline_ms if self.config.deadline_ms is not None \
            else document.get("deadline_ms")
        if deadline is None:
            raise InputFileError("govern needs --deadline-ms or a 'deadline_ms' in the knob model")
        design = self.config.workload if self.config.workload is not None \
            else float(document.get("design_workload", document.get("workload_max", 0.0)))
        frontier = pruned_pareto(space, float(deadline), design)
        governor = Governor(frontier, float(deadline), self.config.hysteresis, self.config.confirm_steps)
        env = load_env_trace(self.config.env)
        samples = replay_governor(governor, env, self.config.step_ms, self.config.horizon_ms)
        rows = [("time_ms", "workload", "config", "latency_ms", "power_mw", "switched", "safe")]
        rows.extend((f"{s.time_ms:g}", f"{s.workload:g}", s.config_id, f"{s.latency_ms:.6g}",
                     f"{s.power_mw:.6g}", int(s.switched), int(s.safe)) for s in samples)
        self.save_csv("governor.csv", rows)
        print(f"📊 {len(samples)} steps, {governor.switches} switch(es), "
              f"{governor.unsafe_steps} unsafe step(s)")
        if governor.unsafe_steps:
            print("❌ workload exceeded what the fastest configuration can serve")
            return EXIT_REJECT
        print("✅ every step met the deadline")
        return EXIT_OK

    def error_handler(self, error: MdfgError) -> int:
        """Report a toolchain error on stderr and map it to an exit code."""
        if isinstance(error, MdfgSyntaxError):
            filename = str(self.config.program) if self.config.program else "<input>"
            message = error.format(filename)
        else:
            message = f"error: {error.message}"
        logger.error(message)
        print(message, file=sys.stderr)
        return error.exit_code

