"""
Dataflow Simulator
Deterministic discrete-event execution of a mapped graph: time-triggered
firings, per-policy token buffers, non-preemptive FIFO service on every PE
and environment-driven latencies.
"""

import csv
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import EnvTraceError, GraphError, InputFileError, UnboundedFifoError
from mdfg import Mdfg, NodeKind, PolicyKind
from perf_spec import IO_PE, PerfSpec
from timing_verifier import TimingReport, size_buffers

logger = logging.getLogger(__name__)

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

COMPLETION = 0
FIRING = 1

LATENCY_MODES = ("wcet", "model")
RATE_TOLERANCE_HZ = 1e-6
LATENCY_TOLERANCE_MS = 1e-6


@dataclass(frozen=True)
class EnvTrace:
    """Workload over time; step-wise lookup of the last sample at or before t."""

    samples: tuple = ()

    def __post_init__(self):
        samples = tuple((float(t), float(w)) for t, w in self.samples)
        for (t0, _), (t1, _) in zip(samples, samples[1:]):
            if t1 <= t0:
                raise EnvTraceError(f"env trace time must increase strictly ({t0:g} then {t1:g})")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_times", np.array([t for t, _ in samples], dtype=float))
        object.__setattr__(self, "_values", np.array([w for _, w in samples], dtype=float))

    def at(self, t_ms: float) -> Optional[float]:
        """Workload at ``t_ms``; before the first sample the first value holds."""
        if not self.samples:
            return None
        index = int(np.searchsorted(self._times, t_ms, side="right")) - 1
        return float(self._values[max(index, 0)])

    def __len__(self) -> int:
        return len(self.samples)


def load_env_trace(path) -> EnvTrace:
    """Read a ``time_ms,workload`` CSV (header optional)."""
    samples = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            for row in csv.reader(f):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    samples.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    if samples or row[0].strip() != "time_ms":
                        raise EnvTraceError(f"{path}: bad env trace row {row!r}") from None
    except OSError as e:
        logger.error(f"Error loading env trace {path}: {e}")
        raise InputFileError(f"cannot read {path}: {e}") from e
    return EnvTrace(tuple(samples))


@dataclass(frozen=True)
class Token:
    seq: int
    produced_at_ns: int
    origin_ns: Optional[int]

    @property
    def produced_at_ms(self) -> float:
        return self.produced_at_ns / NS_PER_MS

    @property
    def origin_ms(self) -> Optional[float]:
        return None if self.origin_ns is None else self.origin_ns / NS_PER_MS


class EdgeBuffer:
    """Slot-accounted buffer of one edge.

    Tokens read by a running Latest/Window job stay pinned until it completes;
    a Fifo token popped by a job occupies a slot until that job completes.
    """

    def __init__(self, edge, capacity: int):
        self.edge = edge
        self.policy = edge.policy
        self.capacity = capacity
        self.tokens = []
        self.pins = {}
        self.read = set()
        self.in_flight = 0
        self.ever_held = False
        self.produced = 0
        self.consumed = 0
        self.dropped = 0
        self.overflows = 0
        self.high_water = 0

    def occupancy(self) -> int:
        return len(self.tokens) + self.in_flight

    def push(self, token: Token) -> str:
        self.produced += 1
        if self.occupancy() < self.capacity:
            self._store(token)
            return "stored"
        if self.policy.kind is not PolicyKind.FIFO:
            for index, old in enumerate(self.tokens):
                if self.pins.get(old.seq, 0) == 0:
                    del self.tokens[index]
                    if old.seq in self.read:
                        self.read.discard(old.seq)
                        self.consumed += 1
                    else:
                        self.dropped += 1
                    self._store(token)
                    return "evicted"
        self.overflows += 1
        self.dropped += 1
        return "overflow"

    def _store(self, token: Token):
        self.tokens.append(token)
        self.ever_held = True
        self.high_water = max(self.high_water, self.occupancy())

    def is_cold(self) -> bool:
        if not self.ever_held:
            return True
        return self.policy.kind is PolicyKind.WINDOW and len(self.tokens) < self.policy.k

    def take(self) -> list:
        """Tokens a starting job reads, pinned or popped per policy."""
        if self.policy.kind is PolicyKind.FIFO:
            if not self.tokens:
                return []
            token = self.tokens.pop(0)
            self.in_flight += 1
            self.consumed += 1
            return [token]
        chosen = self.tokens[-self.policy.k:]
        for token in chosen:
            self.pins[token.seq] = self.pins.get(token.seq, 0) + 1
            self.read.add(token.seq)
        return chosen

    def discard(self):
        """A skipped firing still removes the Fifo token it would have popped."""
        if self.policy.kind is PolicyKind.FIFO and self.tokens:
            self.tokens.pop(0)
            self.dropped += 1

    def release(self, tokens: list):
        if self.policy.kind is PolicyKind.FIFO:
            self.in_flight -= len(tokens)
            return
        for token in tokens:
            count = self.pins.get(token.seq, 0) - 1
            if count > 0:
                self.pins[token.seq] = count
            else:
                self.pins.pop(token.seq, None)


class EventLog:
    """Ordered ``t_ns kind node detail`` records of one run."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records = []

    def record(self, t_ns: int, kind: str, node: str, detail: str = "-"):
        if self.enabled:
            self.records.append((t_ns, kind, node, detail))

    def times(self, kind: str, node: str) -> list:
        return [t for t, k, n, _ in self.records if k == kind and n == node]

    def lines(self) -> list:
        return [f"{t} {kind} {node} {detail}" for t, kind, node, detail in self.records]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class NodeMetrics:
    firings: int = 0
    skipped_cold: int = 0
    skipped_overrun: int = 0
    skipped_switch: int = 0
    jobs_released: int = 0
    jobs_completed: int = 0
    deadline_misses: int = 0
    achieved_hz: float = 0.0
    active_ms: float = 0.0
    inst_rate_min_hz: Optional[float] = None
    inst_rate_max_hz: Optional[float] = None


@dataclass
class EdgeMetrics:
    slots: int
    tokens_produced: int = 0
    tokens_consumed: int = 0
    tokens_dropped: int = 0
    tokens_resident: int = 0
    buffer_high_water: int = 0
    overflows: int = 0


@dataclass
class SimMetrics:
    horizon_ms: float
    latency_mode: str
    nodes: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)
    sink_latencies: dict = field(default_factory=dict)

    def max_latency(self, sink: str) -> Optional[float]:
        samples = self.sink_latencies.get(sink, [])
        return max(samples) if samples else None

    @property
    def total_deadline_misses(self) -> int:
        return sum(m.deadline_misses for m in self.nodes.values())

    @property
    def total_overflows(self) -> int:
        return sum(m.overflows for m in self.edges.values())

    def to_dict(self) -> dict:
        sinks = {}
        for sink, samples in sorted(self.sink_latencies.items()):
            if samples:
                values = np.asarray(samples, dtype=float)
                sinks[sink] = {"count": int(values.size), "min_ms": float(values.min()),
                               "mean_ms": float(values.mean()), "p99_ms": float(np.percentile(values, 99)),
                               "max_ms": float(values.max())}
            else:
                sinks[sink] = {"count": 0}
        return {
            "horizon_ms": self.horizon_ms,
            "latency_mode": self.latency_mode,
            "nodes": {name: vars(m).copy() for name, m in sorted(self.nodes.items())},
            "edges": {label: vars(m).copy() for label, m in sorted(self.edges.items())},
            "sinks": sinks,
        }

    def histogram_rows(self, bins: int = 20) -> list:
        """(sink, bin_low_ms, bin_high_ms, count) rows for every sink with samples."""
        rows = []
        for sink, samples in sorted(self.sink_latencies.items()):
            if not samples:
                continue
            counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
            for count, low, high in zip(counts, edges[:-1], edges[1:]):
                rows.append((sink, float(low), float(high), int(count)))
        return rows


@dataclass
class Job:
    node: str
    instant: int
    seq: int
    release_ns: int
    deadline_ns: int
    reads: list = field(default_factory=list)
    origin_ns: Optional[int] = None


@dataclass
class SimConfig:
    """Run parameters beyond graph, mapping and specs.

    buffers: slots per EdgeSpec; defaults to the verifier's allocation.
    governors: node -> object with observe(workload) -> bool,
        latency_at(workload) -> ms and switch_cost_firings.
    """

    horizon_ms: float = 60000.0
    latency_mode: str = "wcet"
    buffers: Optional[dict] = None
    phases_ms: dict = field(default_factory=dict)
    governors: dict = field(default_factory=dict)
    record_events: bool = True


def default_buffers(graph: Mdfg) -> dict:
    """Verifier allocation; unbounded Fifo edges still get their formula size."""
    try:
        return {edge: alloc.slots for edge, alloc in size_buffers(graph).items()}
    except UnboundedFifoError as e:
        slots = {edge: alloc.slots for edge, alloc in e.partial.items()}
        for edge in e.edges:
            producer = graph.node(edge.producer)
            consumer = graph.node(edge.consumer)
            slots[edge] = math.ceil(producer.rate_hz / consumer.rate_hz) + 1
        return slots


class Simulator:
    """One simulation run; call :meth:`run` once."""

    def __init__(self, graph: Mdfg, mapping, perf: PerfSpec, env: Optional[EnvTrace],
                 config: SimConfig):
        if config.latency_mode not in LATENCY_MODES:
            raise GraphError(f"unknown latency mode '{config.latency_mode}'")
        self.graph = graph
        self.mapping = mapping
        self.env = env or EnvTrace()
        self.config = config
        self.horizon_ns = int(round(config.horizon_ms * NS_PER_MS))
        self.log = EventLog(config.record_events)

        slots = config.buffers if config.buffers is not None else default_buffers(graph)
        self.buffers = {edge: EdgeBuffer(edge, slots[edge]) for edge in graph.edges}
        self.inputs = {name: [self.buffers[e] for e in graph.in_edges(name)] for name in graph.nodes}
        self.outputs = {name: [self.buffers[e] for e in graph.out_edges(name)] for name in graph.nodes}
        self.sinks = set(graph.outputs or graph.sinks())

        self.entries = {}
        for name, node in graph.nodes.items():
            if not node.is_io:
                self.entries[name] = perf.entry(name, mapping.class_of(name), mapping.config_of(name))
        self.pe_of = {name: (IO_PE if node.is_io else mapping.pe_of(name))
                      for name, node in graph.nodes.items()}

        self.phase_ns = {name: int(round(config.phases_ms.get(name, 0.0) * NS_PER_MS))
                         for name in graph.nodes}
        self.metrics = {name: NodeMetrics() for name in graph.nodes}
        self.latencies = {sink: [] for sink in sorted(self.sinks)}
        self.completions = {name: [] for name in graph.nodes}
        self.first_release = {}
        self.outstanding = {name: False for name in graph.nodes}
        self.deferred = {name: None for name in graph.nodes}
        self.pending_switch = {name: 0 for name in graph.nodes}
        self.token_seq = {name: 0 for name in graph.nodes}
        self.queues = {}
        self.busy = {}
        self.heap = []
        self.seq = 0

    def instant_ns(self, name: str, k: int) -> int:
        rate = self.graph.nodes[name].rate_hz
        return int(round(k * NS_PER_S / rate)) + self.phase_ns[name]

    def _push(self, t_ns: int, priority: int, name: str, payload):
        self.seq += 1
        heapq.heappush(self.heap, (t_ns, priority, name, self.seq, payload))

    def _workload(self, t_ns: int, name: str) -> float:
        value = self.env.at(t_ns / NS_PER_MS)
        if value is None:
            return self.entries[name].model.mean_workload
        return value

    def _latency_ns(self, name: str, start_ns: int) -> int:
        if self.graph.nodes[name].is_io:
            return 0
        governor = self.config.governors.get(name)
        if governor is not None:
            return int(round(governor.latency_at(self._workload(start_ns, name)) * NS_PER_MS))
        entry = self.entries[name]
        if self.config.latency_mode == "wcet":
            return int(round(entry.wcet_ms * NS_PER_MS))
        return int(round(entry.model.latency_at(self._workload(start_ns, name)) * NS_PER_MS))

    def run(self) -> tuple:
        for name in sorted(self.graph.nodes):
            first = self.instant_ns(name, 0)
            if first < self.horizon_ns:
                self._push(first, FIRING, name, 0)

        while self.heap:
            t_ns, priority, name, _, payload = heapq.heappop(self.heap)
            if t_ns >= self.horizon_ns:
                break
            if priority == COMPLETION:
                self._complete(t_ns, payload)
            else:
                self._fire(t_ns, name, payload)

        metrics = self._collect()
        logger.info(f"Simulation finished: {self.config.horizon_ms:g} ms, "
                    f"{metrics.total_deadline_misses} deadline miss(es), "
                    f"{metrics.total_overflows} overflow(s)")
        return metrics, self.log

    def _fire(self, t_ns: int, name: str, k: int):
        stats = self.metrics[name]
        stats.firings += 1
        self.log.record(t_ns, "fire", name, f"k={k}")
        following = self.instant_ns(name, k + 1)
        if following < self.horizon_ns:
            self._push(following, FIRING, name, k + 1)

        governor = self.config.governors.get(name)
        if governor is not None and governor.observe(self._workload(t_ns, name)):
            self.pending_switch[name] = governor.switch_cost_firings
            self.log.record(t_ns, "switch", name, f"k={k}")
        if self.pending_switch[name] > 0:
            self.pending_switch[name] -= 1
            stats.skipped_switch += 1
            return

        if self.outstanding[name]:
            if self.deferred[name] is not None:
                stats.skipped_overrun += 1
                self._discard_inputs(name)
                self.log.record(t_ns, "skip", name, f"k={self.deferred[name]}")
            self.deferred[name] = k
            self.log.record(t_ns, "defer", name, f"k={k}")
            return
        self._release(t_ns, name, k)

    def _release(self, t_ns: int, name: str, k: int):
        stats = self.metrics[name]
        if any(buffer.is_cold() for buffer in self.inputs[name]):
            stats.skipped_cold += 1
            self._discard_inputs(name)
            self.log.record(t_ns, "cold", name, f"k={k}")
            return
        self.seq += 1
        job = Job(name, k, self.seq, t_ns, self.instant_ns(name, k + 1))
        stats.jobs_released += 1
        self.first_release.setdefault(name, t_ns)
        self.outstanding[name] = True
        pe = self.pe_of[name]
        if pe == IO_PE:
            self._start(t_ns, job)
            return
        self.queues.setdefault(pe, []).append(job)
        if self.busy.get(pe) is None:
            self._start_next(t_ns, pe)

    def _discard_inputs(self, name: str):
        for buffer in self.inputs[name]:
            buffer.discard()

    def _start_next(self, t_ns: int, pe: str):
        queue = self.queues.get(pe)
        if queue:
            job = queue.pop(0)
            self.busy[pe] = job
            self._start(t_ns, job)
        else:
            self.busy[pe] = None

    def _start(self, t_ns: int, job: Job):
        origins = []
        for buffer in self.inputs[job.node]:
            tokens = buffer.take()
            job.reads.append((buffer, tokens))
            origins.extend(token.origin_ns for token in tokens if token.origin_ns is not None)
        if self.graph.nodes[job.node].kind is NodeKind.SENSOR:
            job.origin_ns = job.release_ns
        elif origins:
            job.origin_ns = min(origins)
        latency = self._latency_ns(job.node, t_ns)
        self.log.record(t_ns, "start", job.node, f"k={job.instant} pe={self.pe_of[job.node]} lat_ns={latency}")
        self._push(t_ns + latency, COMPLETION, job.node, job)

    def _complete(self, t_ns: int, job: Job):
        name = job.node
        stats = self.metrics[name]
        for buffer, tokens in job.reads:
            buffer.release(tokens)

        for buffer in self.outputs[name]:
            token = Token(self.token_seq[name], t_ns, job.origin_ns)
            if buffer.push(token) == "overflow":
                self.log.record(t_ns, "overflow", name, buffer.edge.label)
        self.token_seq[name] += 1

        stats.jobs_completed += 1
        self.completions[name].append(t_ns)
        detail = f"k={job.instant}"
        if t_ns > job.deadline_ns:
            stats.deadline_misses += 1
            detail += " miss"
        self.log.record(t_ns, "done", name, detail)
        if name in self.sinks and job.origin_ns is not None:
            self.latencies[name].append((t_ns - job.origin_ns) / NS_PER_MS)

        self.outstanding[name] = False
        pe = self.pe_of[name]
        if self.deferred[name] is not None:
            k = self.deferred[name]
            self.deferred[name] = None
            self._release(t_ns, name, k)
        if pe != IO_PE:
            self._start_next(t_ns, pe)

    def _collect(self) -> SimMetrics:
        horizon_ms = self.horizon_ns / NS_PER_MS
        for name, stats in self.metrics.items():
            if name in self.first_release:
                stats.active_ms = horizon_ms - self.first_release[name] / NS_PER_MS
                if stats.active_ms > 0:
                    stats.achieved_hz = stats.jobs_released * 1000.0 / stats.active_ms
            gaps = np.diff(np.asarray(self.completions[name], dtype=np.int64))
            gaps = gaps[gaps > 0]
            if gaps.size:
                stats.inst_rate_min_hz = float(NS_PER_S / gaps.max())
                stats.inst_rate_max_hz = float(NS_PER_S / gaps.min())
        edges = {}
        for edge, buffer in self.buffers.items():
            edges[edge.label] = EdgeMetrics(buffer.capacity, buffer.produced, buffer.consumed,
                                            buffer.dropped, len(buffer.tokens), buffer.high_water,
                                            buffer.overflows)
        return SimMetrics(horizon_ms, self.config.latency_mode, self.metrics, edges, self.latencies)


def simulate(graph: Mdfg, mapping, perf: PerfSpec, env: Optional[EnvTrace] = None,
             horizon_ms: float = 60000.0, latency_mode: str = "wcet", **options) -> tuple:
    """Run one deterministic simulation; returns (SimMetrics, EventLog).

    Raises:
        MissingSpecError: a compute node has no entry for its mapped PE class.
    """
    config = SimConfig(horizon_ms=horizon_ms, latency_mode=latency_mode, **options)
    return Simulator(graph, mapping, perf, env, config).run()


@dataclass(frozen=True)
class Deviation:
    subject: str
    kind: str
    observed: float
    bound: float

    def __str__(self) -> str:
        return f"{self.kind} {self.subject}: observed {self.observed:.6g} vs {self.bound:.6g}"


@dataclass
class DeviationReport:
    per_node: dict = field(default_factory=dict)
    per_edge: dict = field(default_factory=dict)
    per_sink: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flags

    def flagged(self, kind: str) -> list:
        return [flag.subject for flag in self.flags if flag.kind == kind]

    def to_dict(self) -> dict:
        return {
            "per_node": self.per_node,
            "per_edge": self.per_edge,
            "per_sink": self.per_sink,
            "flags": [{"subject": f.subject, "kind": f.kind, "observed": f.observed, "bound": f.bound}
                      for f in self.flags],
        }


def compare_static_dynamic(report: TimingReport, metrics: SimMetrics) -> DeviationReport:
    """Flag every simulator observation that exceeds a static guarantee.

    Raises:
        GraphError: the report and the metrics describe different graphs.
    """
    static_nodes = set(report.node_timing)
    static_edges = {edge.label for edge in report.edge_buffers}
    if static_nodes and static_nodes != set(metrics.nodes):
        raise GraphError("timing report and simulation metrics cover different nodes")
    if static_edges and not static_edges <= set(metrics.edges):
        raise GraphError("timing report and simulation metrics cover different edges")

    deviations = DeviationReport()
    for name in sorted(metrics.nodes):
        stats = metrics.nodes[name]
        if stats.deadline_misses:
            deviations.flags.append(Deviation(name, "deadline_miss", stats.deadline_misses, 0))
        if stats.skipped_overrun:
            deviations.flags.append(Deviation(name, "overrun", stats.skipped_overrun, 0))
        timing = report.node_timing.get(name)
        if timing is None:
            continue
        declared = 1000.0 / timing.period_ms
        entry = {"declared_hz": declared, "achieved_hz": stats.achieved_hz, "deviation_hz": None}
        if stats.active_ms > 0:
            deviation = abs(stats.achieved_hz - declared)
            entry["deviation_hz"] = deviation
            allowed = 1000.0 / stats.active_ms + RATE_TOLERANCE_HZ
            if deviation > allowed:
                deviations.flags.append(Deviation(name, "rate", stats.achieved_hz, declared))
        deviations.per_node[name] = entry

    allocated = {edge.label: alloc.slots for edge, alloc in report.edge_buffers.items()}
    for label in sorted(metrics.edges):
        stats = metrics.edges[label]
        slots = allocated.get(label, stats.slots)
        deviations.per_edge[label] = {"high_water": stats.buffer_high_water, "slots": slots,
                                      "overflows": stats.overflows}
        if stats.overflows:
            deviations.flags.append(Deviation(label, "overflow", stats.overflows, 0))
        if stats.buffer_high_water > slots:
            deviations.flags.append(Deviation(label, "buffer", stats.buffer_high_water, slots))

    for sink, bound in sorted(report.path_latencies.items()):
        observed = metrics.max_latency(sink)
        deviations.per_sink[sink] = {"max_observed_ms": observed, "bound_ms": bound}
        if observed is not None and observed > bound + LATENCY_TOLERANCE_MS:
            deviations.flags.append(Deviation(sink, "latency", observed, bound))

    if deviations.flags:
        logger.warning(f"Simulation exceeded {len(deviations.flags)} static guarantee(s)")
    return deviations
