"""
Timing Verifier
Checks declared firing frequencies against the performance specifications of
the mapped processing elements, sizes edge buffers and bounds end-to-end
reaction latency. Rejects programs whose timing cannot be guaranteed.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from errors import MdfgError, MissingSpecError, UnboundedFifoError
from mdfg import Mdfg, NodeKind, PolicyKind, ViolationCategory, topo_order, validate_graph
from perf_spec import IO_PE, PerfSpec, Platform

logger = logging.getLogger(__name__)

LATEST_SLOTS = 2


def _fmt(value: float) -> str:
    return f"{value:.6g}"


class VerdictStatus(str, Enum):
    PASS = "Pass"
    WARN = "Warn"
    FAIL = "Fail"


@dataclass
class Verdict:
    status: VerdictStatus = VerdictStatus.PASS
    reasons: list = field(default_factory=list)

    def fail(self, reason: str):
        self.status = VerdictStatus.FAIL
        self.reasons.append(reason)

    def warn(self, reason: str):
        if self.status is VerdictStatus.PASS:
            self.status = VerdictStatus.WARN
        self.reasons.append(reason)

    def __str__(self) -> str:
        if not self.reasons:
            return self.status.value
        return f"{self.status.value}({'; '.join(self.reasons)})"


@dataclass(frozen=True)
class VerifierConfig:
    """margin: utilization must stay at or below 1 - margin.

    blocking_is_fatal: a node whose non-preemptive response bound exceeds its
    period fails instead of only warning.
    """

    margin: float = 0.0
    blocking_is_fatal: bool = True


@dataclass(frozen=True)
class NodeTiming:
    pe: str
    period_ms: float
    wcet_ms: float
    acet_ms: float
    response_ms: float


@dataclass(frozen=True)
class BufferAlloc:
    slots: int
    bytes: int


@dataclass
class TimingReport:
    node_verdicts: dict = field(default_factory=dict)
    pe_utilization: dict = field(default_factory=dict)
    edge_buffers: dict = field(default_factory=dict)
    path_latencies: dict = field(default_factory=dict)
    node_timing: dict = field(default_factory=dict)
    constraint_checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    reasons: list = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return not self.reasons

    @property
    def overall(self) -> str:
        return "Accept" if self.accepted else "Reject"

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "reasons": list(self.reasons),
            "warnings": list(self.warnings),
            "node_verdicts": {name: {"status": verdict.status.value, "reasons": list(verdict.reasons)}
                              for name, verdict in sorted(self.node_verdicts.items())},
            "node_timing": {name: {"pe": t.pe, "period_ms": t.period_ms, "wcet_ms": t.wcet_ms,
                                   "acet_ms": t.acet_ms, "response_ms": t.response_ms}
                            for name, t in sorted(self.node_timing.items())},
            "pe_utilization": dict(sorted(self.pe_utilization.items())),
            "edge_buffers": {edge.label: {"slots": alloc.slots, "bytes": alloc.bytes}
                             for edge, alloc in sorted(self.edge_buffers.items(),
                                                       key=lambda item: item[0].label)},
            "path_latencies_ms": dict(sorted(self.path_latencies.items())),
            "constraints": list(self.constraint_checks),
        }

    def to_table(self) -> str:
        """Human-readable view of the report."""
        icon = {VerdictStatus.PASS: "✅", VerdictStatus.WARN: "⚠️", VerdictStatus.FAIL: "❌"}
        lines = [f"{'node':<16} {'pe':<8} {'period':>9} {'wcet':>9} {'acet':>9} {'resp':>9}  verdict"]
        for name in sorted(self.node_verdicts):
            verdict = self.node_verdicts[name]
            timing = self.node_timing.get(name)
            if timing is None:
                lines.append(f"{name:<16} {'-':<8} {'':>9} {'':>9} {'':>9} {'':>9}  "
                             f"{icon[verdict.status]} {verdict}")
                continue
            lines.append(f"{name:<16} {timing.pe:<8} {_fmt(timing.period_ms):>9} "
                         f"{_fmt(timing.wcet_ms):>9} {_fmt(timing.acet_ms):>9} "
                         f"{_fmt(timing.response_ms):>9}  {icon[verdict.status]} {verdict}")
        if self.pe_utilization:
            lines.append("")
            for pe, value in sorted(self.pe_utilization.items()):
                lines.append(f"utilization {pe:<8} {value:.3f}")
        if self.edge_buffers:
            lines.append("")
            for edge, alloc in sorted(self.edge_buffers.items(), key=lambda item: item[0].label):
                lines.append(f"buffer {edge.label}: {alloc.slots} slots, {alloc.bytes} bytes")
        if self.path_latencies:
            lines.append("")
            for sink, bound in sorted(self.path_latencies.items()):
                lines.append(f"reaction bound {sink}: {_fmt(bound)} ms")
        for check in self.constraint_checks:
            mark = "✅" if check["satisfied"] else "❌"
            lines.append(f"{mark} {check['node']}: {check['constraint']}")
        for warning in self.warnings:
            lines.append(f"⚠️ {warning}")
        for reason in self.reasons:
            lines.append(f"❌ {reason}")
        lines.append(f"overall: {self.overall}")
        return "\n".join(lines)


def _compute_nodes(graph: Mdfg) -> list:
    return sorted(name for name, node in graph.nodes.items() if node.kind is NodeKind.COMPUTE)


def check_utilization(graph: Mdfg, mapping, perf: PerfSpec) -> dict:
    """Utilization of every PE: sum of wcet x rate / 1000 over its nodes.

    Raises:
        MissingSpecError: a mapped node has no entry for its PE class.
    """
    utilization = defaultdict(float)
    for pe in getattr(mapping, "pe_classes", {}):
        utilization[pe] += 0.0
    for name, node in sorted(graph.nodes.items()):
        if node.is_io:
            utilization[IO_PE] += 0.0
            continue
        entry = perf.entry(name, mapping.class_of(name), mapping.config_of(name))
        utilization[mapping.pe_of(name)] += entry.utilization(node.rate_hz)
    return dict(utilization)


def node_timing(graph: Mdfg, mapping, perf: PerfSpec) -> dict:
    """Per-node wcet/acet and the non-preemptive FIFO response bound.

    A node's response bound is the sum of the wcets of every node on its PE:
    at most one job of each co-mapped node can be ahead of it in the queue.
    """
    wcets = {}
    acets = {}
    for name in _compute_nodes(graph):
        entry = perf.entry(name, mapping.class_of(name), mapping.config_of(name))
        wcets[name] = entry.wcet_ms
        acets[name] = entry.acet_ms
    load = defaultdict(float)
    for name, wcet in wcets.items():
        load[mapping.pe_of(name)] += wcet
    timing = {}
    for name, node in graph.nodes.items():
        if node.is_io:
            timing[name] = NodeTiming(IO_PE, node.period_ms, 0.0, 0.0, 0.0)
        else:
            pe = mapping.pe_of(name)
            timing[name] = NodeTiming(pe, node.period_ms, wcets[name], acets[name], load[pe])
    return timing


def size_buffers(graph: Mdfg) -> dict:
    """Slots and bytes per edge.

    Latest double-buffers, Window(k) keeps k+1 and Fifo keeps
    ceil(producer rate / consumer rate) + 1.

    Raises:
        UnboundedFifoError: Fifo edges whose producer is faster than the consumer;
            carries the allocation of every other edge.
    """
    buffers = {}
    unbounded = []
    for edge in graph.edges:
        producer = graph.node(edge.producer)
        consumer = graph.node(edge.consumer)
        if edge.policy.kind is PolicyKind.LATEST:
            slots = LATEST_SLOTS
        elif edge.policy.kind is PolicyKind.WINDOW:
            slots = edge.policy.k + 1
        else:
            if producer.rate_hz > consumer.rate_hz:
                unbounded.append(edge)
                continue
            slots = math.ceil(producer.rate_hz / consumer.rate_hz) + 1
        buffers[edge] = BufferAlloc(slots, slots * producer.token_bytes)
    if unbounded:
        raise UnboundedFifoError(unbounded, buffers)
    return buffers


def path_reaction_latency(graph: Mdfg, perf: PerfSpec, mapping, timing: Optional[dict] = None) -> dict:
    """Worst-case sensor-to-sink reaction latency for every graph output.

    Along a path each node contributes its period plus its response bound;
    a Window(k) edge adds k-1 producer periods and a Fifo edge adds one
    consumer period plus response bound per slot of backlog.
    """
    if timing is None:
        timing = node_timing(graph, mapping, perf)
    buffers = None
    bound = {}
    for name in topo_order(graph):
        own = timing[name].period_ms + timing[name].response_ms
        upstream = 0.0
        for edge in graph.in_edges(name):
            extra = 0.0
            if edge.policy.kind is PolicyKind.WINDOW:
                producer = timing[edge.producer]
                extra = (edge.policy.k - 1) * (producer.period_ms + producer.response_ms)
            elif edge.policy.kind is PolicyKind.FIFO:
                if buffers is None:
                    try:
                        buffers = size_buffers(graph)
                    except UnboundedFifoError as e:
                        buffers = e.partial
                slots = buffers[edge].slots if edge in buffers else LATEST_SLOTS
                extra = slots * own
            upstream = max(upstream, bound[edge.producer] + extra)
        bound[name] = own + upstream
    sinks = graph.outputs or tuple(graph.sinks())
    return {sink: bound[sink] for sink in sinks}


def _check_nodes(graph: Mdfg, timing: dict, utilization: dict, config: VerifierConfig) -> dict:
    limit = 1.0 - config.margin
    verdicts = {name: Verdict() for name in sorted(graph.nodes)}
    by_pe = defaultdict(list)
    for name, node in graph.nodes.items():
        if not node.is_io:
            by_pe[timing[name].pe].append(name)

    for name in _compute_nodes(graph):
        t = timing[name]
        verdict = verdicts[name]
        if t.wcet_ms > t.period_ms:
            verdict.fail(f"wcet {_fmt(t.wcet_ms)} ms > period {_fmt(t.period_ms)} ms")
        if utilization[t.pe] > limit:
            verdict.fail(f"{t.pe} utilization {utilization[t.pe]:.3f} > {limit:.3f}")
        if t.response_ms > t.period_ms and t.wcet_ms <= t.period_ms:
            message = (f"response bound {_fmt(t.response_ms)} ms on {t.pe} > "
                       f"period {_fmt(t.period_ms)} ms")
            if config.blocking_is_fatal:
                verdict.fail(message)
            else:
                verdict.warn(message)
        peers = [peer for peer in by_pe[t.pe] if peer != name]
        if peers:
            blocker = max(peers, key=lambda peer: (timing[peer].wcet_ms, peer))
            if timing[blocker].wcet_ms > t.period_ms:
                verdict.warn(f"blocked by {blocker} (wcet {_fmt(timing[blocker].wcet_ms)} ms "
                             f"> period {_fmt(t.period_ms)} ms)")

    for edge in graph.edges:
        if edge.policy.kind is PolicyKind.FIFO:
            continue
        producer = graph.node(edge.producer)
        consumer = graph.node(edge.consumer)
        if consumer.rate_hz > producer.rate_hz:
            verdicts[edge.consumer].warn(
                f"fires at {_fmt(consumer.rate_hz)} Hz, faster than {edge.producer} at "
                f"{_fmt(producer.rate_hz)} Hz; stale tokens are re-read")
    return verdicts


def verify(graph: Mdfg, constraints, platform: Platform, perf: PerfSpec, mapping,
           config: Optional[VerifierConfig] = None) -> TimingReport:
    """Compose validation, utilization, buffer sizing and reaction bounds.

    Never raises for analysis problems; they become Reject reasons.
    """
    config = config or VerifierConfig()
    report = TimingReport()

    validation = validate_graph(graph)
    report.warnings.extend(str(violation) for violation in validation.warnings)
    structural = [str(violation) for violation in validation.errors]
    # validation only warns about these
    structural += [f"{v.category.value}: {v.subject}: {v.message}"
                   for v in validation.of(ViolationCategory.DISCONNECTED)]
    if structural:
        report.reasons.extend(structural)
        logger.info(f"Verification rejected {len(structural)} structural violation(s)")
        return report

    if constraints is None or len(constraints) == 0:
        report.warnings.append("NoTimingConstraints: no timing constraint declared")

    known_pes = {pe.id for pe in platform.pes} | {IO_PE}
    for name in sorted(graph.nodes):
        try:
            pe = mapping.pe_of(name)
        except MdfgError as e:
            report.reasons.append(str(e))
            continue
        if pe not in known_pes:
            report.reasons.append(f"{name} is mapped to unknown PE '{pe}'")
    if report.reasons:
        return report

    missing = []
    for name in _compute_nodes(graph):
        try:
            perf.entry(name, mapping.class_of(name), mapping.config_of(name))
        except MissingSpecError as e:
            missing.append(e)
    if missing:
        report.reasons.extend(e.message for e in missing)
        return report

    report.node_timing = node_timing(graph, mapping, perf)
    report.pe_utilization = check_utilization(graph, mapping, perf)
    report.node_verdicts = _check_nodes(graph, report.node_timing, report.pe_utilization, config)

    try:
        report.edge_buffers = size_buffers(graph)
    except UnboundedFifoError as e:
        report.edge_buffers = e.partial
        report.reasons.append(e.message)

    report.path_latencies = path_reaction_latency(graph, perf, mapping, report.node_timing)

    for name, verdict in report.node_verdicts.items():
        if verdict.status is VerdictStatus.FAIL:
            report.reasons.append(f"Fail({name}: {'; '.join(verdict.reasons)})")
        elif verdict.status is VerdictStatus.WARN:
            report.warnings.append(f"{name}: {'; '.join(verdict.reasons)}")

    if constraints is not None:
        for name, constraint in constraints:
            if name not in report.node_verdicts:
                continue
            text = f"{constraint.key} {constraint.relation} {constraint.value}"
            if constraint.unit:
                text += f" {constraint.unit}"
            report.constraint_checks.append({
                "node": name,
                "constraint": text,
                "satisfied": report.node_verdicts[name].status is not VerdictStatus.FAIL,
            })

    logger.info(f"Verification result: {report.overall} ({len(report.reasons)} reason(s), "
                f"{len(report.warnings)} warning(s))")
    return report
