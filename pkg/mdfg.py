"""
Macro-Dataflow Graph IR
Rate-annotated nodes, policy-annotated edges and the structural analyses
every later stage relies on (validation, deterministic ordering, bandwidth).
"""

import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

import networkx as nx

from errors import GraphError

logger = logging.getLogger(__name__)

IDENTIFIER = re.compile(r"[0-9]*[A-Za-z][A-Za-z0-9_]*")


class NodeKind(str, Enum):
    SENSOR = "sensor"
    COMPUTE = "compute"
    ACTUATOR = "actuator"


class PolicyKind(str, Enum):
    LATEST = "latest"
    WINDOW = "window"
    FIFO = "fifo"


@dataclass(frozen=True)
class EdgePolicy:
    """How a consumer reads the tokens waiting on one of its input ports.

    Window(1) is canonicalized to Latest at construction, so downstream code
    only ever sees Latest, Window(k >= 2) and Fifo.
    """

    kind: PolicyKind = PolicyKind.LATEST
    k: int = 1

    def __post_init__(self):
        kind = PolicyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PolicyKind.WINDOW:
            if not isinstance(self.k, int) or self.k < 1:
                raise GraphError(f"window size must be a positive integer, got {self.k!r}")
            if self.k == 1:
                object.__setattr__(self, "kind", PolicyKind.LATEST)
        else:
            object.__setattr__(self, "k", 1)

    @classmethod
    def latest(cls) -> "EdgePolicy":
        return cls(PolicyKind.LATEST)

    @classmethod
    def window(cls, k: int) -> "EdgePolicy":
        return cls(PolicyKind.WINDOW, k)

    @classmethod
    def fifo(cls) -> "EdgePolicy":
        return cls(PolicyKind.FIFO)

    def __str__(self) -> str:
        if self.kind is PolicyKind.WINDOW:
            return f"window({self.k})"
        return self.kind.value


@dataclass(frozen=True)
class NodeSpec:
    """A graph node: a black-box task firing at a fixed frequency."""

    name: str
    kind: NodeKind
    rate_hz: float
    token_bytes: int = 0
    ports: tuple = ()
    attrs: Mapping = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if not isinstance(self.name, str) or not IDENTIFIER.fullmatch(self.name):
            raise GraphError(f"invalid node identifier {self.name!r}")
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "ports", tuple(self.ports))
        object.__setattr__(self, "attrs", dict(self.attrs))

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.rate_hz

    @property
    def is_io(self) -> bool:
        """Sensors and actuators run on the IO pseudo-PE."""
        return self.kind is not NodeKind.COMPUTE


@dataclass(frozen=True)
class EdgeSpec:
    producer: str
    consumer: str
    port: str
    policy: EdgePolicy = field(default_factory=EdgePolicy)

    @property
    def label(self) -> str:
        return f"{self.producer}->{self.consumer}.{self.port}"


@dataclass(frozen=True)
class Mdfg:
    """Immutable macro-dataflow graph."""

    nodes: Mapping
    edges: tuple = ()
    outputs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @classmethod
    def build(cls, nodes: Iterable[NodeSpec], edges: Iterable[EdgeSpec] = (),
              outputs: Iterable[str] = ()) -> "Mdfg":
        by_name = {}
        for node in nodes:
            if node.name in by_name:
                raise GraphError(f"duplicate node '{node.name}'")
            by_name[node.name] = node
        return cls(by_name, tuple(edges), tuple(outputs))

    def node(self, name: str) -> NodeSpec:
        try:
            return self.nodes[name]
        except KeyError:
            raise GraphError(f"unknown node '{name}'") from None

    def in_edges(self, name: str) -> list:
        ports = self.nodes[name].ports
        order = {port: index for index, port in enumerate(ports)}
        incoming = [edge for edge in self.edges if edge.consumer == name]
        return sorted(incoming, key=lambda edge: (order.get(edge.port, len(order)), edge.producer))

    def out_edges(self, name: str) -> list:
        return [edge for edge in self.edges if edge.producer == name]

    def sinks(self) -> list:
        producers = {edge.producer for edge in self.edges}
        return sorted(name for name in self.nodes if name not in producers)

    def digraph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(sorted(self.nodes))
        for edge in self.edges:
            if edge.producer in self.nodes and edge.consumer in self.nodes:
                graph.add_edge(edge.producer, edge.consumer)
        return graph

    def depths(self) -> dict:
        """Topological depth (generation) of every node."""
        graph = self.digraph()
        if not nx.is_directed_acyclic_graph(graph):
            raise GraphError("graph contains a cycle")
        return {name: depth
                for depth, generation in enumerate(nx.topological_generations(graph))
                for name in generation}

    def without_node(self, name: str) -> "Mdfg":
        nodes = {key: value for key, value in self.nodes.items() if key != name}
        edges = [edge for edge in self.edges if name not in (edge.producer, edge.consumer)]
        outputs = [output for output in self.outputs if output != name]
        return Mdfg(nodes, tuple(edges), tuple(outputs))

    def with_node(self, node: NodeSpec) -> "Mdfg":
        nodes = dict(self.nodes)
        nodes[node.name] = node
        return replace(self, nodes=nodes)

    def with_edge(self, edge: EdgeSpec) -> "Mdfg":
        return replace(self, edges=self.edges + (edge,))


class ViolationCategory(str, Enum):
    CYCLE = "Cycle"
    DANGLING_PORT = "DanglingPort"
    SENSOR_WITH_INPUT = "SensorWithInput"
    DUPLICATE_EDGE = "DuplicateEdge"
    DISCONNECTED = "Disconnected"
    BAD_RATE = "BadRate"
    BAD_TOKEN_SIZE = "BadTokenSize"
    UNKNOWN_NODE = "UnknownNode"
    ACTUATOR_WITHOUT_INPUT = "ActuatorWithoutInput"


@dataclass(frozen=True)
class Violation:
    category: ViolationCategory
    subject: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.severity}: {self.category.value}: {self.subject}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def errors(self) -> list:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        """True when nothing but warnings was found."""
        return not self.errors

    def of(self, category: ViolationCategory) -> list:
        return [v for v in self.violations if v.category is category]

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def _canonical_cycle(cycle: list, depth: dict) -> tuple:
    """Rotate ``cycle`` to start at its node closest to a source, ties by name."""
    start = min(range(len(cycle)), key=lambda i: (depth.get(cycle[i], math.inf), cycle[i]))
    return tuple(cycle[start:] + cycle[:start])


def validate_graph(graph: Mdfg) -> ValidationReport:
    """Collect every structural violation of ``graph``; never raises."""
    violations = []
    names = graph.nodes

    for name in sorted(names):
        node = names[name]
        if not (isinstance(node.rate_hz, (int, float)) and math.isfinite(node.rate_hz)
                and node.rate_hz > 0):
            violations.append(Violation(ViolationCategory.BAD_RATE, name,
                                        f"rate {node.rate_hz!r} Hz is not positive"))
        if node.token_bytes < 0:
            violations.append(Violation(ViolationCategory.BAD_TOKEN_SIZE, name,
                                        f"token size {node.token_bytes} is negative"))
        if node.kind is NodeKind.SENSOR and node.ports:
            violations.append(Violation(ViolationCategory.SENSOR_WITH_INPUT, name,
                                        f"sensor declares input ports {list(node.ports)}"))
        if node.kind is NodeKind.ACTUATOR:
            if not node.ports:
                violations.append(Violation(ViolationCategory.ACTUATOR_WITHOUT_INPUT, name,
                                            "actuator has no input port"))
            if node.token_bytes != 0:
                violations.append(Violation(ViolationCategory.BAD_TOKEN_SIZE, name,
                                            "actuator tokens must be 0 bytes"))

    connected = defaultdict(list)
    for edge in graph.edges:
        missing = [n for n in (edge.producer, edge.consumer) if n not in names]
        if missing:
            violations.append(Violation(ViolationCategory.UNKNOWN_NODE, edge.label,
                                        f"edge references unknown node {missing[0]}"))
            continue
        consumer = names[edge.consumer]
        if consumer.kind is NodeKind.SENSOR:
            violations.append(Violation(ViolationCategory.SENSOR_WITH_INPUT, edge.label,
                                        f"sensor {edge.consumer} receives an edge"))
            continue
        if edge.port not in consumer.ports:
            violations.append(Violation(ViolationCategory.DANGLING_PORT, edge.label,
                                        f"{edge.consumer} has no port '{edge.port}'"))
            continue
        connected[(edge.consumer, edge.port)].append(edge)

    for (consumer, port), edges in sorted(connected.items()):
        if len(edges) > 1:
            producers = ", ".join(edge.producer for edge in edges)
            violations.append(Violation(ViolationCategory.DUPLICATE_EDGE, f"{consumer}.{port}",
                                        f"port fed by several producers ({producers})"))

    for name in sorted(names):
        node = names[name]
        if node.kind is NodeKind.SENSOR:
            continue
        for port in node.ports:
            if (name, port) not in connected:
                violations.append(Violation(ViolationCategory.DANGLING_PORT, f"{name}.{port}",
                                            "input port is not connected"))

    for output in graph.outputs:
        if output not in names:
            violations.append(Violation(ViolationCategory.UNKNOWN_NODE, output,
                                        "output names an unknown node"))

    digraph = graph.digraph()
    sources = [name for name, degree in digraph.in_degree() if degree == 0]
    depth = nx.multi_source_dijkstra_path_length(digraph, sources) if sources else {}
    cycles = sorted(_canonical_cycle(list(cycle), depth) for cycle in nx.simple_cycles(digraph))
    for cycle in cycles:
        path = "->".join(cycle + (cycle[0],))
        violations.append(Violation(ViolationCategory.CYCLE, path,
                                    f"cycle {path}; nodes must be stateless"))

    if not names:
        violations.append(Violation(ViolationCategory.DISCONNECTED, "<graph>",
                                    "graph has no nodes", severity="warning"))
    elif not nx.is_weakly_connected(digraph):
        components = sorted(sorted(c) for c in nx.weakly_connected_components(digraph))
        listing = "; ".join(",".join(component) for component in components)
        violations.append(Violation(ViolationCategory.DISCONNECTED, "<graph>",
                                    f"{len(components)} components: {listing}",
                                    severity="warning"))

    if violations:
        logger.info(f"Validation found {len(violations)} violation(s)")
    return ValidationReport(tuple(violations))


def topo_order(graph: Mdfg) -> list:
    """Producers before consumers; generation by generation, names ascending."""
    digraph = graph.digraph()
    if not nx.is_directed_acyclic_graph(digraph):
        raise GraphError("topological order requested for a cyclic graph")
    order = []
    for generation in nx.topological_generations(digraph):
        order.extend(sorted(generation))
    return order


@dataclass(frozen=True)
class BandwidthProfile:
    per_edge: Mapping
    per_stage: Mapping
    total_input: float
    total_output: float

    def is_funnel(self) -> bool:
        """Per-stage volume strictly decreasing with depth."""
        volumes = [self.per_stage[depth] for depth in sorted(self.per_stage)]
        return all(a > b for a, b in zip(volumes, volumes[1:]))

    def to_dict(self) -> dict:
        return {
            "per_edge": {edge.label: value for edge, value in self.per_edge.items()},
            "per_stage": {str(depth): self.per_stage[depth] for depth in sorted(self.per_stage)},
            "total_input": self.total_input,
            "total_output": self.total_output,
            "funnel": self.is_funnel(),
        }


def bandwidth_profile(graph: Mdfg) -> BandwidthProfile:
    """Bytes per second on every edge, per topological stage and at the graph boundary."""
    depths = graph.depths()
    per_edge = {}
    per_stage = defaultdict(float)
    total_output = 0.0
    for edge in graph.edges:
        producer = graph.node(edge.producer)
        volume = producer.rate_hz * producer.token_bytes
        per_edge[edge] = volume
        per_stage[depths[edge.producer]] += volume
        if graph.node(edge.consumer).kind is NodeKind.ACTUATOR:
            total_output += volume
    total_input = sum(node.rate_hz * node.token_bytes
                      for node in graph.nodes.values() if node.kind is NodeKind.SENSOR)
    return BandwidthProfile(per_edge, dict(per_stage), float(total_input), total_output)
