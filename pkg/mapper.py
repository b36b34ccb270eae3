"""
Mapper
Places compute nodes onto platform processing elements: a deterministic
first-fit-decreasing heuristic and an exhaustive power-optimal oracle.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

from errors import GraphError, InfeasibleError, InputFileError, SearchSpaceTooLargeError, UnmappableError
from mdfg import Mdfg, NodeKind
from perf_spec import IO_PE, PEClass, PerfSpec, Platform, read_json

logger = logging.getLogger(__name__)

EXHAUSTIVE_NODE_LIMIT = 10


@dataclass(frozen=True)
class Mapping:
    """Node placement: PE per node, chosen perf config per compute node."""

    assignment: dict
    pe_classes: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)
    objective_value: float = 0.0

    def pe_of(self, node: str) -> str:
        try:
            return self.assignment[node]
        except KeyError:
            raise GraphError(f"{node} is not mapped") from None

    def class_of(self, node: str) -> Optional[PEClass]:
        pe = self.pe_of(node)
        if pe == IO_PE:
            return None
        try:
            return self.pe_classes[pe]
        except KeyError:
            raise GraphError(f"{node} is mapped to unknown PE '{pe}'") from None

    def config_of(self, node: str) -> Optional[str]:
        return self.configs.get(node)

    def to_dict(self) -> dict:
        return {
            "assignment": dict(sorted(self.assignment.items())),
            "configs": dict(sorted(self.configs.items())),
            "objective_value": self.objective_value,
        }


@dataclass(frozen=True)
class Pins:
    """User-fixed part of an assignment (PE and optionally config per node)."""

    pes: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)


def load_pins(path) -> Pins:
    data = read_json(path)
    if not isinstance(data, dict):
        raise InputFileError(f"{path}: pin file must be a JSON object")
    pes = data.get("pins", data.get("assignment", {}))
    configs = data.get("configs", {})
    if not isinstance(pes, dict) or not isinstance(configs, dict):
        raise InputFileError(f"{path}: 'pins' and 'configs' must be objects")
    return Pins({str(k): str(v) for k, v in pes.items()}, {str(k): str(v) for k, v in configs.items()})


def _candidates(node: str, platform: Platform, perf: PerfSpec, pins: Pins) -> list:
    """(pe, entry) pairs that may host ``node``, honoring pins."""
    pinned_pe = pins.pes.get(node)
    pinned_config = pins.configs.get(node)
    found = []
    for pe in platform.pes:
        if pinned_pe is not None and pe.id != pinned_pe:
            continue
        for entry in perf.configs(node, pe.pe_class):
            if pinned_config is not None and entry.config != pinned_config:
                continue
            found.append((pe, entry))
    return found


def _io_assignment(graph: Mdfg) -> dict:
    return {name: IO_PE for name, node in graph.nodes.items() if node.kind is not NodeKind.COMPUTE}


def _check_pins(graph: Mdfg, platform: Platform, pins: Pins):
    for node, pe in pins.pes.items():
        if node not in graph.nodes:
            raise InputFileError(f"pin names unknown node '{node}'")
        if pe != IO_PE:
            platform.pe(pe)


def first_fit_map(graph: Mdfg, platform: Platform, perf: PerfSpec,
                  pins: Optional[Pins] = None) -> Mapping:
    """First-fit decreasing placement.

    Nodes are taken in decreasing utilization order (ties by name); each goes
    to the lowest-power (pe, config) candidate that keeps that PE's utilization
    at or below 1.

    Raises:
        UnmappableError: a node fits on no PE.
    """
    pins = pins or Pins()
    _check_pins(graph, platform, pins)
    compute = [name for name, node in graph.nodes.items() if node.kind is NodeKind.COMPUTE]

    options = {}
    for name in compute:
        rate = graph.node(name).rate_hz
        found = _candidates(name, platform, perf, pins)
        if not found:
            raise UnmappableError(name)
        options[name] = sorted(found, key=lambda c: (c[1].power_mw, c[0].id, c[1].config))
        logger.debug(f"{name}: {len(found)} candidate(s), min utilization "
                     f"{min(entry.utilization(rate) for _, entry in found):.3f}")

    def order_key(name):
        rate = graph.node(name).rate_hz
        return (-min(entry.utilization(rate) for _, entry in options[name]), name)

    load = {pe.id: 0.0 for pe in platform.pes}
    assignment = _io_assignment(graph)
    configs = {}
    power = 0.0
    for name in sorted(compute, key=order_key):
        rate = graph.node(name).rate_hz
        for pe, entry in options[name]:
            u = entry.utilization(rate)
            if load[pe.id] + u <= 1.0:
                load[pe.id] += u
                assignment[name] = pe.id
                configs[name] = entry.config
                power += entry.power_mw
                break
        else:
            raise UnmappableError(name)

    mapping = Mapping(assignment, {pe.id: pe.pe_class for pe in platform.pes}, configs, power)
    logger.info(f"First-fit mapping: {len(compute)} node(s), {power:g} mW")
    return mapping


def exhaustive_map(graph: Mdfg, platform: Platform, perf: PerfSpec,
                   pins: Optional[Pins] = None) -> Mapping:
    """Minimum-power feasible mapping by full enumeration.

    Assignments are enumerated in lexicographic (node name, pe id, config)
    order and only a strictly better one replaces the incumbent.

    Raises:
        SearchSpaceTooLargeError: more than EXHAUSTIVE_NODE_LIMIT compute nodes.
        InfeasibleError: no assignment keeps every PE at or below 1.
    """
    pins = pins or Pins()
    _check_pins(graph, platform, pins)
    compute = sorted(name for name, node in graph.nodes.items() if node.kind is NodeKind.COMPUTE)
    if len(compute) > EXHAUSTIVE_NODE_LIMIT:
        raise SearchSpaceTooLargeError(
            f"exhaustive mapping refuses {len(compute)} compute nodes (limit {EXHAUSTIVE_NODE_LIMIT})")

    options = []
    for name in compute:
        found = _candidates(name, platform, perf, pins)
        if not found:
            raise UnmappableError(name)
        rate = graph.node(name).rate_hz
        options.append(sorted(((pe.id, entry.config, entry.utilization(rate), entry.power_mw)
                               for pe, entry in found), key=lambda c: (c[0], c[1])))

    best = None
    best_power = None
    visited = 0
    for choice in itertools.product(*options):
        visited += 1
        load = {}
        feasible = True
        for pe_id, _, u, _ in choice:
            load[pe_id] = load.get(pe_id, 0.0) + u
            if load[pe_id] > 1.0:
                feasible = False
                break
        if not feasible:
            continue
        power = sum(c[3] for c in choice)
        if best_power is None or power < best_power:
            best, best_power = choice, power

    if best is None:
        raise InfeasibleError(f"no feasible assignment among {visited} candidates")

    assignment = _io_assignment(graph)
    configs = {}
    for name, (pe_id, config, _, _) in zip(compute, best):
        assignment[name] = pe_id
        configs[name] = config
    logger.info(f"Exhaustive mapping: {visited} assignment(s) evaluated, {best_power:g} mW")
    return Mapping(assignment, {pe.id: pe.pe_class for pe in platform.pes}, configs, best_power)


def pinned_map(graph: Mdfg, platform: Platform, perf: PerfSpec, pins: Pins) -> Mapping:
    """Mapping taken verbatim from pins, without any feasibility search.

    Every compute node must be pinned; used to replay a manual mapping.
    """
    _check_pins(graph, platform, pins)
    assignment = _io_assignment(graph)
    configs = {}
    power = 0.0
    for name, node in sorted(graph.nodes.items()):
        if node.kind is not NodeKind.COMPUTE:
            continue
        if name not in pins.pes:
            raise InputFileError(f"manual mapping does not place '{name}'")
        pe = platform.pe(pins.pes[name])
        entry = perf.entry(name, pe.pe_class, pins.configs.get(name))
        assignment[name] = pe.id
        configs[name] = entry.config
        power += entry.power_mw
    return Mapping(assignment, {pe.id: pe.pe_class for pe in platform.pes}, configs, power)
