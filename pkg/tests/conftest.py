from pathlib import Path

import pytest

from dsl_frontend import compile_file
from mapper import Pins, pinned_map
from mdfg import EdgePolicy, EdgeSpec, Mdfg, NodeKind, NodeSpec
from perf_spec import PE, LatencyModel, PEClass, PerfEntry, PerfSpec, Platform, load_perf, load_platform

PROGRAMS = Path(__file__).resolve().parent.parent / "programs"


def program_path(name: str) -> Path:
    return PROGRAMS / name


def sensor(name, rate, token_bytes=64):
    return NodeSpec(name, NodeKind.SENSOR, rate, token_bytes)


def compute(name, rate, token_bytes=64, inputs=1):
    return NodeSpec(name, NodeKind.COMPUTE, rate, token_bytes, tuple(f"in{i}" for i in range(inputs)))


def actuator(name, rate, inputs=1):
    return NodeSpec(name, NodeKind.ACTUATOR, rate, 0, tuple(f"in{i}" for i in range(inputs)))


def edge(producer, consumer, port="in0", policy=None):
    return EdgeSpec(producer, consumer, port, policy or EdgePolicy.latest())


def single_pe_case(nodes, edges, wcets, pe_class=PEClass.CPU, outputs=()):
    """Graph with every compute node pinned to one PE of ``pe_class``."""
    graph = Mdfg.build(nodes, edges, outputs)
    pe_id = f"{pe_class.value.lower()}0"
    platform = Platform((PE(pe_id, pe_class),))
    perf = PerfSpec.of(PerfEntry(name, pe_class, "default", LatencyModel(wcet), 100.0)
                       for name, wcet in wcets.items())
    mapping = pinned_map(graph, platform, perf, Pins({name: pe_id for name in wcets}))
    return graph, platform, perf, mapping


@pytest.fixture
def vacuum():
    """(program, graph, constraints) of the robot vacuum example."""
    return compile_file(program_path("vacuum.mdfg"))


@pytest.fixture
def vacuum_platform():
    return load_platform(program_path("vacuum_platform.json"))


@pytest.fixture
def vacuum_perf():
    return load_perf(program_path("vacuum_perf.json"))


@pytest.fixture
def av():
    return compile_file(program_path("av.mdfg"))
