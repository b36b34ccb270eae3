"""
Graph Corpus
Seeded random graphs, programs, platforms, specs and knob spaces for batch
runs and property checks, plus the small per-policy buffer stress fixtures.
"""

import logging
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from accelgen import Knob, KnobSpace, StageModel
from dsl_frontend import BindingDecl, Constraint, Program, RequireDecl
from errors import UnmappableError
from mapper import Mapping, Pins, first_fit_map, pinned_map
from mdfg import EdgePolicy, EdgeSpec, Mdfg, NodeKind, NodeSpec, PolicyKind
from perf_spec import LatencyModel, PE, PEClass, PerfEntry, PerfSpec, Platform

logger = logging.getLogger(__name__)

RATES_HZ = (10.0, 20.0, 25.0, 40.0, 50.0, 100.0)
ODD_RATE_HZ = 30.0
MAX_WCET_SHARE = 0.15
KNOB_VALUES = (1, 2, 3, 4, 6, 8, 12, 16)
RELATIONS = (">=", "<=", "=")
PROGRAM_POLICIES = (EdgePolicy.latest(), EdgePolicy.fifo(), EdgePolicy.window(2), EdgePolicy.window(3))


@dataclass(frozen=True)
class CorpusCase:
    seed: int
    graph: Mdfg
    platform: Platform
    perf: PerfSpec
    mapping: Optional[Mapping]
    phases_ms: dict = field(default_factory=dict)


def _rate(rng: random.Random) -> float:
    if rng.random() < 0.1:
        return ODD_RATE_HZ
    return rng.choice(RATES_HZ)


def _policy(rng: random.Random, producer: NodeSpec, consumer_rate: float) -> EdgePolicy:
    if producer.kind is NodeKind.SENSOR and consumer_rate >= 2 * producer.rate_hz and rng.random() < 0.3:
        return EdgePolicy.fifo()
    roll = rng.random()
    if roll < 0.2:
        return EdgePolicy.window(rng.choice((2, 3)))
    return EdgePolicy.latest()


def random_case(seed: int) -> CorpusCase:
    """A valid graph of at most 8 nodes with specs that keep wcet within 15% of the period."""
    rng = random.Random(seed)
    sensors = [NodeSpec(f"S{i}", NodeKind.SENSOR, _rate(rng), rng.randint(64, 4096))
               for i in range(rng.randint(1, 3))]
    producers = list(sensors)
    compute_inputs = {}
    compute_specs = {}
    for i in range(rng.randint(1, 4)):
        name = f"N{i}"
        rate = _rate(rng)
        chosen = rng.sample(producers, k=min(len(producers), rng.randint(1, 2)))
        compute_inputs[name] = [(p, _policy(rng, p, rate)) for p in chosen]
        compute_specs[name] = (rate, rng.randint(16, 2048))
        producers.append(NodeSpec(name, NodeKind.COMPUTE, rate, compute_specs[name][1]))

    used = {p.name for inputs in compute_inputs.values() for p, _ in inputs}
    for sensor in sensors:
        if sensor.name not in used:
            target = rng.choice(sorted(compute_inputs))
            rate = compute_specs[target][0]
            compute_inputs[target].append((sensor, _policy(rng, sensor, rate)))

    nodes = list(sensors)
    edges = []
    for name in sorted(compute_inputs):
        inputs = compute_inputs[name]
        ports = tuple(f"in{i}" for i in range(len(inputs)))
        rate, token_bytes = compute_specs[name]
        nodes.append(NodeSpec(name, NodeKind.COMPUTE, rate, token_bytes, ports))
        for port, (producer, policy) in zip(ports, inputs):
            edges.append(EdgeSpec(producer.name, name, port, policy))
    # the actuator reads every compute sink so the graph stays weakly connected
    tails = [name for name in sorted(compute_inputs) if name not in used]
    ports = tuple(f"in{i}" for i in range(len(tails)))
    nodes.append(NodeSpec("A", NodeKind.ACTUATOR, _rate(rng), 0, ports))
    edges.extend(EdgeSpec(tail, "A", port, EdgePolicy.latest()) for tail, port in zip(tails, ports))
    graph = Mdfg.build(nodes, edges, ("A",))

    classes = rng.sample([PEClass.CPU, PEClass.GPU, PEClass.DSP, PEClass.ACCEL], k=rng.randint(2, 3))
    platform = Platform(tuple(PE(f"{klass.value.lower()}0", klass) for klass in classes))
    entries = []
    for name in sorted(compute_inputs):
        period = 1000.0 / compute_specs[name][0]
        for klass in classes:
            wcet = round(period * rng.uniform(0.02, MAX_WCET_SHARE), 3)
            entries.append(PerfEntry(name, klass, "default", LatencyModel(wcet),
                                     float(rng.randint(50, 500))))
    perf = PerfSpec.of(entries)
    try:
        mapping = first_fit_map(graph, platform, perf)
    except UnmappableError:
        mapping = None
    return CorpusCase(seed, graph, platform, perf, mapping)


def generate_corpus(count: int, seed: int = 0) -> list:
    cases = [random_case(seed * 100_003 + index) for index in range(count)]
    logger.info(f"Generated corpus of {len(cases)} graphs (seed {seed})")
    return cases


def stress_fixture(policy: EdgePolicy) -> CorpusCase:
    """Two-node graph that fills its edge buffer exactly to the allocated size.

    Latest and Window: 100 Hz sensor into a 10 Hz consumer that holds its
    inputs for 5 ms. Fifo: equal 10 Hz rates with the producer 1 ms late.
    """
    if policy.kind is PolicyKind.FIFO:
        producer_rate, phases = 10.0, {"P": 1.0}
    else:
        producer_rate, phases = 100.0, {}
    graph = Mdfg.build(
        [NodeSpec("P", NodeKind.SENSOR, producer_rate, 64),
         NodeSpec("C", NodeKind.COMPUTE, 10.0, 64, ("in0",))],
        [EdgeSpec("P", "C", "in0", policy)],
        ("C",))
    platform = Platform((PE("cpu0", PEClass.CPU),))
    perf = PerfSpec.of([PerfEntry("C", PEClass.CPU, "default", LatencyModel(5.0), 100.0)])
    mapping = pinned_map(graph, platform, perf, Pins({"C": "cpu0"}))
    return CorpusCase(0, graph, platform, perf, mapping, phases)


def random_knob_space(rng: random.Random) -> tuple:
    """(space, deadline_ms, workload) with at most 6**4 configurations."""
    knobs = []
    for i in range(rng.randint(1, 4)):
        values = tuple(sorted(rng.sample(KNOB_VALUES, k=rng.randint(2, 6))))
        knobs.append(Knob(f"k{i}", values))
    names = [knob.name for knob in knobs]
    stages = []
    for i in range(rng.randint(1, 4)):
        latency_knob = rng.choice(names)
        pair_knob = rng.choice(names) if rng.random() < 0.3 else None
        stages.append(StageModel(
            f"s{i}", latency_knob, pair_knob, rng.choice(names),
            c0=round(rng.uniform(0, 2), 2), c1=round(rng.uniform(1, 20), 2),
            c2=round(rng.uniform(0, 10), 2) if pair_knob else 0.0,
            w0=round(rng.uniform(0, 0.01), 4), w1=round(rng.uniform(0, 0.05), 4),
            p0=round(rng.uniform(0, 5), 2), p1=round(rng.uniform(0.5, 10), 2)))
    space = KnobSpace(tuple(knobs), tuple(stages), round(rng.uniform(0, 20), 2))
    workload = float(rng.randint(0, 100))
    fastest = tuple(knob.values[-1] for knob in knobs)
    slowest = tuple(knob.values[0] for knob in knobs)
    low, _ = space.evaluate(fastest, workload)
    high, _ = space.evaluate(slowest, workload)
    deadline = low + rng.random() * (high - low)
    return space, deadline, workload


def scale_wcet(perf: PerfSpec, node: str, factor: float) -> PerfSpec:
    """Copy of ``perf`` with every latency term of ``node`` multiplied by ``factor``."""
    table = {}
    for key, entry in perf.entries.items():
        if entry.node == node:
            model = LatencyModel(entry.model.base_ms * factor, entry.model.slope_ms_per_unit * factor,
                                 entry.model.workload_max, entry.model.workload_mean)
            entry = PerfEntry(entry.node, entry.pe_class, entry.config, model,
                              entry.power_mw, entry.idle_mw)
        table[key] = entry
    return PerfSpec(table)


def _number(rng: random.Random):
    """Positive int or float; a fifth are tiny and a fifth are huge."""
    roll = rng.random()
    if roll < 0.2:
        return rng.uniform(1e-9, 1e-5)
    if roll < 0.4:
        return rng.uniform(1e9, 1e15)
    if roll < 0.7:
        return round(rng.uniform(0.5, 500.0), rng.randint(1, 4))
    return rng.randint(1, 1000)


def _program_constraints(rng: random.Random, kind: NodeKind) -> tuple:
    constraints = []
    if rng.random() < 0.8:
        constraints.append(Constraint("frequency", ">=", _number(rng), "Hz"))
    if kind is not NodeKind.ACTUATOR and rng.random() < 0.5:
        constraints.append(Constraint("token_bytes", "=", rng.randint(1, 1 << 20)))
    if rng.random() < 0.3:
        constraints.append(Constraint("budget", rng.choice(RELATIONS), _number(rng), "ms"))
    if rng.random() < 0.3:
        constraints.append(Constraint("gain", "=", rng.choice((1, -1)) * _number(rng)))
    if kind is NodeKind.SENSOR and rng.random() < 0.2:
        constraints.append(Constraint("resolution", "=",
                                      f"{rng.randint(16, 4096)}x{rng.randint(16, 4096)}"))
    rng.shuffle(constraints)
    return tuple(constraints)


def _program_binding(rng: random.Random, name: str, function: str, args: tuple) -> BindingDecl:
    policies = tuple(rng.choice(PROGRAM_POLICIES) for _ in range(rng.randint(0, len(args))))
    return BindingDecl(name, function, args, policies)


def random_program(rng: random.Random) -> Program:
    """A well-scoped program whose bindings follow their dependencies.

    Every compute and actuator require is bound once; up to two extra
    bindings re-apply an earlier function, either aliasing it with the same
    arguments or with new ones that lowering must refuse.
    """
    sensors = [RequireDecl(f"S{i}", NodeKind.SENSOR, _program_constraints(rng, NodeKind.SENSOR))
               for i in range(rng.randint(1, 3))]
    computes = [RequireDecl(f"N{i}", NodeKind.COMPUTE, _program_constraints(rng, NodeKind.COMPUTE))
                for i in range(rng.randint(1, 5))]
    actuators = []
    if rng.random() < 0.5:
        actuators.append(RequireDecl("A0", NodeKind.ACTUATOR,
                                     _program_constraints(rng, NodeKind.ACTUATOR)))

    available = [sensor.name for sensor in sensors]
    bindings = []
    for require in computes + actuators:
        args = tuple(rng.sample(available, k=rng.randint(1, min(3, len(available)))))
        binding = _program_binding(rng, f"b{len(bindings)}", require.name, args)
        bindings.append(binding)
        if require.kind is NodeKind.COMPUTE:
            available.append(binding.name)

    for _ in range(rng.randint(0, 2)):
        original = rng.choice(bindings)
        args = original.args
        if rng.random() < 0.5:
            args = tuple(rng.sample(available, k=len(args)))
        bindings.append(_program_binding(rng, f"b{len(bindings)}", original.function, args))

    outputs = (bindings[-1].name,) if rng.random() < 0.7 else ()
    return Program(tuple(sensors + computes + actuators), tuple(bindings), outputs)


def shuffle_bindings(program: Program, rng: random.Random) -> Program:
    """Same program with its bindings in another random order that still
    defines every argument before its use."""
    bound = {binding.name for binding in program.bindings}
    pending = list(program.bindings)
    defined = set()
    ordered = []
    while pending:
        ready = [b for b in pending if all(arg in defined or arg not in bound for arg in b.args)]
        chosen = rng.choice(ready)
        pending.remove(chosen)
        defined.add(chosen.name)
        ordered.append(chosen)
    return replace(program, bindings=tuple(ordered))
