import random

import pytest

from accelgen import (Governor, Knob, KnobSpace, StageModel, enumerate_pareto, frontier_perf_entries,
                      governor_step, knob_space_from_dict, load_knob_space, pruned_pareto,
                      replay_governor)
from conftest import program_path
from corpus import random_knob_space
from desim import load_env_trace, simulate
from dsl_frontend import compile_file
from errors import EmptyFrontierError, KnobModelError, NoSafeConfigError, OverflowGuardError
from mapper import Pins, pinned_map
from perf_spec import PEClass, load_platform


@pytest.fixture
def small():
    space, _ = load_knob_space(program_path("knobs_small.json"))
    return space


@pytest.fixture
def governed():
    space, document = load_knob_space(program_path("knobs_governor.json"))
    return pruned_pareto(space, document["deadline_ms"], document["design_workload"])


def as_table(frontier):
    return [(point.config, point.latency_ms, point.power_mw) for point in frontier]


def point_with(frontier, config):
    return next(point for point in frontier if point.config == config)


def test_small_space_frontier(small):
    frontier = enumerate_pareto(small, 9.0, 0.0)
    assert as_table(frontier) == [((4, 4), 4.0, 32.0), ((4, 2), 5.5, 26.0),
                                  ((2, 4), 6.5, 22.0), ((2, 2), 8.0, 16.0)]
    assert frontier.visited == 9
    assert frontier.fastest().config_id == "k1=4,k2=4"


def test_pruned_matches_exhaustive_on_small_space(small):
    pruned = pruned_pareto(small, 9.0, 0.0)
    assert as_table(pruned) == as_table(enumerate_pareto(small, 9.0, 0.0))
    assert pruned.visited <= 9


def test_frontier_points_are_mutually_non_dominated(small):
    points = list(enumerate_pareto(small, 9.0, 0.0))
    for a in points:
        for b in points:
            if a is not b:
                assert not (a.latency_ms <= b.latency_ms and a.power_mw <= b.power_mw)
    powers = [p.power_mw for p in points]
    assert powers == sorted(powers, reverse=True)


def test_single_config_and_empty_frontier():
    space = KnobSpace((Knob("k", (2,)),), (StageModel("s", "k", None, "k", c1=4.0, p1=1.0),))
    assert as_table(enumerate_pareto(space, 5.0, 0.0)) == [((2,), 2.0, 2.0)]
    assert as_table(pruned_pareto(space, 5.0, 0.0)) == [((2,), 2.0, 2.0)]
    with pytest.raises(EmptyFrontierError):
        enumerate_pareto(space, 1.0, 0.0)
    with pytest.raises(EmptyFrontierError):
        pruned_pareto(space, 1.0, 0.0)


def test_large_fixture_prunes_most_of_the_space():
    space, document = load_knob_space(program_path("knobs_6x8.json"))
    assert space.size == 262_144
    exhaustive = enumerate_pareto(space, document["deadline_ms"], 0.0)
    pruned = pruned_pareto(space, document["deadline_ms"], 0.0)

    assert pruned.configs() == exhaustive.configs()
    assert as_table(pruned) == as_table(exhaustive)
    assert pruned.visited < 0.25 * space.size


def test_pruned_matches_exhaustive_on_random_spaces():
    rng = random.Random(2024)
    for _ in range(50):
        space, deadline, workload = random_knob_space(rng)
        assert space.size <= 10_000
        exhaustive = enumerate_pareto(space, deadline, workload)
        pruned = pruned_pareto(space, deadline, workload)
        assert pruned.configs() == exhaustive.configs()
        assert pruned.visited <= space.size


def test_parallel_enumeration_is_order_independent(small):
    assert as_table(enumerate_pareto(small, 9.0, 0.0, workers=2)) == \
        as_table(enumerate_pareto(small, 9.0, 0.0))


def test_exhaustive_guard():
    knobs = tuple(Knob(f"k{i}", tuple(range(1, 9))) for i in range(7))
    space = KnobSpace(knobs, (StageModel("s", "k0", None, None, c1=1.0),))
    with pytest.raises(OverflowGuardError):
        enumerate_pareto(space, 10.0, 0.0)


@pytest.mark.parametrize("document", [
    {"knobs": [{"name": "k", "values": [2, 1]}], "stages": []},
    {"knobs": [{"name": "k", "values": [1, 2]}], "stages": [{"latency_knob": "q", "c1": 1}]},
    {"knobs": [{"name": "k", "values": [1, 2]}], "stages": [{"latency_knob": "k", "c1": -1}]},
    {"knobs": [{"name": "k", "values": [0, 2]}], "stages": []},
    {"knobs": [{"name": "k", "values": [1]}], "stages": [{"c1": 3}]},
    {"stages": []},
])
def test_malformed_knob_models(document):
    with pytest.raises(KnobModelError):
        knob_space_from_dict(document)


def test_frontier_perf_entries(small):
    frontier = pruned_pareto(small, 9.0, 0.0)
    perf = frontier_perf_entries(frontier, "Localization", 0.0)
    entries = perf.configs("Localization", PEClass.ACCEL)
    assert [entry.config for entry in entries] == sorted(point.config_id for point in frontier)
    assert perf.entry("Localization", PEClass.ACCEL, "k1=2,k2=2").wcet_ms == 8.0


def test_governor_frontier_fixture(governed):
    assert [point.config for point in governed] == [(16,), (8,), (4,), (2,)]


def test_governor_steps_down_when_workload_drops(governed):
    fastest = governed.fastest()
    selected = governor_step(governed, fastest, 5.0, 30.0, 0.1)
    assert selected.config == (2,)
    assert selected.latency_at(5.0) <= 30.0


def test_governor_picks_fastest_at_peak_workload(governed):
    cheapest = governed.cheapest()
    assert governor_step(governed, cheapest, 400.0, 30.0, 0.1).config == (16,)


def test_governor_raises_when_nothing_is_safe(governed):
    with pytest.raises(NoSafeConfigError) as info:
        governor_step(governed, governed.fastest(), 500.0, 30.0, 0.1)
    assert info.value.fastest.config == (16,)


def test_governor_keeps_current_inside_the_band(governed):
    for start in ((2,), (4,)):
        current = point_with(governed, start)
        for workload in (53, 56, 54, 57, 53, 55):
            following = governor_step(governed, current, workload, 30.0, 0.1)
            assert following == current


def test_governor_switches_once_per_crossing(governed):
    current = point_with(governed, (2,))
    trace = [40, 40, 70, 70, 70, 40, 40, 70, 40]
    crossings = sum(1 for a, b in zip(trace, trace[1:]) if (a < 53) != (b < 53))
    switches = 0
    for workload in trace:
        following = governor_step(governed, current, workload, 30.0, 0.1)
        assert following.latency_at(workload) <= 30.0
        switches += following != current
        current = following
    assert switches <= crossings


def test_governor_replay_is_safe(governed):
    env = load_env_trace(program_path("governor_env.csv"))
    governor = Governor(governed, 30.0, hysteresis=0.1, confirm_steps=3)
    samples = replay_governor(governor, env, step_ms=100.0, horizon_ms=60_000.0)

    assert len(samples) == 600
    assert all(sample.safe for sample in samples)
    assert all(sample.power_mw <= governed.fastest().power_mw for sample in samples)
    assert governor.switches > 0
    assert governor.unsafe_steps == 0


def test_governor_pins_fastest_when_overloaded(governed):
    governor = Governor(governed, 30.0, current=governed.cheapest())
    assert governor.step(1000.0)
    assert governor.pinned
    assert governor.current == governed.fastest()
    assert governor.unsafe_steps == 1


def test_governor_confirms_downward_switches(governed):
    governor = Governor(governed, 30.0, hysteresis=0.1, confirm_steps=3)
    assert not governor.step(5.0)
    assert not governor.step(5.0)
    assert governor.step(5.0)
    assert governor.current.config == (2,)
    assert governor.step(300.0)
    assert governor.current.config == (16,)


def test_governed_node_in_simulation(governed):
    _, graph, _ = compile_file(program_path("localization.mdfg"))
    platform = load_platform(program_path("vacuum_platform.json"))
    perf = frontier_perf_entries(governed, "Localization", 400.0)
    pins = Pins({"Localization": "accel0"}, {"Localization": governed.fastest().config_id})
    mapping = pinned_map(graph, platform, perf, pins)
    governor = Governor(governed, 30.0)
    env = load_env_trace(program_path("governor_env.csv"))

    metrics, events = simulate(graph, mapping, perf, env, horizon_ms=60_000, latency_mode="model",
                               governors={"Localization": governor})

    assert governor.switches > 0
    assert metrics.nodes["Localization"].skipped_switch > 0
    assert events.times("switch", "Localization")
