import random

import pytest

from conftest import actuator, compute, edge, program_path, sensor, single_pe_case
from corpus import generate_corpus, scale_wcet
from dsl_frontend import ConstraintSet
from errors import UnboundedFifoError
from mapper import Mapping, Pins, first_fit_map, load_pins, pinned_map
from mdfg import EdgePolicy, Mdfg
from perf_spec import PE, LatencyModel, PEClass, PerfEntry, PerfSpec, Platform, load_perf
from timing_verifier import (VerdictStatus, VerifierConfig, check_utilization, path_reaction_latency,
                             size_buffers, verify)


def localization_case(rate_hz, wcet_ms):
    return single_pe_case([sensor("Camera", rate_hz, 230_400), compute("Localization", rate_hz)],
                          [edge("Camera", "Localization")], {"Localization": wcet_ms},
                          pe_class=PEClass.ACCEL)


def test_utilization_within_period_passes():
    graph, platform, perf, mapping = localization_case(50.0, 15.0)
    assert check_utilization(graph, mapping, perf)["accel0"] == pytest.approx(0.75)
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert report.node_verdicts["Localization"].status is VerdictStatus.PASS


def test_thirty_hz_localization_with_fifty_ms_fails():
    graph, platform, perf, mapping = localization_case(30.0, 50.0)
    assert check_utilization(graph, mapping, perf)["accel0"] == pytest.approx(1.5)
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert not report.accepted
    assert report.node_verdicts["Localization"].status is VerdictStatus.FAIL
    assert "wcet 50 ms > period 33.3333 ms" in report.reasons[0]


def test_two_nodes_overload_one_cpu():
    graph, platform, perf, mapping = single_pe_case(
        [sensor("S", 50.0), compute("P", 30.0), compute("Q", 50.0)],
        [edge("S", "P"), edge("S", "Q")], {"P": 20.0, "Q": 10.0})
    assert check_utilization(graph, mapping, perf)["cpu0"] == pytest.approx(1.1)
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert report.overall == "Reject"


def test_margin_tightens_the_bound():
    graph, platform, perf, mapping = localization_case(50.0, 15.0)
    report = verify(graph, ConstraintSet(), platform, perf, mapping, VerifierConfig(margin=0.3))
    assert not report.accepted


def test_buffer_sizes_per_policy():
    camera = sensor("Camera", 30.0, 230_400)
    lidar = sensor("LiDAR", 10.0, 1000)
    nodes = [camera, lidar, compute("Localization", 30.0), compute("Windowed", 30.0),
             compute("Fusion", 30.0)]
    latest = edge("Camera", "Localization")
    window = edge("Camera", "Windowed", policy=EdgePolicy.window(3))
    fifo = edge("LiDAR", "Fusion", policy=EdgePolicy.fifo())
    buffers = size_buffers(Mdfg.build(nodes, [latest, window, fifo]))

    assert (buffers[latest].slots, buffers[latest].bytes) == (2, 460_800)
    assert buffers[window].slots == 4
    assert buffers[fifo].slots == 2


def test_fast_producer_into_fifo_is_unbounded():
    nodes = [sensor("LiDAR", 30.0), compute("Fusion", 10.0), compute("Other", 10.0)]
    fifo = edge("LiDAR", "Fusion", policy=EdgePolicy.fifo())
    latest = edge("LiDAR", "Other")
    with pytest.raises(UnboundedFifoError) as info:
        size_buffers(Mdfg.build(nodes, [fifo, latest]))
    assert info.value.edges == [fifo]
    assert info.value.partial[latest].slots == 2


def test_unbounded_fifo_rejects():
    graph, platform, perf, mapping = single_pe_case(
        [sensor("S", 30.0), compute("N", 10.0)],
        [edge("S", "N", policy=EdgePolicy.fifo())], {"N": 1.0})
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert any("unbounded fifo" in reason for reason in report.reasons)


def test_chain_reaction_bound():
    graph = Mdfg.build([sensor("S", 30.0), compute("P", 30.0), compute("C", 50.0)],
                       [edge("S", "P"), edge("P", "C")], ("C",))
    platform = Platform((PE("cpu0", PEClass.CPU), PE("gpu0", PEClass.GPU)))
    perf = PerfSpec.of([PerfEntry("P", PEClass.CPU, "default", LatencyModel(20.0), 100.0),
                        PerfEntry("C", PEClass.GPU, "default", LatencyModel(5.0), 100.0)])
    mapping = pinned_map(graph, platform, perf, Pins({"P": "cpu0", "C": "gpu0"}))
    assert path_reaction_latency(graph, perf, mapping)["C"] == pytest.approx(111.6667, abs=1e-3)


def test_one_hop_bound_covers_both_periods():
    graph = Mdfg.build([sensor("S", 20.0), actuator("A", 20.0)], [edge("S", "A")], ("A",))
    mapping = Mapping({"S": "io", "A": "io"})
    assert path_reaction_latency(graph, PerfSpec(), mapping)["A"] == pytest.approx(100.0)


def test_window_edge_adds_producer_periods():
    graph, _, perf, mapping = single_pe_case(
        [sensor("S", 100.0), compute("N", 10.0)],
        [edge("S", "N", policy=EdgePolicy.window(3))], {"N": 5.0})
    # S: 10; N: 100 + 5 + 10 + 2 * 10
    assert path_reaction_latency(graph, perf, mapping)["N"] == pytest.approx(135.0)


def test_vacuum_accepts(vacuum, vacuum_platform, vacuum_perf):
    _, graph, constraints = vacuum
    mapping = first_fit_map(graph, vacuum_platform, vacuum_perf)
    report = verify(graph, constraints, vacuum_platform, vacuum_perf, mapping)

    assert report.accepted, report.reasons
    frequency_checks = [c for c in report.constraint_checks if c["constraint"].startswith("frequency")]
    assert len(frequency_checks) == 7
    assert all(c["satisfied"] for c in frequency_checks)
    assert report.path_latencies["Control"] == pytest.approx(92.3333, abs=1e-3)
    assert report.edge_buffers
    assert "overall: Accept" in report.to_table()


def test_vacuum_with_slow_localization_rejects(vacuum, vacuum_platform):
    _, graph, constraints = vacuum
    perf = load_perf(program_path("vacuum_perf_slow.json"))
    mapping = pinned_map(graph, vacuum_platform, perf, load_pins(program_path("vacuum_pins.json")))
    report = verify(graph, constraints, vacuum_platform, perf, mapping)

    assert report.overall == "Reject"
    assert any(reason.startswith("Fail(Localization: wcet 50 ms > period 20 ms")
               for reason in report.reasons)
    assert report.to_dict()["overall"] == "Reject"


def test_no_constraints_warns_but_accepts():
    graph, platform, perf, mapping = localization_case(50.0, 15.0)
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert report.accepted
    assert any(w.startswith("NoTimingConstraints") for w in report.warnings)


def test_blocking_fails_unless_allowed():
    graph, platform, perf, mapping = single_pe_case(
        [sensor("S", 100.0), compute("A", 10.0), compute("B", 100.0)],
        [edge("S", "A"), edge("S", "B")], {"A": 15.0, "B": 8.0})

    strict = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert strict.node_verdicts["B"].status is VerdictStatus.FAIL

    relaxed = verify(graph, ConstraintSet(), platform, perf, mapping,
                     VerifierConfig(blocking_is_fatal=False))
    assert relaxed.accepted
    assert relaxed.node_verdicts["B"].status is VerdictStatus.WARN
    assert any("blocked by A" in reason for reason in relaxed.node_verdicts["B"].reasons)


def test_consumer_faster_than_producer_only_warns():
    graph, platform, perf, mapping = single_pe_case(
        [sensor("S", 10.0), compute("N", 50.0)], [edge("S", "N")], {"N": 2.0})
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert report.accepted
    assert report.node_verdicts["N"].status is VerdictStatus.WARN


def test_structural_errors_reject_without_mapping():
    graph = Mdfg.build([sensor("S", 10.0), compute("N", 10.0, inputs=2)], [edge("S", "N")])
    report = verify(graph, ConstraintSet(), Platform(), PerfSpec(), None)
    assert not report.accepted
    assert any("DanglingPort" in reason for reason in report.reasons)


def test_missing_spec_is_a_reject_reason():
    graph = Mdfg.build([sensor("S", 10.0), compute("N", 10.0)], [edge("S", "N")])
    platform = Platform((PE("gpu0", PEClass.GPU),))
    mapping = Mapping({"S": "io", "N": "gpu0"}, {"gpu0": PEClass.GPU})
    report = verify(graph, ConstraintSet(), platform, PerfSpec(), mapping)
    assert report.reasons == ["no performance specification for N on GPU"]


def test_disconnected_graph_rejects():
    graph, platform, perf, mapping = single_pe_case(
        [sensor("A", 10.0), compute("B", 10.0), sensor("C", 10.0), compute("D", 10.0)],
        [edge("A", "B"), edge("C", "D")], {"B": 1.0, "D": 1.0})
    report = verify(graph, ConstraintSet(), platform, perf, mapping)
    assert not report.accepted
    assert report.reasons == ["Disconnected: <graph>: 2 components: A,B; C,D"]
    assert any("Disconnected" in warning for warning in report.warnings)


def test_slower_node_never_turns_fail_into_pass():
    rng = random.Random(31)
    checked = 0
    for case in generate_corpus(60, seed=4):
        if case.mapping is None:
            continue
        compute_nodes = sorted(case.mapping.configs)
        node = rng.choice(compute_nodes)
        slower = scale_wcet(case.perf, node, rng.uniform(1.5, 20.0))
        before = verify(case.graph, ConstraintSet(), case.platform, case.perf, case.mapping)
        after = verify(case.graph, ConstraintSet(), case.platform, slower, case.mapping)
        checked += 1

        assert before.accepted or not after.accepted, case.seed
        for name, verdict in before.node_verdicts.items():
            if verdict.status is VerdictStatus.FAIL:
                assert after.node_verdicts[name].status is VerdictStatus.FAIL, (case.seed, name)
        for sink, bound in before.path_latencies.items():
            assert after.path_latencies[sink] >= bound - 1e-9, (case.seed, sink)
    assert checked >= 30
