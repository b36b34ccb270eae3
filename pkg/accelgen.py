"""
Accelerator Generator
Design-space exploration over discrete hardware knobs: latency-vs-power
Pareto frontiers (exhaustive and branch-and-bound), the bridge from frontier
points to perf entries, and the run-time governor that picks a configuration
for the observed workload.
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from errors import EmptyFrontierError, KnobModelError, NoSafeConfigError, OverflowGuardError
from perf_spec import LatencyModel, PEClass, PerfEntry, PerfSpec, read_json

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 1_000_000


@dataclass(frozen=True)
class Knob:
    name: str
    values: tuple


@dataclass(frozen=True)
class StageModel:
    """latency(w) = c0 + c1/k_a + c2/(k_a*k_b) + w*(w0 + w1/k_a); power = p0 + p1*k_p."""

    name: str
    latency_knob: Optional[str] = None
    pair_knob: Optional[str] = None
    power_knob: Optional[str] = None
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    w0: float = 0.0
    w1: float = 0.0
    p0: float = 0.0
    p1: float = 0.0


@dataclass(frozen=True)
class KnobSpace:
    knobs: tuple
    stages: tuple
    static_mw: float = 0.0

    def __post_init__(self):
        names = [knob.name for knob in self.knobs]
        if len(set(names)) != len(names):
            raise KnobModelError("knob names must be unique")
        for knob in self.knobs:
            values = tuple(knob.values)
            if not values:
                raise KnobModelError(f"knob '{knob.name}' has no values")
            if any(v <= 0 for v in values):
                raise KnobModelError(f"knob '{knob.name}' values must be positive")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise KnobModelError(f"knob '{knob.name}' values must be strictly ascending")
        for stage in self.stages:
            for ref in (stage.latency_knob, stage.pair_knob, stage.power_knob):
                if ref is not None and ref not in names:
                    raise KnobModelError(f"stage '{stage.name}' references unknown knob '{ref}'")
            coefficients = (stage.c0, stage.c1, stage.c2, stage.w0, stage.w1, stage.p0, stage.p1)
            if any(c < 0 for c in coefficients):
                raise KnobModelError(f"stage '{stage.name}' has a negative coefficient")
            if stage.latency_knob is None and (stage.c1 or stage.c2 or stage.w1):
                raise KnobModelError(f"stage '{stage.name}' uses c1/c2/w1 without a latency knob")
            if stage.pair_knob is None and stage.c2:
                raise KnobModelError(f"stage '{stage.name}' uses c2 without a pair knob")
            if stage.power_knob is None and stage.p1:
                raise KnobModelError(f"stage '{stage.name}' uses p1 without a power knob")
        if self.static_mw < 0:
            raise KnobModelError("static_mw must be non-negative")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(names)})

    @property
    def size(self) -> int:
        total = 1
        for knob in self.knobs:
            total *= len(knob.values)
        return total

    def linear_terms(self, config: tuple) -> tuple:
        """(base_ms, slope_ms_per_unit, power_mw) of a full configuration."""
        base = 0.0
        slope = 0.0
        power = self.static_mw
        index = self._index
        for stage in self.stages:
            base += stage.c0
            slope += stage.w0
            if stage.latency_knob is not None:
                ka = config[index[stage.latency_knob]]
                base += stage.c1 / ka
                slope += stage.w1 / ka
                if stage.pair_knob is not None:
                    base += stage.c2 / (ka * config[index[stage.pair_knob]])
            power += stage.p0
            if stage.power_knob is not None:
                power += stage.p1 * config[index[stage.power_knob]]
        return base, slope, power

    def evaluate(self, config: tuple, workload: float) -> tuple:
        base, slope, power = self.linear_terms(config)
        return base + slope * workload, power

    def config_id(self, config: tuple) -> str:
        return ",".join(f"{knob.name}={_fmt(value)}" for knob, value in zip(self.knobs, config))


def _fmt(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _number(data: dict, key: str, where: str) -> float:
    value = data.get(key, 0.0)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise KnobModelError(f"{where}: '{key}' must be a number")
    return float(value)


def knob_space_from_dict(data: dict) -> KnobSpace:
    if not isinstance(data, dict):
        raise KnobModelError("knob model must be a JSON object")
    try:
        knobs = tuple(Knob(str(item["name"]), tuple(item["values"])) for item in data["knobs"])
        stages = []
        for position, item in enumerate(data["stages"]):
            where = f"stage {item.get('name', position)}"
            stages.append(StageModel(
                str(item.get("name", f"stage{position}")),
                item.get("latency_knob"), item.get("pair_knob"), item.get("power_knob"),
                *(_number(item, key, where) for key in ("c0", "c1", "c2", "w0", "w1", "p0", "p1"))))
    except (KeyError, TypeError) as e:
        raise KnobModelError(f"malformed knob model: {e}") from e
    return KnobSpace(knobs, tuple(stages), _number(data, "static_mw", "model"))


def load_knob_space(path) -> tuple:
    """Returns (KnobSpace, raw document) so callers can read deadline and node."""
    data = read_json(path)
    space = knob_space_from_dict(data)
    logger.info(f"Loaded knob model with {len(space.knobs)} knobs, {space.size} configs")
    return space, data


@dataclass(frozen=True)
class FrontierPoint:
    config: tuple
    config_id: str
    latency_ms: float
    power_mw: float
    base_ms: float
    slope_ms_per_unit: float

    def latency_at(self, workload: float) -> float:
        return self.base_ms + self.slope_ms_per_unit * workload


@dataclass(frozen=True)
class ParetoFrontier:
    """Non-dominated feasible points, ascending latency, strictly decreasing power."""

    points: tuple
    deadline_ms: float
    workload: float
    visited: int = 0
    space_size: int = 0

    def fastest(self) -> FrontierPoint:
        return self.points[0]

    def cheapest(self) -> FrontierPoint:
        return self.points[-1]

    def configs(self) -> set:
        return {point.config for point in self.points}

    def csv_rows(self, knob_names: list) -> list:
        rows = [["latency_ms", "power_mw", *knob_names]]
        for point in self.points:
            rows.append([f"{point.latency_ms:.6g}", f"{point.power_mw:.6g}",
                         *(_fmt(value) for value in point.config)])
        return rows

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def _point(space: KnobSpace, config: tuple, workload: float) -> FrontierPoint:
    base, slope, power = space.linear_terms(config)
    return FrontierPoint(config, space.config_id(config), base + slope * workload, power, base, slope)


def _sweep(points: list) -> tuple:
    """Keep points whose power beats everything faster (ties: smallest config)."""
    frontier = []
    best_power = None
    for point in sorted(points, key=lambda p: (p.latency_ms, p.power_mw, p.config)):
        if best_power is None or point.power_mw < best_power:
            frontier.append(point)
            best_power = point.power_mw
    return tuple(frontier)


def _evaluate_slice(space: KnobSpace, first_value, deadline_ms: float, workload: float) -> list:
    rest = [knob.values for knob in space.knobs[1:]]
    found = []
    for tail in itertools.product(*rest):
        point = _point(space, (first_value, *tail), workload)
        if point.latency_ms <= deadline_ms:
            found.append(point)
    return found


def enumerate_pareto(space: KnobSpace, deadline_ms: float, workload_max: float,
                     workers: int = 1) -> ParetoFrontier:
    """Exhaustive frontier; every configuration is evaluated at ``workload_max``.

    With ``workers > 1`` slices of the first knob are evaluated in worker
    processes; the merge is order-independent.

    Raises:
        OverflowGuardError: more than EXHAUSTIVE_LIMIT configurations.
        EmptyFrontierError: no configuration meets the deadline.
    """
    if space.size > EXHAUSTIVE_LIMIT:
        raise OverflowGuardError(f"{space.size} configurations exceed the exhaustive limit "
                                 f"of {EXHAUSTIVE_LIMIT}")
    if not space.knobs:
        feasible = [p for p in [_point(space, (), workload_max)] if p.latency_ms <= deadline_ms]
    elif workers > 1:
        first_values = space.knobs[0].values
        with ProcessPoolExecutor(max_workers=workers) as pool:
            slices = pool.map(_evaluate_slice, [space] * len(first_values), first_values,
                              [deadline_ms] * len(first_values), [workload_max] * len(first_values))
            feasible = [point for chunk in slices for point in chunk]
    else:
        feasible = []
        for value in space.knobs[0].values:
            feasible.extend(_evaluate_slice(space, value, deadline_ms, workload_max))
    if not feasible:
        raise EmptyFrontierError(f"no configuration meets the {deadline_ms:g} ms deadline")
    frontier = ParetoFrontier(_sweep(feasible), deadline_ms, workload_max, space.size, space.size)
    logger.info(f"Exhaustive search: {space.size} configs, {len(frontier)} frontier points")
    return frontier


def pruned_pareto(space: KnobSpace, deadline_ms: float, workload_max: float) -> ParetoFrontier:
    """Branch-and-bound frontier, identical to :func:`enumerate_pareto`.

    Knob values are tried from largest (fastest) to smallest. Latency only grows
    as a value shrinks, so a partial configuration whose best case misses the
    deadline ends the loop over that knob. A subtree is also cut when a point
    already found strictly dominates its best case.
    """
    knobs = space.knobs
    depth = len(knobs)
    descending = [tuple(sorted(knob.values, reverse=True)) for knob in knobs]
    fastest_tail = [knob.values[-1] for knob in knobs]
    cheapest_tail = [knob.values[0] for knob in knobs]
    feasible = []
    archive = []  # mutually non-dominated subset of feasible
    visited = 0

    def dominated(latency: float, power: float) -> bool:
        for point in archive:
            if point.latency_ms <= latency and point.power_mw <= power and \
                    (point.latency_ms < latency or point.power_mw < power):
                return True
        return False

    def remember(point: FrontierPoint):
        feasible.append(point)
        for kept in archive:
            if kept.latency_ms <= point.latency_ms and kept.power_mw <= point.power_mw:
                return
        archive[:] = [kept for kept in archive
                      if not (point.latency_ms <= kept.latency_ms and point.power_mw <= kept.power_mw)]
        archive.append(point)

    def search(prefix: list):
        nonlocal visited
        level = len(prefix)
        if level == depth:
            visited += 1
            point = _point(space, tuple(prefix), workload_max)
            if point.latency_ms <= deadline_ms:
                remember(point)
            return
        for value in descending[level]:
            partial = prefix + [value]
            best_latency, _ = space.evaluate(tuple(partial + fastest_tail[level + 1:]), workload_max)
            if best_latency > deadline_ms:
                break
            _, best_power = space.evaluate(tuple(partial + cheapest_tail[level + 1:]), workload_max)
            if dominated(best_latency, best_power):
                continue
            search(partial)

    search([])
    if not feasible:
        raise EmptyFrontierError(f"no configuration meets the {deadline_ms:g} ms deadline")
    frontier = ParetoFrontier(_sweep(feasible), deadline_ms, workload_max, visited, space.size)
    logger.info(f"Pruned search: visited {visited} of {space.size} configs "
                f"({100.0 * visited / space.size:.2f}%), {len(frontier)} frontier points")
    return frontier


def frontier_perf_entries(frontier: ParetoFrontier, node: str, workload_max: float,
                          workload_mean: Optional[float] = None, idle_mw: float = 0.0) -> PerfSpec:
    """One ACCEL perf entry per frontier point, keyed by its config id."""
    entries = []
    for point in frontier:
        model = LatencyModel(point.base_ms, point.slope_ms_per_unit, workload_max, workload_mean)
        entries.append(PerfEntry(node, PEClass.ACCEL, point.config_id, model, point.power_mw, idle_mw))
    return PerfSpec.of(entries)


def _min_power_safe(frontier: ParetoFrontier, workload: float, deadline_ms: float):
    safe = [point for point in frontier if point.latency_at(workload) <= deadline_ms]
    return min(safe, key=lambda p: (p.power_mw, p.config)) if safe else None


def governor_step(frontier: ParetoFrontier, current: FrontierPoint, observed_workload: float,
                  deadline_ms: float, hysteresis: float) -> FrontierPoint:
    """Pick the configuration for ``observed_workload``.

    Stepping down to a cheaper point needs it to be safe at the workload
    widened by ``hysteresis``; the current point is kept while it is still safe
    at the observed workload. An unsafe current point is replaced at once.

    Raises:
        NoSafeConfigError: even the fastest point misses at the observed workload.
    """
    if current not in frontier.points:
        raise ValueError(f"config {current.config_id} is not on the frontier")
    widened = observed_workload * (1.0 + hysteresis)
    cheaper = _min_power_safe(frontier, widened, deadline_ms)
    if current.latency_at(observed_workload) <= deadline_ms:
        if cheaper is not None and cheaper.power_mw < current.power_mw:
            return cheaper
        return current
    if cheaper is not None:
        return cheaper
    fallback = _min_power_safe(frontier, observed_workload, deadline_ms)
    if fallback is None:
        raise NoSafeConfigError(observed_workload, frontier.fastest())
    return fallback


@dataclass
class Governor:
    """Stateful governor; a step down is applied after ``confirm_steps``
    consecutive identical selections, a step up immediately."""

    frontier: ParetoFrontier
    deadline_ms: float
    hysteresis: float = 0.1
    confirm_steps: int = 3
    switch_cost_firings: int = 1
    current: Optional[FrontierPoint] = None
    candidate: Optional[FrontierPoint] = None
    streak: int = 0
    switches: int = 0
    unsafe_steps: int = 0
    pinned: bool = False

    def __post_init__(self):
        if not self.frontier.points:
            raise EmptyFrontierError("governor needs a non-empty frontier")
        if self.current is None:
            self.current = self.frontier.fastest()

    def step(self, workload: float) -> bool:
        """Advance one observation; returns True when the configuration changed."""
        try:
            selected = governor_step(self.frontier, self.current, workload,
                                     self.deadline_ms, self.hysteresis)
        except NoSafeConfigError as e:
            self.unsafe_steps += 1
            self.pinned = True
            self.candidate, self.streak = None, 0
            logger.warning(f"{e.message}; pinning {e.fastest.config_id}")
            return self._switch(e.fastest)
        self.pinned = False
        if selected == self.current:
            self.candidate, self.streak = None, 0
            return False
        if self.current.latency_at(workload) > self.deadline_ms or selected.power_mw > self.current.power_mw:
            self.candidate, self.streak = None, 0
            return self._switch(selected)
        if selected == self.candidate:
            self.streak += 1
        else:
            self.candidate, self.streak = selected, 1
        if self.streak >= self.confirm_steps:
            self.candidate, self.streak = None, 0
            return self._switch(selected)
        return False

    def _switch(self, point: FrontierPoint) -> bool:
        if point == self.current:
            return False
        logger.debug(f"Governor switch {self.current.config_id} -> {point.config_id}")
        self.current = point
        self.switches += 1
        return True

    def observe(self, workload: float) -> bool:
        return self.step(workload)

    def latency_at(self, workload: float) -> float:
        return self.current.latency_at(workload)


@dataclass(frozen=True)
class GovernorSample:
    time_ms: float
    workload: float
    config_id: str
    latency_ms: float
    power_mw: float
    switched: bool
    safe: bool


def replay_governor(governor: Governor, env, step_ms: float, horizon_ms: float) -> list:
    """Drive ``governor`` with ``env`` sampled every ``step_ms``."""
    samples = []
    steps = int(horizon_ms // step_ms)
    for index in range(steps):
        t = index * step_ms
        workload = env.at(t)
        if workload is None:
            workload = governor.frontier.workload
        switched = governor.step(workload)
        point = governor.current
        latency = point.latency_at(workload)
        samples.append(GovernorSample(t, workload, point.config_id, latency, point.power_mw,
                                      switched, latency <= governor.deadline_ms))
    logger.info(f"Governor replay: {len(samples)} steps, {governor.switches} switch(es), "
                f"{governor.unsafe_steps} unsafe step(s)")
    return samples
