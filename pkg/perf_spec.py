"""
Performance Specifications
Platforms (processing elements) and per-(node, PE class, config) latency and
power entries, loaded from the JSON files described in docs/schemas/.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from errors import InputFileError, MissingSpecError

logger = logging.getLogger(__name__)

IO_PE = "io"
DEFAULT_CONFIG = "default"


class PEClass(str, Enum):
    CPU = "CPU"
    GPU = "GPU"
    DSP = "DSP"
    ACCEL = "ACCEL"


@dataclass(frozen=True)
class LatencyModel:
    """Latency grows linearly with the environment workload (e.g. feature points)."""

    base_ms: float
    slope_ms_per_unit: float = 0.0
    workload_max: float = 0.0
    workload_mean: Optional[float] = None

    def __post_init__(self):
        if self.base_ms < 0 or self.slope_ms_per_unit < 0 or self.workload_max < 0:
            raise ValueError("latency model terms must be non-negative")
        if self.workload_mean is not None and not 0 <= self.workload_mean <= self.workload_max:
            raise ValueError("workload_mean must lie within [0, workload_max]")

    @property
    def mean_workload(self) -> float:
        if self.workload_mean is None:
            return self.workload_max / 2
        return self.workload_mean

    @property
    def wcet_ms(self) -> float:
        return self.base_ms + self.slope_ms_per_unit * self.workload_max

    @property
    def acet_ms(self) -> float:
        return self.base_ms + self.slope_ms_per_unit * self.mean_workload

    def latency_at(self, workload: float) -> float:
        return self.base_ms + self.slope_ms_per_unit * workload


@dataclass(frozen=True)
class PerfEntry:
    node: str
    pe_class: PEClass
    config: str
    model: LatencyModel
    power_mw: float
    idle_mw: float = 0.0

    @property
    def wcet_ms(self) -> float:
        return self.model.wcet_ms

    @property
    def acet_ms(self) -> float:
        return self.model.acet_ms

    def utilization(self, rate_hz: float) -> float:
        return self.wcet_ms * rate_hz / 1000.0

    def to_dict(self) -> dict:
        data = {
            "node": self.node,
            "pe_class": self.pe_class.value,
            "config": self.config,
            "base_ms": self.model.base_ms,
            "slope_ms_per_unit": self.model.slope_ms_per_unit,
            "workload_max": self.model.workload_max,
            "power_mw": self.power_mw,
            "idle_mw": self.idle_mw,
        }
        if self.model.workload_mean is not None:
            data["workload_mean"] = self.model.workload_mean
        return data


@dataclass(frozen=True)
class PerfSpec:
    entries: dict = field(default_factory=dict)

    @classmethod
    def of(cls, entries) -> "PerfSpec":
        table = {}
        for entry in entries:
            key = (entry.node, entry.pe_class, entry.config)
            if key in table:
                raise InputFileError(f"duplicate perf entry for {entry.node} on "
                                     f"{entry.pe_class.value} config {entry.config}")
            table[key] = entry
        return cls(table)

    def configs(self, node: str, pe_class: PEClass) -> list:
        """All entries for ``node`` on ``pe_class``, ordered by config id."""
        found = [entry for (name, klass, _), entry in self.entries.items()
                 if name == node and klass is PEClass(pe_class)]
        return sorted(found, key=lambda entry: entry.config)

    def entry(self, node: str, pe_class: PEClass, config: Optional[str] = None) -> PerfEntry:
        """Look up one entry.

        Without an explicit config the ``default`` config is used when present,
        otherwise the fastest (smallest wcet) one.

        Raises:
            MissingSpecError: no entry for the node on that class (or config).
        """
        pe_class = PEClass(pe_class)
        if config is not None:
            try:
                return self.entries[(node, pe_class, config)]
            except KeyError:
                raise MissingSpecError(node, f"{pe_class.value}/{config}") from None
        candidates = self.configs(node, pe_class)
        if not candidates:
            raise MissingSpecError(node, pe_class.value)
        for candidate in candidates:
            if candidate.config == DEFAULT_CONFIG:
                return candidate
        return min(candidates, key=lambda entry: (entry.wcet_ms, entry.config))

    def to_dict(self) -> dict:
        return {"entries": [self.entries[key].to_dict()
                            for key in sorted(self.entries, key=lambda k: (k[0], k[1].value, k[2]))]}

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PE:
    id: str
    pe_class: PEClass


@dataclass(frozen=True)
class Platform:
    pes: tuple = ()

    def __post_init__(self):
        ids = [pe.id for pe in self.pes]
        if len(set(ids)) != len(ids):
            raise InputFileError("platform lists a PE id more than once")
        if IO_PE in ids:
            raise InputFileError(f"PE id '{IO_PE}' is reserved for sensors and actuators")

    def pe(self, pe_id: str) -> PE:
        for pe in self.pes:
            if pe.id == pe_id:
                return pe
        raise InputFileError(f"unknown PE '{pe_id}'")

    def class_of(self, pe_id: str) -> Optional[PEClass]:
        if pe_id == IO_PE:
            return None
        return self.pe(pe_id).pe_class

    def to_dict(self) -> dict:
        return {"pes": [{"id": pe.id, "class": pe.pe_class.value} for pe in self.pes]}


def read_json(path) -> dict:
    """Read a JSON document, turning IO and decode failures into InputFileError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error loading {path}: {e}")
        raise InputFileError(f"cannot read {path}: {e}") from e


def platform_from_dict(data: dict) -> Platform:
    try:
        pes = tuple(PE(str(item["id"]), PEClass(item["class"])) for item in data["pes"])
    except (KeyError, TypeError, ValueError) as e:
        raise InputFileError(f"malformed platform: {e}") from e
    return Platform(pes)


def entry_from_dict(item: dict) -> PerfEntry:
    try:
        if "wcet_ms" in item:
            wcet = float(item["wcet_ms"])
            acet = float(item.get("acet_ms", wcet))
            if not 0 < acet <= wcet:
                raise ValueError(f"need wcet >= acet > 0, got wcet {wcet} acet {acet}")
            model = LatencyModel(acet, wcet - acet, 1.0, 0.0)
        else:
            model = LatencyModel(float(item["base_ms"]), float(item.get("slope_ms_per_unit", 0.0)),
                                 float(item.get("workload_max", 0.0)),
                                 None if item.get("workload_mean") is None
                                 else float(item["workload_mean"]))
        if model.acet_ms <= 0:
            raise ValueError(f"latency of {item.get('node')} must be positive")
        return PerfEntry(str(item["node"]), PEClass(item["pe_class"]),
                         str(item.get("config", DEFAULT_CONFIG)), model,
                         float(item.get("power_mw", 0.0)), float(item.get("idle_mw", 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise InputFileError(f"malformed perf entry {item!r}: {e}") from e


def perf_from_dict(data: dict) -> PerfSpec:
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise InputFileError("perf spec must be an object with an 'entries' list")
    return PerfSpec.of(entry_from_dict(item) for item in data["entries"])


def load_platform(path) -> Platform:
    platform = platform_from_dict(read_json(path))
    logger.info(f"Loaded platform {Path(path).name}: {len(platform.pes)} PEs")
    return platform


def load_perf(path) -> PerfSpec:
    perf = perf_from_dict(read_json(path))
    logger.info(f"Loaded {len(perf)} perf entries from {Path(path).name}")
    return perf
