"""Model of an aging service process: bloating containers, requests and launch times.

The simpy event loop that drives this model lives in :mod:`agewatch.engine`.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import tomllib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence

import numpy as np

from .candidacy import ListedContainers, RejuvenationList
from .detector import DetectorConfig
from .errors import ConfigError, InvariantViolation, NotRejuvenable, ParseError
from .heap import HeapSnapshot, ObjectId, ObjectRecord
from .scheduler import LoadThresholds, SchedulerPolicy
from .utils import check_keys

LOGGER = logging.getLogger(__name__)

ROOT_ID: ObjectId = 1
REGISTRY_ID: ObjectId = 2
ELEMENT_ID_BASE: ObjectId = 1_000_000

DEFAULT_EVENTS = {
    "app_switch": 0.2,
    "navigation": 0.2,
    "single_touch": 0.2,
    "swipe": 0.2,
    "multi_touch": 0.2,
}
DEFAULT_TARGETS = {
    "app_switch": "activity_manager",
    "navigation": "activity_manager",
    "single_touch": "power_manager",
    "swipe": "wifi",
    "multi_touch": "power_manager",
}
TRIGGERS = ("none", "periodic", "detector")


@dataclass
class SimContainer:
    name: str
    class_name: str = "java.util.ArrayList"
    element_class: str = "java.lang.Object"
    growth_rate: float = 0.0
    element_size: int = 1024
    flush_on_rejuvenate: bool = False
    initial_elements: int = 0
    shared: bool = False
    hot: bool = False
    flush_fraction: float = 1.0
    flush_older_than_s: Optional[float] = None
    shallow_size: int = 40
    object_id: ObjectId = 0
    elements: deque = field(default_factory=deque, repr=False, compare=False)
    created_total: int = field(default=0, repr=False, compare=False)
    epoch: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.growth_rate < 0:
            raise ConfigError(f"container {self.name}: growth_rate must not be negative")
        if self.element_size <= 0:
            raise ConfigError(f"container {self.name}: element_size must be positive")
        if not 0 < self.flush_fraction <= 1:
            raise ConfigError(f"container {self.name}: flush_fraction must lie in (0, 1]")
        if self.flush_older_than_s is not None and self.flush_older_than_s < 0:
            raise ConfigError(f"container {self.name}: flush_older_than_s must not be negative")
        if self.initial_elements < 0:
            raise ConfigError(f"container {self.name}: initial_elements must not be negative")

    @property
    def element_count(self) -> int:
        return len(self.elements)

    @property
    def bloat_bytes(self) -> int:
        return len(self.elements) * self.element_size

    @property
    def snapshot_name(self) -> str:
        return f"{self.class_name}@{self.object_id}"

    def boot(self, now: float, ids: Iterator[ObjectId]) -> None:
        self.elements.clear()
        self.epoch = now
        self.created_total = 0
        for _ in range(self.initial_elements):
            self.elements.append((next(ids), now))

    def advance(self, now: float, ids: Iterator[ObjectId]) -> None:
        """Add every element due by ``now``; element k is created at ``epoch + k / growth_rate``."""

        if self.growth_rate <= 0:
            return
        due = math.floor(self.growth_rate * (now - self.epoch) + 1e-9)
        while self.created_total < due:
            self.created_total += 1
            self.elements.append((next(ids), self.epoch + self.created_total / self.growth_rate))

    def flush(self, now: float) -> int:
        if self.flush_older_than_s is None:
            eligible = len(self.elements)
        else:
            cutoff = now - self.flush_older_than_s
            eligible = sum(1 for _, created in self.elements if created <= cutoff)
        remove = math.ceil(self.flush_fraction * eligible - 1e-9)
        for _ in range(remove):
            self.elements.popleft()
        return remove


@dataclass
class Request:
    id: int
    kind: str
    arrived_at: float
    processed_at: Optional[float] = None


class RequestGate:
    """Requests to one service; queued while the service is paused, drained FIFO on resume."""

    def __init__(self) -> None:
        self.arrived = 0
        self.processed: list[Request] = []
        self.queue: deque[Request] = deque()
        self.paused = False
        self.pauses: list[tuple[float, float]] = []
        self._paused_at: Optional[float] = None

    def submit(self, request: Request, now: float) -> None:
        self.arrived += 1
        if self.paused:
            self.queue.append(request)
        else:
            request.processed_at = now
            self.processed.append(request)
        self.check()

    def pause(self, now: float) -> None:
        if self.paused:
            raise InvariantViolation("service paused twice")
        self.paused = True
        self._paused_at = now

    def resume(self, now: float) -> list[Request]:
        if not self.paused:
            raise InvariantViolation("resume without pause")
        self.paused = False
        self.pauses.append((self._paused_at if self._paused_at is not None else now, now))
        drained = list(self.queue)
        self.queue.clear()
        for request in drained:
            request.processed_at = now
            self.processed.append(request)
        self.check()
        return drained

    def check(self) -> None:
        if len(self.processed) + len(self.queue) != self.arrived:
            raise InvariantViolation(
                f"request conservation broken: {len(self.processed)} processed + "
                f"{len(self.queue)} queued != {self.arrived} arrived"
            )

    def counters(self) -> dict[str, int]:
        return {"arrived": self.arrived, "processed": len(self.processed), "queued": len(self.queue)}


@dataclass
class SimService:
    name: str
    containers: list[SimContainer] = field(default_factory=list)
    registered_rejuvenable: bool = False
    class_name: str = "com.android.server.SystemService"
    object_id: ObjectId = 0
    gate: RequestGate = field(default_factory=RequestGate, repr=False, compare=False)

    @property
    def bloat_bytes(self) -> int:
        return sum(container.bloat_bytes for container in self.containers)

    def container(self, name: str) -> SimContainer:
        for container in self.containers:
            if container.name == name:
                return container
        raise KeyError(f"{self.name} has no container {name}")


@dataclass(frozen=True)
class FlushEvent:
    service: str
    t: float
    removed: Mapping[str, int]
    bytes_freed: int


def rejuvenate_service(service: SimService, now: float) -> FlushEvent:
    """Pause the service's requests and flush its flagged containers.

    The caller resumes ``service.gate`` once the pause has elapsed.
    """

    if not service.registered_rejuvenable:
        raise NotRejuvenable(f"service {service.name} is not registered for rejuvenation")
    service.gate.pause(now)
    removed: dict[str, int] = {}
    freed = 0
    for container in service.containers:
        if not container.flush_on_rejuvenate:
            continue
        count = container.flush(now)
        removed[container.name] = count
        freed += count * container.element_size
    LOGGER.debug("Flushed %s at t=%.1f: %d bytes", service.name, now, freed)
    return FlushEvent(service=service.name, t=now, removed=removed, bytes_freed=freed)


def boot_services(services: Sequence[SimService], now: float, ids: Iterator[ObjectId]) -> None:
    for service in services:
        for container in service.containers:
            container.boot(now, ids)


def apply_rejuvenation_list(
    services: Sequence[SimService],
    listed: RejuvenationList | ListedContainers,
    process_name: str = "system_server",
) -> list[str]:
    """Flag the containers named in a rejuvenation list as flushed on rejuvenation."""

    if isinstance(listed, RejuvenationList):
        process, names = listed.process_name, listed.container_names
    else:
        process, names = listed.process, list(listed.containers)
    if process and process != process_name:
        raise ConfigError(f"rejuvenation list is for process {process!r}, not {process_name!r}")

    by_name = {
        container.snapshot_name: (service, container)
        for service in services
        for container in service.containers
    }
    applied: list[str] = []
    for name in names:
        match = by_name.get(name)
        if match is None:
            LOGGER.warning("Container %s from the rejuvenation list is not simulated", name)
            continue
        service, container = match
        if not service.registered_rejuvenable:
            LOGGER.warning("Skipping %s: service %s is not registered", name, service.name)
            continue
        container.flush_on_rejuvenate = True
        applied.append(name)
    return applied


def assign_object_ids(services: Sequence[SimService]) -> None:
    """Give services and containers distinct ids between the GC roots and the element range."""

    ids = itertools.count(REGISTRY_ID + 1)
    for service in services:
        service.object_id = next(ids)
        for container in service.containers:
            container.object_id = next(ids)
    if next(ids) > ELEMENT_ID_BASE:
        raise ConfigError("too many simulated services and containers")


def build_heap_snapshot(
    services: Sequence[SimService], now: float, process_name: str, snapshot_id: str
) -> HeapSnapshot:
    shared = [c.object_id for s in services for c in s.containers if c.shared]
    objects = [
        ObjectRecord(ROOT_ID, "com.android.server.SystemServer", 16, tuple(s.object_id for s in services)),
        ObjectRecord(REGISTRY_ID, "android.os.ServiceManager", 16, tuple(shared)),
    ]
    for service in services:
        objects.append(
            ObjectRecord(
                service.object_id,
                service.class_name,
                64,
                tuple(container.object_id for container in service.containers),
            )
        )
        for container in service.containers:
            objects.append(
                ObjectRecord(
                    container.object_id,
                    container.class_name,
                    container.shallow_size,
                    tuple(element_id for element_id, _ in container.elements),
                )
            )
            objects.extend(
                ObjectRecord(
                    element_id,
                    container.element_class,
                    container.element_size,
                    (),
                    created_at=created,
                    last_access=now if container.hot else created,
                )
                for element_id, created in container.elements
            )
    return HeapSnapshot(
        snapshot_id=snapshot_id,
        timestamp=now,
        process_name=process_name,
        gc_roots=(ROOT_ID, REGISTRY_ID),
        objects=tuple(objects),
    )


@dataclass(frozen=True)
class ActivityProfile:
    name: str
    base_ms: float
    sensitivity: float = 1.0

    def __post_init__(self) -> None:
        if self.base_ms <= 0 or self.sensitivity < 0:
            raise ConfigError(f"activity {self.name}: base_ms must be positive, sensitivity not negative")


@dataclass(frozen=True)
class LaunchTimeModel:
    """LT = base + sensitivity * (bloat_coefficient * bloat + drift * uptime) + noise, floored at base / 2."""

    activities: tuple[ActivityProfile, ...]
    bloat_coefficient: float = 2e-5
    drift_ms_per_s: float = 5e-4
    noise_sd_ms: float = 3.0

    def __post_init__(self) -> None:
        if not self.activities:
            raise ConfigError("launch_time needs at least one activity")
        names = [activity.name for activity in self.activities]
        if len(set(names)) != len(names):
            raise ConfigError("activity names must be unique")
        if self.bloat_coefficient < 0 or self.drift_ms_per_s < 0 or self.noise_sd_ms < 0:
            raise ConfigError("launch_time coefficients must not be negative")

    def profile(self, name: str) -> ActivityProfile:
        for activity in self.activities:
            if activity.name == name:
                return activity
        raise ConfigError(f"unknown activity {name}")

    def expected(self, activity: ActivityProfile, bloat_bytes: float, uptime_s: float) -> float:
        aging = self.bloat_coefficient * bloat_bytes + self.drift_ms_per_s * uptime_s
        return activity.base_ms + activity.sensitivity * aging

    def sample(
        self, activity: ActivityProfile, bloat_bytes: float, uptime_s: float, rng: np.random.Generator
    ) -> float:
        noise = float(rng.normal(0.0, self.noise_sd_ms))
        return max(activity.base_ms / 2, self.expected(activity, bloat_bytes, uptime_s) + noise)


@dataclass(frozen=True)
class WorkloadSpec:
    apps: tuple[str, ...]
    events: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_EVENTS))
    targets: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_TARGETS))
    launch_kill_period_s: float = 10.0
    launch_offset_s: float = 5.0
    gesture_rate_per_s: float = 0.5
    duration_s: float = 21600.0

    def __post_init__(self) -> None:
        if not self.apps:
            raise ConfigError("workload needs at least one app")
        if not math.isclose(sum(self.events.values()), 1.0, abs_tol=1e-9):
            raise ConfigError("workload event probabilities must sum to 1")
        if any(p < 0 for p in self.events.values()):
            raise ConfigError("workload event probabilities must not be negative")
        missing = set(self.events) - set(self.targets)
        if missing:
            raise ConfigError(f"workload events without a target service: {', '.join(sorted(missing))}")
        if self.launch_kill_period_s <= 0 or self.duration_s <= 0 or self.gesture_rate_per_s < 0:
            raise ConfigError("workload periods and duration must be positive")


@dataclass(frozen=True)
class LoadProfile:
    segments: tuple[tuple[float, float], ...] = ((0.0, 50.0),)

    def __post_init__(self) -> None:
        starts = [start for start, _ in self.segments]
        if not starts or starts[0] != 0 or starts != sorted(set(starts)):
            raise ConfigError("load profile must start at 0 with increasing segment starts")

    def cpu_at(self, t: float) -> float:
        current = self.segments[0][1]
        for start, cpu in self.segments:
            if start > t:
                break
            current = cpu
        return current


@dataclass(frozen=True)
class SimExperiment:
    id: str
    rejuvenated_services: frozenset[str] = frozenset()
    trigger: str = "none"
    rejuvenation_period_s: Optional[float] = None
    reboot_period_s: Optional[float] = None
    reboot_downtime_s: float = 120.0
    policy: SchedulerPolicy = field(default_factory=SchedulerPolicy)
    duration_s: Optional[float] = None
    seed: Optional[int] = None
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "rejuvenated_services", frozenset(self.rejuvenated_services))
        if self.trigger not in TRIGGERS:
            raise ConfigError(f"{self.id}: trigger must be one of {', '.join(TRIGGERS)}")
        if self.trigger == "periodic" and not (self.rejuvenation_period_s or 0) > 0:
            raise ConfigError(f"{self.id}: periodic trigger needs rejuvenation_period_s > 0")
        if self.trigger != "none" and not self.rejuvenated_services:
            raise ConfigError(f"{self.id}: trigger {self.trigger} needs rejuvenated_services")
        if self.reboot_period_s is not None and self.reboot_period_s <= 0:
            raise ConfigError(f"{self.id}: reboot_period_s must be positive")
        if self.reboot_downtime_s < 0:
            raise ConfigError(f"{self.id}: reboot_downtime_s must not be negative")

    @property
    def is_baseline(self) -> bool:
        return self.trigger == "none" and self.reboot_period_s is None


@dataclass(frozen=True)
class SimulationSpec:
    services: tuple[SimService, ...]
    launch_time: LaunchTimeModel
    workload: WorkloadSpec
    experiments: tuple[SimExperiment, ...]
    load: LoadProfile = field(default_factory=LoadProfile)
    process_name: str = "system_server"
    seed: int = 1
    sample_period_s: float = 10.0
    snapshot_period_s: float = 3600.0
    pause_s: float = 0.001
    horizon_s: Optional[float] = None
    threshold_ms: float = 200.0
    base_pss_bytes: int = 60_000_000
    total_mem_bytes: int = 2_000_000_000
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    load_thresholds: LoadThresholds = field(default_factory=LoadThresholds)

    def __post_init__(self) -> None:
        names = [service.name for service in self.services]
        if len(set(names)) != len(names):
            raise ConfigError("service names must be unique")
        known = set(names)
        for app in self.workload.apps:
            self.launch_time.profile(app)
        for event, target in self.workload.targets.items():
            if target not in known:
                raise ConfigError(f"workload event {event} targets unknown service {target}")
        ids = [experiment.id for experiment in self.experiments]
        if len(set(ids)) != len(ids):
            raise ConfigError("experiment ids must be unique")
        for experiment in self.experiments:
            unknown = experiment.rejuvenated_services - known
            if unknown:
                raise ConfigError(f"{experiment.id}: unknown services {', '.join(sorted(unknown))}")
            for name in experiment.rejuvenated_services:
                if not self.service(name).registered_rejuvenable:
                    raise ConfigError(f"{experiment.id}: service {name} is not registered for rejuvenation")
        if self.sample_period_s <= 0 or self.pause_s < 0 or self.snapshot_period_s < 0:
            raise ConfigError("simulation periods must be positive")
        if self.threshold_ms <= 0:
            raise ConfigError("simulation.threshold_ms must be positive")
        assign_object_ids(self.services)

    def service(self, name: str) -> SimService:
        for service in self.services:
            if service.name == name:
                return service
        raise ConfigError(f"unknown service {name}")

    def experiment(self, experiment_id: str) -> SimExperiment:
        for experiment in self.experiments:
            if experiment.id == experiment_id:
                return experiment
        raise ConfigError(f"unknown experiment {experiment_id}")

    def duration_of(self, experiment: SimExperiment) -> float:
        return experiment.duration_s or self.workload.duration_s

    def horizon_of(self, experiment: SimExperiment) -> float:
        return self.horizon_s or self.duration_of(experiment)


_CONTAINER_KEYS = {
    "name", "class_name", "element_class", "growth_rate", "element_size", "flush_on_rejuvenate",
    "initial_elements", "shared", "hot", "flush_fraction", "flush_older_than_s", "shallow_size",
}
_SIMULATION_KEYS = {
    "process_name", "seed", "sample_period_s", "snapshot_period_s", "pause_s", "horizon_s",
    "threshold_ms", "base_pss_bytes", "total_mem_bytes",
}


def _service_from_mapping(data: Mapping[str, Any]) -> SimService:
    check_keys(data, {"name", "class_name", "registered", "containers"}, "services")
    if "name" not in data:
        raise ConfigError("every service needs a name")
    containers = []
    for raw in data.get("containers", []):
        check_keys(raw, _CONTAINER_KEYS, f"services.{data['name']}.containers")
        if "name" not in raw:
            raise ConfigError(f"service {data['name']}: every container needs a name")
        containers.append(SimContainer(**raw))
    return SimService(
        name=data["name"],
        containers=containers,
        registered_rejuvenable=bool(data.get("registered", False)),
        class_name=data.get("class_name", "com.android.server.SystemService"),
    )


def _experiment_from_mapping(data: Mapping[str, Any]) -> SimExperiment:
    check_keys(
        data,
        {
            "id", "rejuvenated_services", "trigger", "rejuvenation_period_s", "reboot_period_s",
            "reboot_downtime_s", "policy", "duration_s", "seed", "description",
        },
        "experiments",
    )
    if "id" not in data:
        raise ConfigError("every experiment needs an id")
    values = dict(data)
    values["rejuvenated_services"] = frozenset(values.get("rejuvenated_services", ()))
    if "policy" in values:
        values["policy"] = SchedulerPolicy.from_mapping(values["policy"])
    return SimExperiment(**values)


def spec_from_mapping(document: Mapping[str, Any]) -> SimulationSpec:
    check_keys(
        document,
        {"simulation", "launch_time", "workload", "load", "services", "experiments", "detector", "load_thresholds"},
        "spec",
    )
    simulation = dict(document.get("simulation", {}))
    check_keys(simulation, _SIMULATION_KEYS, "simulation")

    raw_lt = dict(document.get("launch_time", {}))
    check_keys(raw_lt, {"activities", "bloat_coefficient", "drift_ms_per_s", "noise_sd_ms"}, "launch_time")
    activities = []
    for raw in raw_lt.pop("activities", []):
        check_keys(raw, {"name", "base_ms", "sensitivity"}, "launch_time.activities")
        try:
            activities.append(ActivityProfile(**raw))
        except TypeError as exc:
            raise ConfigError(f"launch_time.activities: {exc}") from None
    launch_time = LaunchTimeModel(activities=tuple(activities), **raw_lt)

    raw_workload = dict(document.get("workload", {}))
    check_keys(
        raw_workload,
        {"apps", "events", "targets", "launch_kill_period_s", "launch_offset_s", "gesture_rate_per_s", "duration_s"},
        "workload",
    )
    raw_workload["apps"] = tuple(raw_workload.get("apps") or (a.name for a in activities))
    if "targets" in raw_workload:
        raw_workload["targets"] = {**DEFAULT_TARGETS, **raw_workload["targets"]}
    workload = WorkloadSpec(**raw_workload)

    raw_load = dict(document.get("load", {}))
    check_keys(raw_load, {"profile"}, "load")
    load = LoadProfile(tuple((float(start), float(cpu)) for start, cpu in raw_load.get("profile", [(0, 50.0)])))

    return SimulationSpec(
        services=tuple(_service_from_mapping(raw) for raw in document.get("services", [])),
        launch_time=launch_time,
        workload=workload,
        experiments=tuple(_experiment_from_mapping(raw) for raw in document.get("experiments", [])),
        load=load,
        detector=DetectorConfig.from_mapping(document.get("detector", {})),
        load_thresholds=LoadThresholds.from_mapping(document.get("load_thresholds", {})),
        **simulation,
    )


def load_simulation_spec(path: Path | str) -> SimulationSpec:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ParseError("experiment spec not found", path=path) from None
    try:
        if path.suffix == ".json":
            document = json.loads(raw.decode("utf-8"))
        else:
            document = tomllib.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc), path=path) from None
    try:
        spec = spec_from_mapping(document)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    LOGGER.info(
        "Loaded spec %s: %d services, %d experiments", path, len(spec.services), len(spec.experiments)
    )
    return spec


def element_ids() -> Iterator[ObjectId]:
    return itertools.count(ELEMENT_ID_BASE)


__all__ = [
    "ActivityProfile",
    "FlushEvent",
    "LaunchTimeModel",
    "LoadProfile",
    "Request",
    "RequestGate",
    "SimContainer",
    "SimExperiment",
    "SimService",
    "SimulationSpec",
    "WorkloadSpec",
    "apply_rejuvenation_list",
    "assign_object_ids",
    "boot_services",
    "build_heap_snapshot",
    "element_ids",
    "load_simulation_spec",
    "rejuvenate_service",
    "spec_from_mapping",
]
