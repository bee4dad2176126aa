"""Discrete-event simulation engine built on simpy."""

from __future__ import annotations

import copy
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

import numpy as np
import simpy

from .candidacy import ListedContainers, RejuvenationList
from .detector import AgingAlarm, AgingAlert, AgingDetector, EventLog
from .errors import MissingActivity
from .heap import HeapSnapshot
from .scheduler import Action, Decision, LoadLevel, RejuvenationScheduler, classify_load
from .simulation import (
    FlushEvent,
    Request,
    RequestGate,
    SimExperiment,
    SimService,
    SimulationSpec,
    apply_rejuvenation_list,
    boot_services,
    build_heap_snapshot,
    element_ids,
    rejuvenate_service,
)
from .trend import IndicatorSeries

LOGGER = logging.getLogger(__name__)

CPU_INDICATOR = "cpu_pct"
LAUNCH_TARGET = "activity_manager"


@dataclass
class Trace:
    experiment_id: str
    seed: int
    duration_s: float
    indicators: dict[str, IndicatorSeries]
    snapshots: list[HeapSnapshot] = field(default_factory=list)
    events: list[dict[str, Any]] = field(default_factory=list)
    flushes: list[FlushEvent] = field(default_factory=list)
    reboots: list[float] = field(default_factory=list)
    unavailable_s: float = 0.0
    gates: dict[str, RequestGate] = field(default_factory=dict)

    def launch_series(self, activity: str) -> IndicatorSeries:
        try:
            return self.indicators[f"launch_time:{activity}"]
        except KeyError:
            raise MissingActivity(f"{self.experiment_id} has no launch samples for {activity}") from None

    @property
    def activities(self) -> list[str]:
        prefix = "launch_time:"
        return sorted(name[len(prefix):] for name in self.indicators if name.startswith(prefix))

    @property
    def rejuvenation_times(self) -> list[float]:
        return sorted({flush.t for flush in self.flushes})

    def request_counters(self) -> dict[str, dict[str, int]]:
        return {name: gate.counters() for name, gate in sorted(self.gates.items())}

    def summary(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment_id,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "samples": {name: len(series) for name, series in sorted(self.indicators.items())},
            "snapshots": len(self.snapshots),
            "rejuvenations": len(self.rejuvenation_times),
            "reboots": len(self.reboots),
            "unavailable_s": self.unavailable_s,
            "requests": self.request_counters(),
        }


class SimulationEngine:
    """One experiment run: a simpy environment plus the simulated services it drives."""

    def __init__(
        self,
        spec: SimulationSpec,
        experiment: SimExperiment,
        seed: Optional[int] = None,
        *,
        event_log: Optional[EventLog] = None,
        rejuvenation_list: RejuvenationList | ListedContainers | None = None,
    ) -> None:
        self.spec = spec
        self.experiment = experiment
        if seed is None:
            seed = experiment.seed if experiment.seed is not None else spec.seed
        self.seed = seed
        self.duration = spec.duration_of(experiment)
        self.env = simpy.Environment()
        self.services: list[SimService] = copy.deepcopy(list(spec.services))
        if rejuvenation_list is not None:
            apply_rejuvenation_list(self.services, rejuvenation_list, spec.process_name)
        self._by_name = {service.name: service for service in self.services}

        # Independent streams: experiments sharing a seed see the same workload and noise.
        launch_seq, gesture_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
        self.rng_launch = np.random.default_rng(launch_seq)
        self.rng_gesture = np.random.default_rng(gesture_seq)
        self.rng_noise = np.random.default_rng(noise_seq)

        self.log = event_log or EventLog(fixed_clock=True)
        self._ids: Iterator[int] = element_ids()
        self._request_ids = itertools.count(1)
        self._samples: dict[str, list[tuple[float, float]]] = defaultdict(list)
        self.snapshots: list[HeapSnapshot] = []
        self.flushes: list[FlushEvent] = []
        self.reboots: list[float] = []
        self.unavailable_s = 0.0
        self.boot_time = 0.0
        self._rejuvenating = False

        self.detector: Optional[AgingDetector] = None
        self.scheduler: Optional[RejuvenationScheduler] = None
        if experiment.trigger == "detector":
            self.detector = AgingDetector(spec.detector)
            self.scheduler = RejuvenationScheduler(experiment.policy)

        boot_services(self.services, 0.0, self._ids)

    def _advance(self, now: float) -> None:
        for service in self.services:
            for container in service.containers:
                container.advance(now, self._ids)

    @property
    def bloat_bytes(self) -> int:
        return sum(service.bloat_bytes for service in self.services)

    def load_level(self, now: float) -> LoadLevel:
        return classify_load(self.spec.load.cpu_at(now), thresholds=self.spec.load_thresholds)

    def _emit(self, indicator: str, now: float, value: float) -> None:
        self._samples[indicator].append((now, value))
        if self.detector is None:
            return
        for event in self.detector.ingest(indicator, now, value):
            if isinstance(event, AgingAlert):
                self.log.record("alert", now, **event.to_mapping())
            elif isinstance(event, AgingAlarm):
                self.log.record("alarm", now, **event.to_mapping())
                self._handle_alarm(event, now)

    def _handle_alarm(self, alarm: AgingAlarm, now: float) -> None:
        assert self.scheduler is not None
        decision = self.scheduler.submit(alarm, self.load_level(now), now)
        self.log.record("decision", now, action=decision.action.value, at=decision.at, reason=decision.reason)
        self._act(decision, now)

    def _act(self, decision: Optional[Decision], now: float) -> None:
        if decision is None or decision.action is Action.WARN:
            return
        if decision.action is Action.REJUVENATE_NOW or (decision.at is not None and decision.at <= now):
            self.env.process(self._rejuvenate(f"detector: {decision.reason}"))

    def _submit(self, service_name: str, kind: str, now: float) -> None:
        service = self._by_name.get(service_name)
        if service is None:
            return
        service.gate.submit(Request(next(self._request_ids), kind, now), now)

    def _launcher(self):
        apps = self.spec.workload.apps
        period = self.spec.workload.launch_kill_period_s
        model = self.spec.launch_time
        t = self.spec.workload.launch_offset_s
        while t < self.duration:
            yield self.env.timeout(t - self.env.now)
            now = self.env.now
            self._advance(now)
            app = apps[int(self.rng_launch.integers(len(apps)))]
            value = model.sample(model.profile(app), self.bloat_bytes, now - self.boot_time, self.rng_noise)
            self._emit(f"launch_time:{app}", now, value)
            self._submit(LAUNCH_TARGET, "launch", now)
            t += period

    def _gestures(self):
        workload = self.spec.workload
        if workload.gesture_rate_per_s <= 0:
            return
        kinds = sorted(workload.events)
        weights = np.array([workload.events[kind] for kind in kinds], dtype=float)
        while True:
            yield self.env.timeout(float(self.rng_gesture.exponential(1.0 / workload.gesture_rate_per_s)))
            now = self.env.now
            if now >= self.duration:
                return
            kind = kinds[int(self.rng_gesture.choice(len(kinds), p=weights))]
            self._submit(workload.targets[kind], kind, now)

    def _sampler(self):
        t = 0.0
        while t < self.duration:
            yield self.env.timeout(t - self.env.now)
            now = self.env.now
            self._advance(now)
            pss = self.spec.base_pss_bytes + self.bloat_bytes
            cpu = self.spec.load.cpu_at(now)
            self._samples[CPU_INDICATOR].append((now, cpu))
            self._emit(f"pss:{self.spec.process_name}", now, float(pss))
            self._emit("free_mem", now, float(self.spec.total_mem_bytes - pss))
            if self.scheduler is not None:
                self._act(self.scheduler.on_load(self.load_level(now), now), now)
                self._act(self.scheduler.due(now), now)
            t += self.spec.sample_period_s

    def _snapshotter(self):
        period = self.spec.snapshot_period_s
        if period <= 0:
            return
        t = period
        while t <= self.duration:
            yield self.env.timeout(t - self.env.now)
            now = self.env.now
            self._advance(now)
            snapshot_id = f"{self.experiment.id}-{len(self.snapshots) + 1:04d}"
            self.snapshots.append(build_heap_snapshot(self.services, now, self.spec.process_name, snapshot_id))
            self.log.record("snapshot", now, snapshot_id=snapshot_id, bloat_bytes=self.bloat_bytes)
            t += period

    def _periodic(self):
        period = self.experiment.rejuvenation_period_s
        t = period
        while t < self.duration:
            yield self.env.timeout(t - self.env.now)
            self.env.process(self._rejuvenate("periodic"))
            t += period

    def _rebooter(self):
        period = self.experiment.reboot_period_s
        t = period
        while t < self.duration:
            yield self.env.timeout(t - self.env.now)
            now = self.env.now
            boot_services(self.services, now, self._ids)
            self.boot_time = now
            self.unavailable_s += self.experiment.reboot_downtime_s
            self.reboots.append(now)
            self.log.record("reboot", now, downtime_s=self.experiment.reboot_downtime_s)
            self._reset_detection(now)
            t += period

    def _reset_detection(self, now: float) -> None:
        if self.detector is not None:
            self.detector.reset(now)
        if self.scheduler is not None:
            self.scheduler.clear()

    def _rejuvenate(self, reason: str):
        if self._rejuvenating:
            return
        self._rejuvenating = True
        now = self.env.now
        self._advance(now)
        targets = [self._by_name[name] for name in sorted(self.experiment.rejuvenated_services)]
        for service in targets:
            flush = rejuvenate_service(service, now)
            self.flushes.append(flush)
            self.log.record(
                "rejuvenation",
                now,
                service=service.name,
                reason=reason,
                removed=dict(flush.removed),
                bytes_freed=flush.bytes_freed,
            )
        yield self.env.timeout(self.spec.pause_s)
        for service in targets:
            drained = service.gate.resume(self.env.now)
            self.log.record("resume", self.env.now, service=service.name, drained=len(drained))
        self._reset_detection(self.env.now)
        self._rejuvenating = False

    def run(self) -> Trace:
        LOGGER.info("Running %s (seed %d, %.0f s)", self.experiment.id, self.seed, self.duration)
        self.log.record("start", 0.0, experiment=self.experiment.id, seed=self.seed)
        self.env.process(self._launcher())
        self.env.process(self._gestures())
        self.env.process(self._sampler())
        self.env.process(self._snapshotter())
        if self.experiment.trigger == "periodic":
            self.env.process(self._periodic())
        if self.experiment.reboot_period_s is not None:
            self.env.process(self._rebooter())
        self.env.run(until=self.duration + self.spec.pause_s + 1.0)
        for service in self.services:
            service.gate.check()
        self.log.record("end", self.duration, bloat_bytes=self.bloat_bytes)
        return Trace(
            experiment_id=self.experiment.id,
            seed=self.seed,
            duration_s=self.duration,
            indicators={
                name: IndicatorSeries.from_pairs(name, samples)
                for name, samples in sorted(self._samples.items())
            },
            snapshots=self.snapshots,
            events=list(self.log.records),
            flushes=self.flushes,
            reboots=self.reboots,
            unavailable_s=self.unavailable_s,
            gates={service.name: service.gate for service in self.services},
        )


def run(
    spec: SimulationSpec,
    experiment: SimExperiment,
    seed: Optional[int] = None,
    *,
    event_log: Optional[EventLog] = None,
    rejuvenation_list: RejuvenationList | ListedContainers | None = None,
) -> Trace:
    return SimulationEngine(
        spec, experiment, seed, event_log=event_log, rejuvenation_list=rejuvenation_list
    ).run()


__all__ = ["CPU_INDICATOR", "SimulationEngine", "Trace", "run"]
