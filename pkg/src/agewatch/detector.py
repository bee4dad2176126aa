"""Aging detection: per-indicator alerts, fused alarms and time-to-aging-failure."""

from __future__ import annotations

import json
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from fnmatch import fnmatchcase
from pathlib import Path
from typing import IO, Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .trend import DEFAULT_ALPHA, Direction, IndicatorSeries, TrendResult, windowed_trend

LOGGER = logging.getLogger(__name__)

FIXED_CLOCK = "1970-01-01T00:00:00+00:00"


class Confidence(IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    VERY_HIGH = 4

    @classmethod
    def parse(cls, value: "str | Confidence") -> "Confidence":
        if isinstance(value, Confidence):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown confidence level {value!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class IndicatorPolicy:
    """How one family of indicators (an fnmatch pattern) degrades."""

    pattern: str
    degrades_when: str = "up"
    failure_increase: Optional[float] = None

    def __post_init__(self) -> None:
        if self.degrades_when not in {"up", "down"}:
            raise ConfigError(f"{self.pattern}: degrades_when must be 'up' or 'down'")
        if self.failure_increase is not None and self.failure_increase <= 0:
            raise ConfigError(f"{self.pattern}: failure_increase must be positive")

    @property
    def degraded_direction(self) -> Direction:
        return Direction.INCREASING if self.degrades_when == "up" else Direction.DECREASING

    def matches(self, indicator: str) -> bool:
        return fnmatchcase(indicator, self.pattern)


DEFAULT_POLICIES = (
    IndicatorPolicy("launch_time:*", "up", 200.0),
    IndicatorPolicy("pss:*", "up"),
    IndicatorPolicy("free_mem", "down"),
    IndicatorPolicy("cache_mem", "down"),
)


@dataclass(frozen=True)
class AlarmRule:
    required_indicators: frozenset[str]
    confidence: Confidence

    def __post_init__(self) -> None:
        if not self.required_indicators:
            raise ConfigError("alarm rule needs at least one indicator")

    def matches(self, indicators: Iterable[str]) -> bool:
        names = list(indicators)
        return all(any(fnmatchcase(name, pattern) for name in names) for pattern in self.required_indicators)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "AlarmRule":
        try:
            indicators = data["indicators"]
            confidence = data["confidence"]
        except KeyError as exc:
            raise ConfigError(f"alarm rule missing {exc.args[0]!r}") from None
        if isinstance(indicators, str) or not isinstance(indicators, (list, tuple)):
            raise ConfigError("alarm rule 'indicators' must be a list")
        return cls(frozenset(indicators), Confidence.parse(confidence))


DEFAULT_RULES = (
    AlarmRule(frozenset({"launch_time:*", "pss:system_server"}), Confidence.VERY_HIGH),
)


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 30
    alpha: float = DEFAULT_ALPHA
    min_persistence_s: float = 600.0
    rules: tuple[AlarmRule, ...] = DEFAULT_RULES
    policies: tuple[IndicatorPolicy, ...] = DEFAULT_POLICIES
    ttaf_source: str = "launch_time"

    def __post_init__(self) -> None:
        if self.window < 3:
            raise ConfigError("detector.window must be at least 3")
        if not 0 < self.alpha < 1:
            raise ConfigError("detector.alpha must lie in (0, 1)")
        if self.min_persistence_s < 0:
            raise ConfigError("detector.min_persistence_s must not be negative")
        if self.ttaf_source not in {"launch_time", "max_severity"}:
            raise ConfigError("detector.ttaf_source must be 'launch_time' or 'max_severity'")

    def policy_for(self, indicator: str) -> IndicatorPolicy:
        for policy in self.policies:
            if policy.matches(indicator):
                return policy
        return IndicatorPolicy(indicator)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "DetectorConfig":
        values = dict(data)
        rules = values.pop("rules", None)
        indicators = values.pop("indicators", None)
        unknown = set(values) - {"window", "alpha", "min_persistence_s", "ttaf_source"}
        if unknown:
            raise ConfigError(f"unknown detector keys: {', '.join(sorted(unknown))}")
        if rules is not None:
            values["rules"] = tuple(AlarmRule.from_mapping(rule) for rule in rules)
        if indicators is not None:
            custom = []
            for pattern, options in indicators.items():
                extra = set(options) - {"degrades_when", "failure_increase"}
                if extra:
                    raise ConfigError(f"unknown keys for indicator {pattern}: {', '.join(sorted(extra))}")
                custom.append(IndicatorPolicy(pattern, **options))
            # Configured patterns take precedence over the built-in ones.
            values["policies"] = tuple(custom) + DEFAULT_POLICIES
        return cls(**values)


@dataclass(frozen=True)
class AgingAlert:
    indicator: str
    first_seen: float
    persistence: float
    slope: float
    p_value: float
    raised_at: float
    current_increase: float = 0.0
    failure_increase: Optional[float] = None
    ttaf_s: Optional[float] = None

    @property
    def exceeded(self) -> bool:
        """The indicator has already degraded past its failure threshold."""

        return self.failure_increase is not None and self.current_increase >= self.failure_increase

    def to_mapping(self) -> dict[str, Any]:
        return {
            "indicator": self.indicator,
            "first_seen": self.first_seen,
            "persistence": self.persistence,
            "slope": self.slope,
            "p_value": self.p_value,
            "raised_at": self.raised_at,
            "current_increase": self.current_increase,
            "ttaf_s": self.ttaf_s,
            "exceeded": self.exceeded,
        }


@dataclass(frozen=True)
class AgingAlarm:
    confidence: Confidence
    contributing_alerts: tuple[AgingAlert, ...]
    ttaf_s: Optional[float]
    raised_at: float

    @property
    def exceeded(self) -> bool:
        return any(alert.exceeded for alert in self.contributing_alerts)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "confidence": self.confidence.label,
            "indicators": [alert.indicator for alert in self.contributing_alerts],
            "ttaf_s": self.ttaf_s,
            "raised_at": self.raised_at,
            "exceeded": self.exceeded,
        }


def estimate_ttaf(current_level: float, slope: float, failure_threshold: float) -> Optional[float]:
    """Seconds until ``failure_threshold`` is reached at ``slope``.

    ``None`` when the slope is not positive or the level is already at the threshold;
    ``AgingAlert.exceeded`` tells the two apart.
    """

    if not slope > 0 or current_level >= failure_threshold:
        return None
    return (failure_threshold - current_level) / slope


def alarm_ttaf(alerts: Sequence[AgingAlert], source: str = "launch_time") -> Optional[float]:
    candidates = [alert.ttaf_s for alert in alerts if alert.ttaf_s is not None]
    if source == "launch_time":
        launch = [
            alert.ttaf_s
            for alert in alerts
            if alert.indicator.startswith("launch_time:") and alert.ttaf_s is not None
        ]
        if launch:
            return min(launch)
    return min(candidates) if candidates else None


def fuse(
    alerts: Sequence[AgingAlert],
    rules: Sequence[AlarmRule] = DEFAULT_RULES,
    *,
    ttaf_source: str = "launch_time",
) -> Optional[AgingAlarm]:
    if not alerts:
        return None
    names = [alert.indicator for alert in alerts]
    for rule in sorted(rules, key=lambda item: item.confidence, reverse=True):
        if not rule.matches(names):
            continue
        contributing = tuple(
            alert
            for alert in alerts
            if any(fnmatchcase(alert.indicator, pattern) for pattern in rule.required_indicators)
        )
        return AgingAlarm(
            confidence=rule.confidence,
            contributing_alerts=contributing,
            ttaf_s=alarm_ttaf(contributing, ttaf_source),
            raised_at=max(alert.raised_at for alert in contributing),
        )
    return None


@dataclass
class _Tracker:
    policy: IndicatorPolicy
    window: int
    samples: deque = field(default_factory=deque)
    baseline: Optional[float] = None
    first_seen: Optional[float] = None
    alert: Optional[AgingAlert] = None

    def __post_init__(self) -> None:
        self.samples = deque(maxlen=self.window)

    def reset(self) -> None:
        self.samples.clear()
        self.baseline = None
        self.first_seen = None
        self.alert = None

    def increase(self) -> float:
        latest = float(np.median([value for _, value in self.samples]))
        delta = latest - self.baseline
        if self.policy.degrades_when == "down":
            delta = -delta
        return max(0.0, delta)


class AgingDetector:
    """Online detector fed one sample at a time.

    Each indicator keeps a sliding window. An alert is raised once the degradation
    trend has been observed continuously for ``min_persistence_s``. ``reset`` starts
    over from a healthy state after a rejuvenation or reboot.
    """

    def __init__(
        self,
        config: DetectorConfig | None = None,
        *,
        on_alarm: Optional[Callable[[AgingAlarm], None]] = None,
    ) -> None:
        self.config = config or DetectorConfig()
        self._on_alarm = on_alarm
        self._lock = threading.Lock()
        self._trackers: dict[str, _Tracker] = {}
        self._alarm: Optional[AgingAlarm] = None
        self._last_reset: Optional[float] = None

    def ingest(self, indicator: str, timestamp: float, value: float) -> list[AgingAlert | AgingAlarm]:
        events: list[AgingAlert | AgingAlarm] = []
        with self._lock:
            tracker = self._trackers.get(indicator)
            if tracker is None:
                tracker = _Tracker(self.config.policy_for(indicator), self.config.window)
                self._trackers[indicator] = tracker
            tracker.samples.append((float(timestamp), float(value)))
            if len(tracker.samples) < self.config.window:
                return events
            if tracker.baseline is None:
                tracker.baseline = float(np.median([v for _, v in tracker.samples]))

            series = IndicatorSeries.from_pairs(indicator, tracker.samples)
            trend = windowed_trend(series, self.config.window, self.config.alpha, interval=False)
            if trend.direction is not tracker.policy.degraded_direction:
                if tracker.alert is not None:
                    LOGGER.info("Alert on %s cleared at t=%.1f", indicator, timestamp)
                tracker.first_seen = None
                tracker.alert = None
                return events
            if tracker.first_seen is None:
                tracker.first_seen = float(timestamp)

            persistence = float(timestamp) - tracker.first_seen
            if persistence < self.config.min_persistence_s:
                return events
            alert = self._make_alert(indicator, tracker, trend, float(timestamp), persistence)
            raised = tracker.alert is None
            tracker.alert = alert
            if raised:
                LOGGER.info("Aging alert on %s (slope %.6g/s, p=%.3g)", indicator, alert.slope, alert.p_value)
                events.append(alert)
                alarm = self._evaluate_alarm()
                if alarm is not None:
                    events.append(alarm)
        for event in events:
            if isinstance(event, AgingAlarm) and self._on_alarm is not None:
                self._on_alarm(event)
        return events

    def _make_alert(
        self, indicator: str, tracker: _Tracker, trend: TrendResult, now: float, persistence: float
    ) -> AgingAlert:
        slope = trend.slope if tracker.policy.degrades_when == "up" else -trend.slope
        increase = tracker.increase()
        ttaf = None
        if tracker.policy.failure_increase is not None:
            ttaf = estimate_ttaf(increase, slope, tracker.policy.failure_increase)
        return AgingAlert(
            indicator=indicator,
            first_seen=tracker.first_seen if tracker.first_seen is not None else now,
            persistence=persistence,
            slope=trend.slope,
            p_value=trend.p_value,
            raised_at=now,
            current_increase=increase,
            failure_increase=tracker.policy.failure_increase,
            ttaf_s=ttaf,
        )

    def _evaluate_alarm(self) -> Optional[AgingAlarm]:
        active = [tracker.alert for tracker in self._trackers.values() if tracker.alert is not None]
        alarm = fuse(active, self.config.rules, ttaf_source=self.config.ttaf_source)
        if alarm is None:
            return None
        if self._alarm is not None and alarm.confidence <= self._alarm.confidence:
            return None
        self._alarm = alarm
        LOGGER.warning(
            "Aging alarm (%s confidence) from %s",
            alarm.confidence.label,
            ", ".join(alert.indicator for alert in alarm.contributing_alerts),
        )
        return alarm

    def reset(self, timestamp: float) -> None:
        """Forget all windows, baselines and alerts: the system is healthy again."""

        with self._lock:
            for tracker in self._trackers.values():
                tracker.reset()
            self._alarm = None
            self._last_reset = float(timestamp)
        LOGGER.debug("Detector reset at t=%.1f", timestamp)

    def active_alerts(self) -> list[AgingAlert]:
        with self._lock:
            return [tracker.alert for tracker in self._trackers.values() if tracker.alert is not None]

    def status(self) -> dict[str, Any]:
        with self._lock:
            return {
                "last_reset": self._last_reset,
                "alarm": self._alarm.to_mapping() if self._alarm else None,
                "indicators": {
                    name: {
                        "samples": len(tracker.samples),
                        "baseline": tracker.baseline,
                        "alerting": tracker.alert is not None,
                    }
                    for name, tracker in sorted(self._trackers.items())
                },
            }


@dataclass
class Replay:
    """Recorded series fed through one detector in timestamp order."""

    raised: list[AgingAlert] = field(default_factory=list)
    active: list[AgingAlert] = field(default_factory=list)
    alarms: list[AgingAlarm] = field(default_factory=list)

    @property
    def alarm(self) -> Optional[AgingAlarm]:
        return self.alarms[-1] if self.alarms else None


def replay(series_set: Mapping[str, IndicatorSeries], config: DetectorConfig | None = None) -> Replay:
    detector = AgingDetector(config)
    merged = sorted(
        (timestamp, name, value)
        for name, series in series_set.items()
        for timestamp, value in series.samples
    )
    result = Replay()
    latest: dict[str, AgingAlert] = {}
    for timestamp, name, value in merged:
        for event in detector.ingest(name, timestamp, value):
            if isinstance(event, AgingAlarm):
                result.alarms.append(event)
            else:
                result.raised.append(event)
                latest[event.indicator] = event
    still_active = {alert.indicator for alert in detector.active_alerts()}
    result.active = [latest[name] for name in sorted(still_active)]
    return result


def detect(
    series_set: Mapping[str, IndicatorSeries],
    window: int = 30,
    alpha: float = DEFAULT_ALPHA,
    min_persistence_s: float = 600.0,
    *,
    config: DetectorConfig | None = None,
) -> list[AgingAlert]:
    """Alerts still active at the end of a time-ordered replay, as they were first raised."""

    if config is None:
        config = DetectorConfig(window=window, alpha=alpha, min_persistence_s=min_persistence_s)
    return replay(series_set, config).active


class EventLog:
    """JSON-lines log of detector and simulator events."""

    def __init__(self, path: Path | str | None = None, *, fixed_clock: bool = False) -> None:
        self.path = Path(path) if path is not None else None
        self.fixed_clock = fixed_clock
        self.records: list[dict[str, Any]] = []
        self._handle: Optional[IO[str]] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8")

    def _clock(self) -> str:
        if self.fixed_clock:
            return FIXED_CLOCK
        return datetime.now(timezone.utc).isoformat()

    def record(self, event: str, t: float, **fields: Any) -> dict[str, Any]:
        entry = {"event": event, "t": t, "logged_at": self._clock(), **fields}
        self.records.append(entry)
        if self._handle is not None:
            self._handle.write(json.dumps(_finite(entry), sort_keys=True, default=_json_default) + "\n")
        return entry

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def _finite(value: Any) -> Any:
    """Replace non-finite floats with their string form; JSON has no infinity."""

    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    return value


def _json_default(value: Any) -> Any:
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"cannot serialise {type(value).__name__}")


__all__ = [
    "AgingAlarm",
    "AgingAlert",
    "AgingDetector",
    "AlarmRule",
    "Confidence",
    "DEFAULT_POLICIES",
    "DEFAULT_RULES",
    "DetectorConfig",
    "EventLog",
    "IndicatorPolicy",
    "Replay",
    "alarm_ttaf",
    "detect",
    "estimate_ttaf",
    "fuse",
    "replay",
    "FIXED_CLOCK",
]
