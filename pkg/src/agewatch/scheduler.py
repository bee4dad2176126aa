"""Rejuvenation scheduling: warn, rejuvenate now, or postpone towards the expected failure."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Mapping, Optional

from .detector import AgingAlarm
from .errors import ConfigError

LOGGER = logging.getLogger(__name__)


class LoadLevel(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @classmethod
    def parse(cls, value: "str | LoadLevel") -> "LoadLevel":
        if isinstance(value, LoadLevel):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown load level {value!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class LoadThresholds:
    cpu_low_below: float = 30.0
    cpu_high_above: float = 70.0
    foreground_low_below: int = 2
    foreground_high_above: int = 5
    background_low_below: int = 10
    background_high_above: int = 30

    def __post_init__(self) -> None:
        pairs = (
            ("cpu", self.cpu_low_below, self.cpu_high_above),
            ("foreground", self.foreground_low_below, self.foreground_high_above),
            ("background", self.background_low_below, self.background_high_above),
        )
        for name, low, high in pairs:
            if low > high:
                raise ConfigError(f"load.{name}: low threshold exceeds high threshold")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "LoadThresholds":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown load keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def _level(value: float, low_below: float, high_above: float) -> LoadLevel:
    if value < low_below:
        return LoadLevel.LOW
    if value > high_above:
        return LoadLevel.HIGH
    return LoadLevel.MEDIUM


def classify_load(
    cpu_pct: float,
    foreground: Optional[int] = None,
    background: Optional[int] = None,
    thresholds: LoadThresholds | None = None,
) -> LoadLevel:
    """Worst level over the signals supplied."""

    thresholds = thresholds or LoadThresholds()
    levels = [_level(cpu_pct, thresholds.cpu_low_below, thresholds.cpu_high_above)]
    if foreground is not None:
        levels.append(_level(foreground, thresholds.foreground_low_below, thresholds.foreground_high_above))
    if background is not None:
        levels.append(_level(background, thresholds.background_low_below, thresholds.background_high_above))
    return max(levels)


class PolicyMode(str, Enum):
    WARN_ONLY = "warn_only"
    IMMEDIATE = "immediate"
    POSTPONE = "postpone"


@dataclass(frozen=True)
class SchedulerPolicy:
    mode: PolicyMode = PolicyMode.POSTPONE
    safety_margin_s: float = 1800.0
    load_gate: LoadLevel = LoadLevel.LOW

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mode", PolicyMode(self.mode))
        except ValueError:
            raise ConfigError(f"unknown scheduler mode {self.mode!r}") from None
        object.__setattr__(self, "load_gate", LoadLevel.parse(self.load_gate))
        if self.safety_margin_s < 0:
            raise ConfigError("scheduler.safety_margin_s must not be negative")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SchedulerPolicy":
        unknown = set(data) - {"mode", "safety_margin_s", "load_gate"}
        if unknown:
            raise ConfigError(f"unknown scheduler keys: {', '.join(sorted(unknown))}")
        return cls(**data)


class Action(str, Enum):
    WARN = "warn"
    REJUVENATE_NOW = "rejuvenate_now"
    REJUVENATE_AT = "rejuvenate_at"


@dataclass(frozen=True)
class Decision:
    action: Action
    at: Optional[float] = None
    reason: str = ""

    def describe(self) -> str:
        if self.action is Action.REJUVENATE_AT:
            return f"rejuvenate at t={self.at:.1f}s ({self.reason})"
        return f"{self.action.value} ({self.reason})" if self.reason else self.action.value


def schedule(alarm: AgingAlarm, policy: SchedulerPolicy, load: LoadLevel, now: float) -> Decision:
    if policy.mode is PolicyMode.WARN_ONLY:
        return Decision(Action.WARN, reason="policy warns only")
    if policy.mode is PolicyMode.IMMEDIATE:
        return Decision(Action.REJUVENATE_NOW, at=now, reason="immediate policy")
    if alarm.exceeded:
        return Decision(Action.REJUVENATE_AT, at=now, reason="failure threshold already reached")
    if alarm.ttaf_s is None:
        return Decision(Action.WARN, reason="no time-to-failure estimate")
    if load <= policy.load_gate:
        return Decision(Action.REJUVENATE_AT, at=now, reason=f"load {load.label}")
    target = alarm.raised_at + max(0.0, alarm.ttaf_s - policy.safety_margin_s)
    return Decision(Action.REJUVENATE_AT, at=target, reason="safety margin before expected failure")


class RejuvenationScheduler:
    """Holds at most one postponed decision until it is due or load allows it earlier."""

    def __init__(self, policy: SchedulerPolicy | None = None) -> None:
        self.policy = policy or SchedulerPolicy()
        self.pending: Optional[Decision] = None

    def submit(self, alarm: AgingAlarm, load: LoadLevel, now: float) -> Decision:
        decision = schedule(alarm, self.policy, load, now)
        LOGGER.info("Alarm at t=%.1f scheduled: %s", now, decision.describe())
        if decision.action is Action.REJUVENATE_AT and decision.at is not None and decision.at > now:
            self.pending = decision
        else:
            self.pending = None
        return decision

    def on_load(self, level: LoadLevel, now: float) -> Optional[Decision]:
        if self.pending is None or level > self.policy.load_gate:
            return None
        self.pending = None
        return Decision(Action.REJUVENATE_AT, at=now, reason=f"load dropped to {level.label}")

    def due(self, now: float) -> Optional[Decision]:
        if self.pending is None or self.pending.at is None or self.pending.at > now:
            return None
        decision, self.pending = self.pending, None
        return decision

    def clear(self) -> None:
        self.pending = None


__all__ = [
    "Action",
    "Decision",
    "LoadLevel",
    "LoadThresholds",
    "PolicyMode",
    "RejuvenationScheduler",
    "SchedulerPolicy",
    "classify_load",
    "schedule",
]
