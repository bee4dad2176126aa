import pytest

from agewatch.detector import AgingAlarm, AgingAlert, Confidence
from agewatch.errors import ConfigError
from agewatch.scheduler import (
    Action,
    LoadLevel,
    LoadThresholds,
    PolicyMode,
    RejuvenationScheduler,
    SchedulerPolicy,
    classify_load,
    schedule,
)


def alarm(ttaf=10_000.0, raised_at=0.0):
    return AgingAlarm(confidence=Confidence.VERY_HIGH, contributing_alerts=(), ttaf_s=ttaf, raised_at=raised_at)


def test_immediate_policy_ignores_load():
    policy = SchedulerPolicy(mode=PolicyMode.IMMEDIATE)
    for load in LoadLevel:
        decision = schedule(alarm(), policy, load, now=50.0)
        assert decision.action is Action.REJUVENATE_NOW
        assert decision.at == 50.0


def test_warn_only_policy():
    decision = schedule(alarm(), SchedulerPolicy(mode="warn_only"), LoadLevel.LOW, now=0.0)
    assert decision.action is Action.WARN


def test_postpone_under_high_load_keeps_safety_margin():
    policy = SchedulerPolicy(mode=PolicyMode.POSTPONE, safety_margin_s=2000.0)
    decision = schedule(alarm(ttaf=10_000.0, raised_at=0.0), policy, LoadLevel.HIGH, now=0.0)
    assert decision.action is Action.REJUVENATE_AT
    assert decision.at == 8000.0


def test_postpone_margin_larger_than_ttaf_fires_at_alarm():
    policy = SchedulerPolicy(safety_margin_s=5000.0)
    decision = schedule(alarm(ttaf=1000.0, raised_at=300.0), policy, LoadLevel.HIGH, now=300.0)
    assert decision.at == 300.0


def test_postpone_without_ttaf_warns():
    decision = schedule(alarm(ttaf=None), SchedulerPolicy(), LoadLevel.HIGH, now=0.0)
    assert decision.action is Action.WARN


def test_postpone_with_low_load_fires_now():
    decision = schedule(alarm(raised_at=100.0), SchedulerPolicy(), LoadLevel.LOW, now=100.0)
    assert decision.action is Action.REJUVENATE_AT
    assert decision.at == 100.0


def test_load_drop_brings_rejuvenation_forward():
    scheduler = RejuvenationScheduler(SchedulerPolicy(safety_margin_s=2000.0))
    decision = scheduler.submit(alarm(ttaf=10_000.0, raised_at=0.0), LoadLevel.HIGH, now=0.0)
    assert decision.at == 8000.0
    assert scheduler.on_load(LoadLevel.HIGH, 1000.0) is None
    assert scheduler.on_load(LoadLevel.MEDIUM, 2000.0) is None
    early = scheduler.on_load(LoadLevel.LOW, 3000.0)
    assert early.action is Action.REJUVENATE_AT
    assert early.at == 3000.0
    assert scheduler.pending is None
    assert scheduler.due(9000.0) is None


def test_pending_decision_becomes_due():
    scheduler = RejuvenationScheduler(SchedulerPolicy(safety_margin_s=2000.0))
    scheduler.submit(alarm(), LoadLevel.HIGH, now=0.0)
    assert scheduler.due(7999.0) is None
    assert scheduler.due(8000.0).at == 8000.0
    assert scheduler.due(8010.0) is None


def test_clear_drops_pending_decision():
    scheduler = RejuvenationScheduler()
    scheduler.submit(alarm(), LoadLevel.HIGH, now=0.0)
    scheduler.clear()
    assert scheduler.on_load(LoadLevel.LOW, 10.0) is None


def test_classify_load_takes_worst_signal():
    assert classify_load(10.0) is LoadLevel.LOW
    assert classify_load(50.0) is LoadLevel.MEDIUM
    assert classify_load(90.0) is LoadLevel.HIGH
    assert classify_load(10.0, foreground=1, background=40) is LoadLevel.HIGH
    assert classify_load(10.0, foreground=3) is LoadLevel.MEDIUM
    custom = LoadThresholds(cpu_low_below=60.0, cpu_high_above=95.0)
    assert classify_load(50.0, thresholds=custom) is LoadLevel.LOW


def test_policy_and_threshold_validation():
    with pytest.raises(ConfigError):
        SchedulerPolicy(mode="sometimes")
    with pytest.raises(ConfigError):
        SchedulerPolicy(safety_margin_s=-1)
    with pytest.raises(ConfigError):
        LoadThresholds(cpu_low_below=80.0, cpu_high_above=70.0)
    with pytest.raises(ConfigError):
        LoadLevel.parse("idle")
    policy = SchedulerPolicy.from_mapping({"mode": "immediate", "load_gate": "medium"})
    assert policy.mode is PolicyMode.IMMEDIATE
    assert policy.load_gate is LoadLevel.MEDIUM


def test_postpone_rejuvenates_now_once_threshold_is_reached():
    past = AgingAlert(
        indicator="launch_time:a",
        first_seen=0.0,
        persistence=600.0,
        slope=0.1,
        p_value=0.001,
        raised_at=600.0,
        current_increase=240.0,
        failure_increase=200.0,
    )
    reached = AgingAlarm(confidence=Confidence.LOW, contributing_alerts=(past,), ttaf_s=None, raised_at=600.0)
    decision = schedule(reached, SchedulerPolicy(mode=PolicyMode.POSTPONE), LoadLevel.HIGH, now=700.0)
    assert decision.action is Action.REJUVENATE_AT
    assert decision.at == 700.0
    assert decision.reason == "failure threshold already reached"
    assert schedule(alarm(ttaf=None), SchedulerPolicy(), LoadLevel.HIGH, now=700.0).action is Action.WARN
