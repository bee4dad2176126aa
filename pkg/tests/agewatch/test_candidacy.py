import csv
import json

import pytest

from agewatch.candidacy import (
    CandidacyConfig,
    Verdict,
    analyze_snapshot,
    build_report,
    evaluate_criteria,
    load_rejuvenation_list,
    track_containers,
    write_report,
)
from agewatch.errors import ConfigError, SeriesTooShort
from agewatch.heap import make_series

from conftest import GOOD_CONTAINERS, TOTAL_CONTAINERS, make_record, make_snapshot


def owned_container_series(sizes, *, element_class="com.example.Item", shared=False, accessed=None):
    """One owner holding one HashMap; ``sizes`` lists the element count per snapshot."""

    snapshots = []
    for index, count in enumerate(sizes):
        timestamp = index * 600.0
        elements = [
            make_record(1000 + k, element_class, 50, created=0.0, accessed=accessed)
            for k in range(count)
        ]
        objects = [
            make_record(1, "com.example.Service", 64, refs=[10]),
            make_record(10, "java.util.HashMap", 40, refs=[e.id for e in elements]),
            *elements,
        ]
        roots = [1]
        if shared:
            objects.append(make_record(2, "com.example.Registry", 16, refs=[10]))
            roots.append(2)
        snapshots.append(make_snapshot(objects, roots, timestamp, snapshot_id=f"s{index}"))
    return make_series(snapshots)


def evaluate(series, cfg=None):
    cfg = cfg or CandidacyConfig()
    analyses = [analyze_snapshot(snapshot) for snapshot in series]
    tracking = track_containers(series, cfg, analyses)
    (container,) = tracking.tracked
    return evaluate_criteria(container, series, [a.tree for a in analyses], cfg)


def test_tracks_retained_sizes_over_series():
    series = owned_container_series([1, 2, 3])
    tracking = track_containers(series, CandidacyConfig())
    (container,) = tracking.tracked
    assert container.retained == [90, 140, 190]
    assert container.element_counts == [1, 2, 3]
    assert container.name == "java.util.HashMap@10"


def test_container_missing_from_one_snapshot_is_transient():
    first = make_snapshot([make_record(1, refs=[10]), make_record(10, "java.util.Vector")], [1], 0.0, "a")
    second = make_snapshot([make_record(1)], [1], 60.0, "b")
    third = make_snapshot([make_record(1, refs=[10]), make_record(10, "java.util.Vector")], [1], 120.0, "c")
    tracking = track_containers(make_series([first, second, third]), CandidacyConfig())
    assert tracking.tracked == []
    assert tracking.transient == ["java.util.Vector@10"]


def test_series_shorter_than_minimum_is_rejected():
    series = owned_container_series([1, 2])
    with pytest.raises(SeriesTooShort):
        track_containers(series, CandidacyConfig())
    with pytest.raises(SeriesTooShort):
        build_report(series)


def test_growing_hidden_long_lived_container_passes():
    verdicts, rejuvenate = evaluate(owned_container_series([1, 2, 3]))
    assert verdicts["C1"] is Verdict.PASS
    assert verdicts["C2"] is Verdict.PASS
    assert verdicts["C3"] is Verdict.PASS
    assert verdicts["C4"] is Verdict.SKIPPED
    assert rejuvenate


def test_container_with_two_owners_fails_c1():
    verdicts, rejuvenate = evaluate(owned_container_series([1, 2, 3], shared=True))
    assert verdicts["C1"] is Verdict.FAIL
    assert not rejuvenate


def test_fixed_container_fails_c2():
    series = owned_container_series([10, 10, 10])
    tracking = track_containers(series, CandidacyConfig())
    assert tracking.tracked[0].retained == [540, 540, 540]
    verdicts, rejuvenate = evaluate(series)
    assert verdicts["C2"] is Verdict.FAIL
    assert not rejuvenate


def test_shrinking_container_fails_c2_only_with_net_growth():
    series = owned_container_series([3, 4, 2])
    verdicts, _ = evaluate(series)
    assert verdicts["C2"] is Verdict.FAIL
    verdicts, _ = evaluate(series, CandidacyConfig(require_net_growth=False))
    assert verdicts["C2"] is Verdict.PASS


def test_recently_accessed_elements_fail_c4():
    series = owned_container_series([1, 2, 3], accessed=1190.0)
    verdicts, rejuvenate = evaluate(series)
    assert verdicts["C4"] is Verdict.FAIL
    assert not rejuvenate
    verdicts, rejuvenate = evaluate(owned_container_series([1, 2, 3], accessed=0.0))
    assert verdicts["C4"] is Verdict.PASS
    assert rejuvenate


def test_blacklisted_element_class_fails_c6():
    series = owned_container_series([1, 2, 3], element_class="android.os.Binder")
    cfg = CandidacyConfig(use_blacklist=True, blacklist=frozenset({"android.os.Binder"}))
    verdicts, rejuvenate = evaluate(series, cfg)
    assert verdicts["C6"] is Verdict.FAIL
    assert not rejuvenate


def test_whitelist_requires_every_element_class():
    series = owned_container_series([1, 2, 3])
    cfg = CandidacyConfig(use_whitelist=True, whitelist=frozenset({"com.example.Item"}))
    verdicts, rejuvenate = evaluate(series, cfg)
    assert verdicts["C5"] is Verdict.PASS
    assert rejuvenate
    cfg = CandidacyConfig(use_whitelist=True, whitelist=frozenset({"com.example.Other"}))
    verdicts, rejuvenate = evaluate(series, cfg)
    assert verdicts["C5"] is Verdict.FAIL
    assert not rejuvenate


def test_long_lifetime_threshold_from_config():
    series = owned_container_series([1, 2, 3])
    verdicts, _ = evaluate(series, CandidacyConfig(long_lifetime_s=5000))
    assert verdicts["C3"] is Verdict.FAIL


def test_lifetime_by_presence_without_creation_times():
    snapshots = []
    for index in range(3):
        element = make_record(500, "com.example.Item", 10)
        extra = [make_record(600 + index, "com.example.Item", 10)]
        objects = [
            make_record(1, refs=[10]),
            make_record(10, "java.util.ArrayList", 40, refs=[500] + [e.id for e in extra[: index]]),
            element,
            *extra[: index],
        ]
        snapshots.append(make_snapshot(objects, [1], index * 300.0, f"p{index}"))
    verdicts, _ = evaluate(make_series(snapshots))
    assert verdicts["C3"] is Verdict.PASS


def test_single_candidate_listed_first():
    snapshots = []
    for index in range(3):
        growing = [make_record(1000 + k, "com.example.Item", 100, created=0.0) for k in range(index + 1)]
        objects = [
            make_record(1, "com.example.Service", 64, refs=[10, 11]),
            make_record(10, "java.util.ArrayList", 40, refs=[e.id for e in growing]),
            make_record(11, "java.util.LinkedList", 5000, refs=[]),
            *growing,
        ]
        snapshots.append(make_snapshot(objects, [1], index * 3600.0, f"s{index}"))
    report = build_report(make_series(snapshots))
    assert report.rejuvenation_list.container_names == ["java.util.ArrayList@10"]
    selected = report.rejuvenation_list.candidates[0]
    assert selected.dominator_name == "com.example.Service@1"
    assert selected.single_owner
    # Rows are ordered by mean retained size, the fixed list first.
    assert [row.object_name for row in report.rows] == ["java.util.LinkedList@11", "java.util.ArrayList@10"]


def test_all_constant_containers_give_empty_list():
    report = build_report(owned_container_series([4, 4, 4, 4]))
    assert len(report.rows) == 1
    assert report.rejuvenation_list.candidates == ()


def test_synthetic_heap_selects_36_of_12674(aging_series):
    report = build_report(aging_series)
    assert len(report.rows) == TOTAL_CONTAINERS
    assert len(report.rejuvenation_list.candidates) == GOOD_CONTAINERS
    names = {row.object_name for row in report.rows}
    assert set(report.rejuvenation_list.container_names) <= names
    for row in report.rows:
        if row.rejuvenate:
            assert row.per_criterion["C1"] is Verdict.PASS
            assert row.per_criterion["C2"] is Verdict.PASS
        assert row.stddev_retained >= 0


def test_disabling_filters_never_shrinks_list():
    series = owned_container_series([1, 2, 3], element_class="android.os.Binder")
    strict = CandidacyConfig(
        use_blacklist=True,
        blacklist=frozenset({"android.os.Binder"}),
        use_whitelist=True,
        whitelist=frozenset({"com.example.Item"}),
    )
    filtered = build_report(series, strict).rejuvenation_list.container_names
    relaxed = build_report(series, CandidacyConfig()).rejuvenation_list.container_names
    assert set(filtered) <= set(relaxed)
    assert filtered == []
    assert relaxed == ["java.util.HashMap@10"]


def test_component_filter_keeps_containers_under_matching_dominator():
    series = owned_container_series([1, 2, 3])
    assert len(build_report(series, CandidacyConfig(component="com.example")).rows) == 1
    assert build_report(series, CandidacyConfig(component="com.android")).rows == ()


def test_write_report_files_are_deterministic(tmp_path):
    series = owned_container_series([1, 2, 3])
    first = write_report(build_report(series), tmp_path / "a")
    second = write_report(build_report(series), tmp_path / "b")
    for key in ("report", "detail", "list"):
        assert first[key].read_bytes() == second[key].read_bytes()

    with first["report"].open(encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert list(rows[0]) == ["object_name", "dominator_name", "mean", "standard_deviation", "number", "rejuvenate"]
    assert rows[0]["rejuvenate"] == "TRUE"
    assert rows[0]["number"] == "3"
    assert rows[0]["mean"] == "140.000"

    detail = json.loads(first["detail"].read_text(encoding="utf-8"))
    assert detail["rows"][0]["per_criterion"]["C4"] == "skipped"

    listed = load_rejuvenation_list(first["list"])
    assert listed.process == "system_server"
    assert listed.containers == ("java.util.HashMap@10",)


def test_config_validation():
    with pytest.raises(ConfigError):
        CandidacyConfig(min_snapshots=1)
    with pytest.raises(ConfigError):
        CandidacyConfig(idle_threshold_s=0)
    with pytest.raises(ConfigError):
        CandidacyConfig.from_mapping({"min_snapshot": 3})
    cfg = CandidacyConfig.from_mapping({"blacklist": ["a.B"], "use_blacklist": True})
    assert cfg.blacklist == frozenset({"a.B"})
