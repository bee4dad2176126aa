import json

import numpy as np
import pytest

from agewatch.errors import DanglingReference, DuplicateId, NonMonotonicTimestamps, ParseError
from agewatch.heap import (
    ContainerClassSet,
    display_name,
    dump_snapshot,
    find_containers,
    load_series,
    load_snapshot,
    snapshot_from_mapping,
    snapshot_to_mapping,
)

from conftest import CONTAINER_CLASSES, make_record, make_snapshot, snapshot_document


def write_document(path, document):
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


def test_load_empty_snapshot(tmp_path):
    path = write_document(tmp_path / "empty.json", snapshot_document())
    snapshot = load_snapshot(path)
    assert snapshot.objects == ()
    assert snapshot.gc_roots == ()
    assert find_containers(snapshot) == []


def test_load_snapshot_rejects_dangling_reference(tmp_path):
    document = snapshot_document(objects=[{"id": 5, "class": "A", "shallow_size": 8, "refs": [99]}], roots=[5])
    path = write_document(tmp_path / "dangling.json", document)
    with pytest.raises(DanglingReference):
        load_snapshot(path)


def test_load_snapshot_rejects_unresolved_root(tmp_path):
    document = snapshot_document(objects=[{"id": 5, "class": "A", "shallow_size": 8}], roots=[6])
    with pytest.raises(DanglingReference):
        load_snapshot(write_document(tmp_path / "root.json", document))


def test_load_snapshot_rejects_duplicate_ids(tmp_path):
    objects = [
        {"id": 7, "class": "A", "shallow_size": 8, "refs": []},
        {"id": 7, "class": "B", "shallow_size": 8, "refs": []},
    ]
    path = write_document(tmp_path / "dup.json", snapshot_document(objects=objects))
    with pytest.raises(DuplicateId):
        load_snapshot(path)


def test_malformed_json_reports_file_and_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "snapshot_id": "s1",\n  "objects": [\n', encoding="utf-8")
    with pytest.raises(ParseError) as excinfo:
        load_snapshot(path)
    assert str(path) in str(excinfo.value)
    assert excinfo.value.line is not None


def test_missing_key_and_negative_ids_are_parse_errors():
    with pytest.raises(ParseError, match="gc_roots"):
        snapshot_from_mapping({"snapshot_id": "s", "timestamp_s": 0, "process": "p", "objects": []})
    document = snapshot_document(objects=[{"id": -3, "class": "A", "shallow_size": 1}])
    with pytest.raises(ParseError, match="non-negative"):
        snapshot_from_mapping(document)


def test_unknown_keys_are_ignored_and_optional_times_loaded():
    document = snapshot_document(
        objects=[
            {"id": 1, "class": "A", "shallow_size": 4, "refs": [2], "colour": "red"},
            {"id": 2, "class": "B", "shallow_size": 4, "created_at_s": 10, "last_access_s": 12.5},
        ],
        roots=[1],
    )
    document["producer"] = "test"
    snapshot = snapshot_from_mapping(document)
    assert snapshot.get(2).created_at == 10
    assert snapshot.get(2).last_access == 12.5
    assert snapshot.get(1).created_at is None


def test_load_series_orders_by_timestamp(tmp_path):
    paths = [
        write_document(tmp_path / f"s{t}.json", snapshot_document(snapshot_id=f"s{t}", timestamp=t))
        for t in (120, 0, 60)
    ]
    series = load_series(paths)
    assert len(series) == 3
    assert series.timestamps == [0, 60, 120]


def test_load_series_rejects_repeated_timestamp(tmp_path):
    paths = [
        write_document(tmp_path / f"s{i}.json", snapshot_document(snapshot_id=f"s{i}", timestamp=t))
        for i, t in enumerate((0, 60, 60))
    ]
    with pytest.raises(NonMonotonicTimestamps):
        load_series(paths)


def test_load_series_rejects_repeated_snapshot_id(tmp_path):
    paths = [
        write_document(tmp_path / f"s{t}.json", snapshot_document(snapshot_id="same", timestamp=t))
        for t in (0, 60)
    ]
    with pytest.raises(DuplicateId):
        load_series(paths)


def test_single_file_series_is_allowed(tmp_path):
    path = write_document(tmp_path / "one.json", snapshot_document())
    assert len(load_series([path])) == 1


def test_find_containers_counts_elements_and_owners():
    snapshot = make_snapshot(
        [
            make_record(1, "com.example.Owner", refs=[2]),
            make_record(2, "java.util.ArrayList", refs=[3, 4, 5]),
            make_record(3),
            make_record(4),
            make_record(5),
        ],
        roots=[1],
    )
    views = find_containers(snapshot)
    assert len(views) == 1
    assert views[0].element_count == 3
    assert views[0].inbound_count == 1
    assert views[0].name == "java.util.ArrayList@2"


def test_find_containers_without_container_classes():
    snapshot = make_snapshot([make_record(1, refs=[2]), make_record(2)], roots=[1])
    assert find_containers(snapshot) == []


def test_find_containers_matches_brute_force_scan():
    rng = np.random.default_rng(11)
    classes = list(CONTAINER_CLASSES) + ["com.example.Plain", "java.lang.String"]
    count = 300
    records = []
    for object_id in range(count):
        refs = rng.choice(count, size=int(rng.integers(0, 6)), replace=False)
        records.append(make_record(object_id, classes[int(rng.integers(len(classes)))], refs=refs.tolist()))
    snapshot = make_snapshot(records, roots=[0])

    views = find_containers(snapshot)
    expected = [record for record in records if record.class_name in CONTAINER_CLASSES]
    assert len(views) == len(expected)
    for view in views:
        inbound = sum(1 for record in records if view.object_id in record.refs)
        assert view.inbound_count == inbound
        assert view.element_count == len(snapshot.get(view.object_id).refs)


def test_custom_container_class_set():
    snapshot = make_snapshot([make_record(1, "com.example.Cache", refs=[2]), make_record(2)], roots=[1])
    views = find_containers(snapshot, ContainerClassSet(frozenset({"com.example.Cache"})))
    assert [view.object_id for view in views] == [1]


def test_dump_and_reload_preserves_graph(tmp_path):
    snapshot = make_snapshot(
        [
            make_record(1, "com.example.Owner", 24, refs=[2, 3]),
            make_record(2, "java.util.HashMap", 40, refs=[3], created=1.0),
            make_record(3, size=8, created=2.0, accessed=5.0),
        ],
        roots=[1],
        timestamp=30.0,
    )
    reloaded = load_snapshot(dump_snapshot(snapshot, tmp_path / "out" / "snap.json"))
    assert snapshot_to_mapping(reloaded) == snapshot_to_mapping(snapshot)


def test_display_names():
    assert display_name(make_record(9, "java.util.Vector")) == "java.util.Vector@9"
    assert display_name(None, -1) == "<gc-roots>"
