"""Heap snapshot model, JSON snapshot format and container discovery."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

from .errors import (
    ConfigError,
    DanglingReference,
    DuplicateId,
    NonMonotonicTimestamps,
    ParseError,
)

LOGGER = logging.getLogger(__name__)

ObjectId = int

DEFAULT_CONTAINER_CLASSES = frozenset(
    {
        "java.util.LinkedList",
        "java.util.Hashtable",
        "java.util.ArrayList",
        "java.util.HashMap",
        "java.util.Vector",
    }
)

_MAX_ID = 2**64 - 1


@dataclass(frozen=True)
class ObjectRecord:
    id: ObjectId
    class_name: str
    shallow_size: int
    refs: tuple[ObjectId, ...] = ()
    created_at: Optional[float] = None
    last_access: Optional[float] = None

    @property
    def name(self) -> str:
        return display_name(self)


@dataclass(frozen=True)
class HeapSnapshot:
    snapshot_id: str
    timestamp: float
    process_name: str
    gc_roots: tuple[ObjectId, ...]
    objects: tuple[ObjectRecord, ...]

    @cached_property
    def index(self) -> dict[ObjectId, ObjectRecord]:
        return {record.id: record for record in self.objects}

    def get(self, object_id: ObjectId) -> ObjectRecord:
        return self.index[object_id]

    def __contains__(self, object_id: object) -> bool:
        return object_id in self.index

    @cached_property
    def inbound_counts(self) -> Counter[ObjectId]:
        """Number of distinct records referencing each object."""

        counts: Counter[ObjectId] = Counter()
        for record in self.objects:
            counts.update(set(record.refs))
        return counts

    def total_shallow_size(self, ids: Optional[Iterable[ObjectId]] = None) -> int:
        if ids is None:
            return sum(record.shallow_size for record in self.objects)
        return sum(self.index[object_id].shallow_size for object_id in ids)


@dataclass(frozen=True)
class SnapshotSeries:
    snapshots: tuple[HeapSnapshot, ...]

    @property
    def process_name(self) -> str:
        return self.snapshots[0].process_name if self.snapshots else ""

    @property
    def timestamps(self) -> list[float]:
        return [snapshot.timestamp for snapshot in self.snapshots]

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self) -> Iterator[HeapSnapshot]:
        return iter(self.snapshots)

    def __getitem__(self, position: int) -> HeapSnapshot:
        return self.snapshots[position]


@dataclass(frozen=True)
class ContainerClassSet:
    class_names: frozenset[str] = field(default_factory=lambda: DEFAULT_CONTAINER_CLASSES)

    def __post_init__(self) -> None:
        if not self.class_names:
            raise ConfigError("container class set must not be empty")
        object.__setattr__(self, "class_names", frozenset(self.class_names))

    def __contains__(self, class_name: object) -> bool:
        return class_name in self.class_names


@dataclass(frozen=True)
class ContainerView:
    object_id: ObjectId
    class_name: str
    element_count: int
    inbound_count: int

    @property
    def name(self) -> str:
        return f"{self.class_name}@{self.object_id}"


def display_name(record: ObjectRecord | None, object_id: Optional[ObjectId] = None) -> str:
    """Synthesised ``class@id`` name; runtime addresses are not part of the format."""

    if record is None:
        if object_id is None or object_id < 0:
            return "<gc-roots>"
        return f"<unknown>@{object_id}"
    return f"{record.class_name}@{record.id}"


def _require_id(value: Any, what: str, path: Optional[Path]) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= _MAX_ID:
        raise ParseError(f"{what} must be a non-negative 64-bit integer, got {value!r}", path=path)
    return value


def _optional_time(value: Any, what: str, path: Optional[Path]) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{what} must be a number, got {value!r}", path=path)
    return value


def snapshot_from_mapping(
    document: Mapping[str, Any], *, path: Optional[Path] = None
) -> HeapSnapshot:
    """Build and validate a snapshot from its decoded JSON document."""

    if not isinstance(document, Mapping):
        raise ParseError("snapshot document must be a JSON object", path=path)
    try:
        snapshot_id = document["snapshot_id"]
        timestamp = document["timestamp_s"]
        process_name = document["process"]
        raw_roots = document["gc_roots"]
        raw_objects = document["objects"]
    except KeyError as exc:
        raise ParseError(f"missing required key {exc.args[0]!r}", path=path) from None

    if not isinstance(snapshot_id, str) or not isinstance(process_name, str):
        raise ParseError("snapshot_id and process must be strings", path=path)
    if isinstance(timestamp, bool) or not isinstance(timestamp, (int, float)):
        raise ParseError(f"timestamp_s must be a number, got {timestamp!r}", path=path)
    if not isinstance(raw_roots, list) or not isinstance(raw_objects, list):
        raise ParseError("gc_roots and objects must be arrays", path=path)

    records: list[ObjectRecord] = []
    for raw in raw_objects:
        if not isinstance(raw, Mapping):
            raise ParseError("object entries must be JSON objects", path=path)
        try:
            class_name = raw["class"]
            raw_refs = raw.get("refs", [])
            object_id = _require_id(raw["id"], "object id", path)
            shallow_size = _require_id(raw["shallow_size"], f"shallow_size of {object_id}", path)
        except KeyError as exc:
            raise ParseError(f"object entry missing key {exc.args[0]!r}", path=path) from None
        if not isinstance(class_name, str) or not isinstance(raw_refs, list):
            raise ParseError(f"object {object_id}: class must be a string and refs an array", path=path)
        records.append(
            ObjectRecord(
                id=object_id,
                class_name=class_name,
                shallow_size=shallow_size,
                refs=tuple(_require_id(ref, f"ref of {object_id}", path) for ref in raw_refs),
                created_at=_optional_time(raw.get("created_at_s"), "created_at_s", path),
                last_access=_optional_time(raw.get("last_access_s"), "last_access_s", path),
            )
        )

    snapshot = HeapSnapshot(
        snapshot_id=snapshot_id,
        timestamp=timestamp,
        process_name=process_name,
        gc_roots=tuple(_require_id(root, "gc root", path) for root in raw_roots),
        objects=tuple(records),
    )
    validate_snapshot(snapshot, path=path)
    return snapshot


def validate_snapshot(snapshot: HeapSnapshot, *, path: Optional[Path] = None) -> None:
    seen: set[ObjectId] = set()
    for record in snapshot.objects:
        if record.id in seen:
            raise DuplicateId(f"duplicate object id {record.id}", path=path)
        seen.add(record.id)
        if record.shallow_size < 0:
            raise ParseError(f"object {record.id} has negative shallow_size", path=path)
    for record in snapshot.objects:
        for ref in record.refs:
            if ref not in seen:
                raise DanglingReference(
                    f"object {record.id} references missing object {ref}", path=path
                )
    for root in snapshot.gc_roots:
        if root not in seen:
            raise DanglingReference(f"gc root {root} does not resolve", path=path)


def load_snapshot(path: Path | str) -> HeapSnapshot:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError("snapshot file not found", path=path) from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", path=path) from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    snapshot = snapshot_from_mapping(document, path=path)
    LOGGER.debug(
        "Loaded snapshot %s (%d objects, %d roots) from %s",
        snapshot.snapshot_id,
        len(snapshot.objects),
        len(snapshot.gc_roots),
        path,
    )
    return snapshot


def make_series(snapshots: Iterable[HeapSnapshot]) -> SnapshotSeries:
    """Order snapshots by timestamp and enforce the series invariants."""

    ordered = sorted(snapshots, key=lambda snapshot: snapshot.timestamp)
    for previous, current in zip(ordered, ordered[1:]):
        if current.timestamp <= previous.timestamp:
            raise NonMonotonicTimestamps(
                f"snapshots {previous.snapshot_id!r} and {current.snapshot_id!r} "
                f"share timestamp {current.timestamp}"
            )
    identifiers = Counter(snapshot.snapshot_id for snapshot in ordered)
    duplicated = sorted(name for name, count in identifiers.items() if count > 1)
    if duplicated:
        raise DuplicateId(f"snapshot_id repeated within series: {', '.join(duplicated)}")
    processes = {snapshot.process_name for snapshot in ordered}
    if len(processes) > 1:
        raise ParseError(f"series mixes processes: {', '.join(sorted(processes))}")
    return SnapshotSeries(snapshots=tuple(ordered))


def load_series(paths: Sequence[Path | str]) -> SnapshotSeries:
    if not paths:
        raise ParseError("at least one snapshot file is required")
    return make_series(load_snapshot(path) for path in paths)


def snapshot_to_mapping(snapshot: HeapSnapshot) -> dict[str, Any]:
    objects = []
    for record in snapshot.objects:
        entry: dict[str, Any] = {
            "id": record.id,
            "class": record.class_name,
            "shallow_size": record.shallow_size,
            "refs": list(record.refs),
        }
        if record.created_at is not None:
            entry["created_at_s"] = record.created_at
        if record.last_access is not None:
            entry["last_access_s"] = record.last_access
        objects.append(entry)
    return {
        "snapshot_id": snapshot.snapshot_id,
        "timestamp_s": snapshot.timestamp,
        "process": snapshot.process_name,
        "gc_roots": list(snapshot.gc_roots),
        "objects": objects,
    }


def dump_snapshot(snapshot: HeapSnapshot, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(snapshot_to_mapping(snapshot), sort_keys=True, separators=(",", ":")),
        encoding="utf-8",
    )
    return path


def find_containers(
    snapshot: HeapSnapshot, classes: ContainerClassSet | None = None
) -> list[ContainerView]:
    classes = classes or ContainerClassSet()
    inbound = snapshot.inbound_counts
    return [
        ContainerView(
            object_id=record.id,
            class_name=record.class_name,
            element_count=len(record.refs),
            inbound_count=inbound.get(record.id, 0),
        )
        for record in snapshot.objects
        if record.class_name in classes
    ]


__all__ = [
    "ContainerClassSet",
    "ContainerView",
    "DEFAULT_CONTAINER_CLASSES",
    "HeapSnapshot",
    "ObjectId",
    "ObjectRecord",
    "SnapshotSeries",
    "display_name",
    "dump_snapshot",
    "find_containers",
    "load_series",
    "load_snapshot",
    "make_series",
    "snapshot_from_mapping",
    "snapshot_to_mapping",
    "validate_snapshot",
]
