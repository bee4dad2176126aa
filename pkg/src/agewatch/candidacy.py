"""Selection of containers worth micro-rejuvenating from a heap snapshot series.

Six criteria screen the containers found in every snapshot:

* C1 hidden inside a dominator (immediate dominator is a regular object)
* C2 growing (retained size varies and, by default, grows end over end)
* C3 holds at least one long-lived element
* C4 holds elements idle for a long time (skipped when no access data exists)
* C5 elements are all of white-listed disposable classes (optional)
* C6 no element is of a black-listed critical class (optional)
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .dominators import (
    SUPER_ROOT,
    DominatorTree,
    RetainedSizes,
    compute_dominators,
    compute_retained,
    dominator_chain,
)
from .errors import ConfigError, ParseError, SeriesTooShort
from .heap import (
    ContainerClassSet,
    HeapSnapshot,
    ObjectId,
    ObjectRecord,
    SnapshotSeries,
    display_name,
    find_containers,
)

LOGGER = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "object_name",
    "dominator_name",
    "mean",
    "standard_deviation",
    "number",
    "rejuvenate",
)


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class CandidacyConfig:
    container_classes: ContainerClassSet = field(default_factory=ContainerClassSet)
    whitelist: frozenset[str] = frozenset()
    blacklist: frozenset[str] = frozenset()
    use_whitelist: bool = False
    use_blacklist: bool = False
    min_snapshots: int = 3
    long_lifetime_s: Optional[float] = None
    idle_threshold_s: float = 600.0
    require_net_growth: bool = True
    component: Optional[str] = None

    def __post_init__(self) -> None:
        if self.min_snapshots < 2:
            raise ConfigError("candidacy.min_snapshots must be at least 2")
        if self.long_lifetime_s is not None and self.long_lifetime_s <= 0:
            raise ConfigError("candidacy.long_lifetime_s must be positive")
        if self.idle_threshold_s <= 0:
            raise ConfigError("candidacy.idle_threshold_s must be positive")
        if self.use_whitelist and not self.whitelist:
            LOGGER.warning("White-list enabled but empty: only empty containers can pass C5")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "CandidacyConfig":
        allowed = {
            "container_classes",
            "whitelist",
            "blacklist",
            "use_whitelist",
            "use_blacklist",
            "min_snapshots",
            "long_lifetime_s",
            "idle_threshold_s",
            "require_net_growth",
            "component",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown candidacy keys: {', '.join(sorted(unknown))}")
        values = dict(data)
        if "container_classes" in values:
            values["container_classes"] = ContainerClassSet(frozenset(values["container_classes"]))
        for key in ("whitelist", "blacklist"):
            if key in values:
                values[key] = frozenset(values[key])
        return cls(**values)


@dataclass(frozen=True)
class SnapshotAnalysis:
    snapshot: HeapSnapshot
    tree: DominatorTree
    retained: RetainedSizes


@dataclass
class TrackedContainer:
    object_id: ObjectId
    class_name: str
    retained: list[int] = field(default_factory=list)
    element_counts: list[int] = field(default_factory=list)
    dominators: list[ObjectId] = field(default_factory=list)
    inbound: list[int] = field(default_factory=list)
    elements: list[tuple[ObjectRecord, ...]] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"{self.class_name}@{self.object_id}"


@dataclass
class TrackingResult:
    tracked: list[TrackedContainer]
    transient: list[str]
    unreachable: list[str]


@dataclass(frozen=True)
class ContainerCandidate:
    object_name: str
    dominator_name: str
    mean_retained: float
    stddev_retained: float
    element_count: int
    rejuvenate: bool
    per_criterion: Mapping[str, Verdict]
    inbound_count: int = 0
    first_retained: int = 0
    last_retained: int = 0

    @property
    def single_owner(self) -> bool:
        return self.inbound_count == 1

    def to_row(self) -> dict[str, str]:
        return {
            "object_name": self.object_name,
            "dominator_name": self.dominator_name,
            "mean": f"{self.mean_retained:.3f}",
            "standard_deviation": f"{self.stddev_retained:.3f}",
            "number": str(self.element_count),
            "rejuvenate": "TRUE" if self.rejuvenate else "FALSE",
        }

    def to_detail(self) -> dict[str, Any]:
        return {
            "object_name": self.object_name,
            "dominator_name": self.dominator_name,
            "mean": self.mean_retained,
            "standard_deviation": self.stddev_retained,
            "number": self.element_count,
            "rejuvenate": self.rejuvenate,
            "per_criterion": {key: verdict.value for key, verdict in sorted(self.per_criterion.items())},
            "inbound_count": self.inbound_count,
            "single_owner": self.single_owner,
            "first_retained": self.first_retained,
            "last_retained": self.last_retained,
        }


@dataclass(frozen=True)
class RejuvenationList:
    process_name: str
    candidates: tuple[ContainerCandidate, ...]
    generated_at: float

    @property
    def container_names(self) -> list[str]:
        return [candidate.object_name for candidate in self.candidates]

    def to_mapping(self) -> dict[str, Any]:
        return {
            "process": self.process_name,
            "containers": self.container_names,
            "generated_at": self.generated_at,
        }


@dataclass(frozen=True)
class CandidacyReport:
    rows: tuple[ContainerCandidate, ...]
    rejuvenation_list: RejuvenationList
    transient: tuple[str, ...] = ()
    unreachable: tuple[str, ...] = ()


class ListedContainers(NamedTuple):
    process: str
    containers: tuple[str, ...]


def analyze_snapshot(snapshot: HeapSnapshot) -> SnapshotAnalysis:
    tree = compute_dominators(snapshot)
    return SnapshotAnalysis(snapshot=snapshot, tree=tree, retained=compute_retained(snapshot, tree))


def track_containers(
    series: SnapshotSeries,
    cfg: CandidacyConfig,
    analyses: Optional[Sequence[SnapshotAnalysis]] = None,
) -> TrackingResult:
    if len(series) < cfg.min_snapshots:
        raise SeriesTooShort(
            f"candidacy needs at least {cfg.min_snapshots} snapshots, got {len(series)}"
        )
    if analyses is None:
        analyses = [analyze_snapshot(snapshot) for snapshot in series]

    per_snapshot: list[dict[tuple[ObjectId, str], Any]] = []
    for analysis in analyses:
        views = find_containers(analysis.snapshot, cfg.container_classes)
        per_snapshot.append({(view.object_id, view.class_name): view for view in views})

    everywhere = set(per_snapshot[0])
    for views in per_snapshot[1:]:
        everywhere &= set(views)
    seen_anywhere = set().union(*per_snapshot)
    transient = sorted(f"{cls}@{oid}" for oid, cls in seen_anywhere - everywhere)

    tracked: list[TrackedContainer] = []
    unreachable: list[str] = []
    for key in sorted(everywhere, key=lambda item: (item[1], item[0])):
        object_id, class_name = key
        if not all(object_id in analysis.tree.reachable for analysis in analyses):
            unreachable.append(f"{class_name}@{object_id}")
            continue
        container = TrackedContainer(object_id=object_id, class_name=class_name)
        for analysis, views in zip(analyses, per_snapshot):
            record = analysis.snapshot.get(object_id)
            container.retained.append(analysis.retained[object_id])
            container.element_counts.append(views[key].element_count)
            container.dominators.append(analysis.tree.idom[object_id])
            container.inbound.append(views[key].inbound_count)
            container.elements.append(tuple(analysis.snapshot.get(ref) for ref in record.refs))
        tracked.append(container)

    if transient:
        LOGGER.info("Excluded %d transient containers", len(transient))
    return TrackingResult(tracked=tracked, transient=transient, unreachable=unreachable)


def _lifetime_threshold(series: SnapshotSeries, cfg: CandidacyConfig) -> float:
    if cfg.long_lifetime_s is not None:
        return cfg.long_lifetime_s
    gaps = np.diff(series.timestamps)
    return float(gaps.min())


def _max_element_lifetime(container: TrackedContainer, series: SnapshotSeries) -> float:
    longest = float("-inf")
    run_start: dict[ObjectId, float] = {}
    for snapshot, elements in zip(series, container.elements):
        current: dict[ObjectId, float] = {}
        for element in elements:
            if element.created_at is not None:
                lifetime = snapshot.timestamp - element.created_at
            else:
                current[element.id] = run_start.get(element.id, snapshot.timestamp)
                lifetime = snapshot.timestamp - current[element.id]
            current.setdefault(element.id, snapshot.timestamp)
            longest = max(longest, lifetime)
        run_start = current
    return longest


def evaluate_criteria(
    container: TrackedContainer,
    series: SnapshotSeries,
    trees: Sequence[DominatorTree],
    cfg: CandidacyConfig,
) -> tuple[dict[str, Verdict], bool]:
    """Per-criterion verdicts plus the rejuvenate decision for one tracked container."""

    verdicts: dict[str, Verdict] = {}

    hidden = all(tree.idom[container.object_id] != SUPER_ROOT for tree in trees)
    verdicts["C1"] = Verdict.PASS if hidden else Verdict.FAIL

    retained = np.asarray(container.retained, dtype=float)
    growing = bool(retained.std() > 0)
    if cfg.require_net_growth:
        growing = growing and retained[-1] > retained[0]
    verdicts["C2"] = Verdict.PASS if growing else Verdict.FAIL

    long_lived = _max_element_lifetime(container, series) >= _lifetime_threshold(series, cfg)
    verdicts["C3"] = Verdict.PASS if long_lived else Verdict.FAIL

    last_time = series[-1].timestamp
    access_times = [
        element.last_access for element in container.elements[-1] if element.last_access is not None
    ]
    if not access_times:
        verdicts["C4"] = Verdict.SKIPPED
    elif max(last_time - accessed for accessed in access_times) >= cfg.idle_threshold_s:
        verdicts["C4"] = Verdict.PASS
    else:
        verdicts["C4"] = Verdict.FAIL

    element_classes = {element.class_name for elements in container.elements for element in elements}
    if cfg.use_whitelist:
        verdicts["C5"] = Verdict.PASS if element_classes <= cfg.whitelist else Verdict.FAIL
    else:
        verdicts["C5"] = Verdict.SKIPPED
    if cfg.use_blacklist:
        verdicts["C6"] = Verdict.FAIL if element_classes & cfg.blacklist else Verdict.PASS
    else:
        verdicts["C6"] = Verdict.SKIPPED

    rejuvenate = all(verdicts[key] is Verdict.PASS for key in ("C1", "C2", "C3"))
    rejuvenate = rejuvenate and verdicts["C4"] is not Verdict.FAIL
    if cfg.use_whitelist:
        rejuvenate = rejuvenate and verdicts["C5"] is Verdict.PASS
    if cfg.use_blacklist:
        rejuvenate = rejuvenate and verdicts["C6"] is Verdict.PASS
    return verdicts, rejuvenate


def _in_component(analysis: SnapshotAnalysis, object_id: ObjectId, prefix: str) -> bool:
    for dominator in dominator_chain(analysis.tree, object_id):
        if dominator == SUPER_ROOT:
            return False
        if analysis.snapshot.get(dominator).class_name.startswith(prefix):
            return True
    return False


def build_report(series: SnapshotSeries, cfg: CandidacyConfig | None = None) -> CandidacyReport:
    cfg = cfg or CandidacyConfig()
    if len(series) < cfg.min_snapshots:
        raise SeriesTooShort(
            f"candidacy needs at least {cfg.min_snapshots} snapshots, got {len(series)}"
        )
    analyses = [analyze_snapshot(snapshot) for snapshot in series]
    trees = [analysis.tree for analysis in analyses]
    tracking = track_containers(series, cfg, analyses)
    last = analyses[-1]

    rows: list[ContainerCandidate] = []
    for container in tracking.tracked:
        if cfg.component and not _in_component(last, container.object_id, cfg.component):
            continue
        verdicts, rejuvenate = evaluate_criteria(container, series, trees, cfg)
        dominator = container.dominators[-1]
        dominator_record = None if dominator == SUPER_ROOT else last.snapshot.get(dominator)
        retained = np.asarray(container.retained, dtype=float)
        rows.append(
            ContainerCandidate(
                object_name=container.name,
                dominator_name=display_name(dominator_record, dominator),
                mean_retained=float(retained.mean()),
                stddev_retained=float(retained.std()),
                element_count=container.element_counts[-1],
                rejuvenate=rejuvenate,
                per_criterion=verdicts,
                inbound_count=container.inbound[-1],
                first_retained=container.retained[0],
                last_retained=container.retained[-1],
            )
        )

    rows.sort(key=lambda row: (-row.mean_retained, row.object_name))
    selected = tuple(row for row in rows if row.rejuvenate)
    LOGGER.info(
        "Process %s: %d containers analysed, %d selected for rejuvenation",
        series.process_name,
        len(rows),
        len(selected),
    )
    return CandidacyReport(
        rows=tuple(rows),
        rejuvenation_list=RejuvenationList(
            process_name=series.process_name,
            candidates=selected,
            generated_at=series[-1].timestamp,
        ),
        transient=tuple(tracking.transient),
        unreachable=tuple(tracking.unreachable),
    )


def write_report(report: CandidacyReport, out_dir: Path | str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row.to_row())

    detail_path = out_dir / "report.json"
    detail = {
        "process": report.rejuvenation_list.process_name,
        "generated_at": report.rejuvenation_list.generated_at,
        "rows": [row.to_detail() for row in report.rows],
        "transient": list(report.transient),
        "unreachable": list(report.unreachable),
    }
    detail_path.write_text(json.dumps(detail, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    list_path = out_dir / "rejuvenation_list.json"
    list_path.write_text(
        json.dumps(report.rejuvenation_list.to_mapping(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return {"report": csv_path, "detail": detail_path, "list": list_path}


def load_rejuvenation_list(path: Path | str) -> ListedContainers:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("rejuvenation list not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    containers = document.get("containers") if isinstance(document, dict) else None
    if not isinstance(containers, list) or not all(isinstance(name, str) for name in containers):
        raise ParseError("'containers' must be a list of class@id strings", path=path)
    return ListedContainers(process=str(document.get("process", "")), containers=tuple(containers))


__all__ = [
    "CandidacyConfig",
    "CandidacyReport",
    "ContainerCandidate",
    "ListedContainers",
    "RejuvenationList",
    "SnapshotAnalysis",
    "TrackedContainer",
    "TrackingResult",
    "Verdict",
    "analyze_snapshot",
    "build_report",
    "evaluate_criteria",
    "load_rejuvenation_list",
    "track_containers",
    "write_report",
]
