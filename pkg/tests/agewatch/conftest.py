import tomllib
from pathlib import Path

import pytest

from agewatch.heap import HeapSnapshot, ObjectRecord, make_series
from agewatch.simulation import spec_from_mapping

REPO_ROOT = Path(__file__).resolve().parents[2]
BUNDLED_SPEC = REPO_ROOT / "experiments" / "micro_rejuvenation.toml"
CONTAINER_CLASSES = (
    "java.util.LinkedList",
    "java.util.Hashtable",
    "java.util.ArrayList",
    "java.util.HashMap",
    "java.util.Vector",
)

SMALL_SPEC = """
[simulation]
seed = 7
sample_period_s = 10
snapshot_period_s = 1800
horizon_s = 5400

[launch_time]
bloat_coefficient = 2e-5
drift_ms_per_s = 5e-4
noise_sd_ms = 0.5

[[launch_time.activities]]
name = "com.example.Fast"
base_ms = 300
sensitivity = 4.0

[[launch_time.activities]]
name = "com.example.Slow"
base_ms = 800
sensitivity = 6.0

[workload]
duration_s = 5400
gesture_rate_per_s = 0.5

[workload.targets]
app_switch = "activity_manager"
navigation = "activity_manager"
single_touch = "power_manager"
swipe = "activity_manager"
multi_touch = "power_manager"

[[services]]
name = "activity_manager"
registered = true

[[services.containers]]
name = "mReceivers"
class_name = "java.util.HashMap"
growth_rate = 0.2
element_size = 2048
flush_on_rejuvenate = true

[[services.containers]]
name = "mProcesses"
class_name = "java.util.ArrayList"
initial_elements = 4
element_size = 512

[[services]]
name = "power_manager"
registered = false

[[services.containers]]
name = "mWakeLocks"
class_name = "java.util.LinkedList"
growth_rate = 0.05
element_size = 1024

[[experiments]]
id = "EXP1"

[[experiments]]
id = "EXP2"
rejuvenated_services = ["activity_manager"]
trigger = "periodic"
rejuvenation_period_s = 1800

[[experiments]]
id = "EXP3"
reboot_period_s = 1800
"""


def make_record(object_id, class_name="java.lang.Object", size=16, refs=(), created=None, accessed=None):
    return ObjectRecord(object_id, class_name, size, tuple(refs), created_at=created, last_access=accessed)


def make_snapshot(objects, roots, timestamp=0.0, snapshot_id=None, process="system_server"):
    return HeapSnapshot(
        snapshot_id=snapshot_id or f"snap-{timestamp:g}",
        timestamp=timestamp,
        process_name=process,
        gc_roots=tuple(roots),
        objects=tuple(objects),
    )


def snapshot_document(snapshot_id="s1", timestamp=0, objects=(), roots=()):
    return {
        "snapshot_id": snapshot_id,
        "timestamp_s": timestamp,
        "process": "system_server",
        "gc_roots": list(roots),
        "objects": list(objects),
    }


@pytest.fixture
def small_spec_text():
    return SMALL_SPEC


@pytest.fixture
def small_spec():
    return spec_from_mapping(tomllib.loads(SMALL_SPEC))


@pytest.fixture
def small_spec_path(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_SPEC, encoding="utf-8")
    return path


TOTAL_CONTAINERS = 12_674
GOOD_CONTAINERS = 36
SHARED_CONTAINERS = 120
SHORT_LIVED_CONTAINERS = 80
TIMES = (0.0, 3600.0, 7200.0)


def build_aging_series():
    """Snapshots of a heap embedding 12,674 containers of which exactly 36 pass every criterion.

    * 36 growing containers with long-lived elements, owned by one service object
    * 120 growing containers also reachable from a second root (not hidden in a dominator)
    * 80 growing containers whose elements are replaced every snapshot (no long lifetime)
    * the rest never change size
    """

    owner_id, second_root_id = 1, 2
    first_container = 100
    snapshots = []
    for index, timestamp in enumerate(TIMES):
        next_element = 1_000_000
        objects = []
        owned = []
        shared = []
        for offset in range(TOTAL_CONTAINERS):
            container_id = first_container + offset
            class_name = CONTAINER_CLASSES[offset % len(CONTAINER_CLASSES)]
            owned.append(container_id)
            elements = []
            if offset < GOOD_CONTAINERS + SHARED_CONTAINERS:
                # Element ids depend only on the container and position, so they persist.
                for position in range(index + 1):
                    element_id = 2_000_000 + offset * 8 + position
                    elements.append(make_record(element_id, "com.example.Listener", 64, created=0.0))
                if offset >= GOOD_CONTAINERS:
                    shared.append(container_id)
            elif offset < GOOD_CONTAINERS + SHARED_CONTAINERS + SHORT_LIVED_CONTAINERS:
                for _ in range(index + 1):
                    elements.append(make_record(next_element, "com.example.Event", 32, created=timestamp))
                    next_element += 1
            objects.append(make_record(container_id, class_name, 40, [e.id for e in elements]))
            objects.extend(elements)
        objects.append(make_record(owner_id, "com.android.server.SystemService", 64, owned))
        objects.append(make_record(second_root_id, "android.os.ServiceManager", 16, shared))
        snapshots.append(
            make_snapshot(objects, (owner_id, second_root_id), timestamp, snapshot_id=f"aging-{index}")
        )
    return make_series(snapshots)


@pytest.fixture(scope="session")
def aging_series():
    return build_aging_series()
