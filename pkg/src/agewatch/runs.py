"""Experiment run directories: metadata, indicators, event logs and snapshots."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .candidacy import ListedContainers
from .detector import EventLog
from .engine import Trace, run
from .errors import InputError
from .heap import dump_snapshot
from .simulation import SimulationSpec
from .trend import read_indicator_csv, write_indicator_csv

LOGGER = logging.getLogger(__name__)

WORK_ROOT = Path(os.getenv("AGEWATCH_WORK_DIR", "work"))


def load_metadata(metadata_path: Path) -> dict:
    if metadata_path.exists():
        return json.loads(metadata_path.read_text(encoding="utf-8"))
    return {}


def write_metadata(metadata_path: Path, data: dict) -> None:
    metadata_path.parent.mkdir(parents=True, exist_ok=True)
    metadata_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RunJob:
    spec: SimulationSpec
    experiment_id: str
    run_dir: Path
    seed: Optional[int] = None
    fixed_clock: bool = False
    rejuvenation_list: Optional[ListedContainers] = None


def execute_run(job: RunJob) -> Trace:
    """Run one experiment and persist its outputs under ``job.run_dir``."""

    metadata_path = job.run_dir / "metadata.json"
    experiment = job.spec.experiment(job.experiment_id)
    meta = {
        "experiment": experiment.id,
        "description": experiment.description,
        "status": "processing",
        "message": "Simulating",
    }
    write_metadata(metadata_path, meta)

    try:
        with EventLog(job.run_dir / "events.jsonl", fixed_clock=job.fixed_clock) as log:
            trace = run(
                job.spec,
                experiment,
                job.seed,
                event_log=log,
                rejuvenation_list=job.rejuvenation_list,
            )
        write_indicator_csv(job.run_dir / "indicators.csv", trace.indicators)
        for index, snapshot in enumerate(trace.snapshots, start=1):
            dump_snapshot(snapshot, job.run_dir / "snapshots" / f"snapshot_{index:04d}.json")

        meta.update(
            {
                "status": "completed",
                "message": "Simulation complete",
                "seed": trace.seed,
                **trace.summary(),
            }
        )
        write_metadata(metadata_path, meta)
        return trace
    except Exception as exc:  # noqa: BLE001 - recorded in the run metadata, then re-raised
        LOGGER.exception("Simulation failed for %s", job.experiment_id)
        meta.update({"status": "error", "message": str(exc)})
        write_metadata(metadata_path, meta)
        raise


def run_experiments(
    spec: SimulationSpec,
    out_dir: Path | str,
    *,
    seed: Optional[int] = None,
    jobs: int = 1,
    fixed_clock: bool = False,
    experiment_ids: Optional[Sequence[str]] = None,
    rejuvenation_list: Optional[ListedContainers] = None,
) -> dict[str, Trace]:
    """Run experiments into ``out_dir/<id>/``; results do not depend on ``jobs``."""

    out_dir = Path(out_dir)
    ids = list(experiment_ids) if experiment_ids else [experiment.id for experiment in spec.experiments]
    work = [
        RunJob(
            spec=spec,
            experiment_id=experiment_id,
            run_dir=out_dir / experiment_id,
            seed=seed,
            fixed_clock=fixed_clock,
            rejuvenation_list=rejuvenation_list,
        )
        for experiment_id in ids
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            traces = list(pool.map(execute_run, work))
    else:
        traces = [execute_run(job) for job in work]
    return {trace.experiment_id: trace for trace in traces}


def load_trace(run_dir: Path | str) -> Trace:
    """Rebuild the indicator part of a trace from a finished run directory."""

    run_dir = Path(run_dir)
    meta = load_metadata(run_dir / "metadata.json")
    if meta.get("status") != "completed":
        raise InputError(f"{run_dir}: run is not completed (status {meta.get('status', 'missing')!r})")
    return Trace(
        experiment_id=meta["experiment"],
        seed=int(meta.get("seed", 0)),
        duration_s=float(meta.get("duration_s", 0.0)),
        indicators=read_indicator_csv(run_dir / "indicators.csv"),
        unavailable_s=float(meta.get("unavailable_s", 0.0)),
    )


def find_runs(runs_dir: Path | str) -> list[Path]:
    runs_dir = Path(runs_dir)
    return sorted(path.parent for path in runs_dir.glob("*/metadata.json"))


__all__ = [
    "RunJob",
    "WORK_ROOT",
    "execute_run",
    "find_runs",
    "load_metadata",
    "load_trace",
    "run_experiments",
    "write_metadata",
]
