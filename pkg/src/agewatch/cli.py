"""Command-line interface: analyze snapshots, detect aging, simulate and report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import pathlib
import sys
from typing import Optional

from .candidacy import build_report, load_rejuvenation_list, write_report
from .config import AgewatchConfig, load_config
from .detector import EventLog, replay
from .engine import CPU_INDICATOR
from .errors import AgewatchError, InputError, MissingBaseline, ParseError
from .heap import load_series
from .metrics import render_markdown, summarize, write_comparison, write_plots
from .runs import WORK_ROOT, find_runs, load_trace, run_experiments
from .scheduler import LoadLevel, PolicyMode, classify_load, schedule
from .simulation import load_simulation_spec
from .trend import read_indicator_csv
from .utils import format_duration, format_percent

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

SPEC_OWNED_SECTIONS = frozenset({"detector", "scheduler", "load"})


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="agewatch",
        description="Find containers worth micro-rejuvenating, detect aging trends and simulate rejuvenation.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-vv for debug)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log errors")
    parser.add_argument(
        "--fixed-clock",
        action="store_true",
        help="Pin wall-clock timestamps in event logs so outputs are byte-identical",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="Select containers to rejuvenate from heap snapshots")
    analyze.add_argument(
        "--snapshots",
        type=pathlib.Path,
        nargs="+",
        required=True,
        help="Snapshot JSON files, or one directory holding them",
    )
    analyze.add_argument("--config", type=pathlib.Path, help="Config file (default: $AGEWATCH_CONFIG)")
    analyze.add_argument("--out", type=pathlib.Path, help="Output directory (default: work/analyze)")
    analyze.add_argument("--component", help="Only report containers under classes with this prefix")
    analyze.add_argument("--min-snapshots", type=int, help="Override candidacy.min_snapshots")

    detect_cmd = sub.add_parser("detect", help="Detect aging trends in an indicator CSV")
    detect_cmd.add_argument("--indicators", type=pathlib.Path, required=True, help="timestamp_s,indicator,value CSV")
    detect_cmd.add_argument("--config", type=pathlib.Path, help="Config file (default: $AGEWATCH_CONFIG)")
    detect_cmd.add_argument("--out", type=pathlib.Path, help="Output directory (default: work/detect)")
    detect_cmd.add_argument("--window", type=int, help="Override detector.window")
    detect_cmd.add_argument("--policy", choices=[mode.value for mode in PolicyMode], help="Override scheduler.mode")
    detect_cmd.add_argument(
        "--load",
        choices=[level.label for level in LoadLevel],
        help=f"Current load level (default: from the {CPU_INDICATOR} indicator, else medium)",
    )

    simulate = sub.add_parser("simulate", help="Run simulated rejuvenation experiments")
    simulate.add_argument("--spec", type=pathlib.Path, required=True, help="Experiment spec (TOML or JSON)")
    simulate.add_argument("--seed", type=int, help="Override the spec seed")
    simulate.add_argument("--out", type=pathlib.Path, help="Output directory (default: work/simulate)")
    simulate.add_argument("--config", type=pathlib.Path, help="Config file (default: $AGEWATCH_CONFIG)")
    simulate.add_argument("--experiment", action="append", help="Only run this experiment id (repeatable)")
    simulate.add_argument(
        "--rejuvenation-list",
        type=pathlib.Path,
        help="rejuvenation_list.json from analyze; flags the listed containers for flushing",
    )
    simulate.add_argument("--jobs", type=int, default=1, help="Parallel experiment runs (default: 1)")
    simulate.add_argument("--no-plots", action="store_true", help="Skip PNG plots")

    report = sub.add_parser("report", help="Compare finished simulation runs")
    report.add_argument("--runs", type=pathlib.Path, required=True, help="Directory of run directories")
    report.add_argument("--out", type=pathlib.Path, help="Output directory (default: the runs directory)")
    report.add_argument("--config", type=pathlib.Path, help="Config file (default: $AGEWATCH_CONFIG)")
    report.add_argument("--baseline", help="Baseline experiment id (default: metrics.baseline)")
    report.add_argument("--no-plots", action="store_true", help="Skip PNG plots")
    return parser.parse_args(argv)


def configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _snapshot_paths(inputs: list[pathlib.Path]) -> list[pathlib.Path]:
    if len(inputs) == 1 and inputs[0].is_dir():
        paths = sorted(inputs[0].glob("*.json"))
        if not paths:
            raise ParseError("no snapshot files in directory", path=inputs[0])
        return paths
    return inputs


def run_analyze(args: argparse.Namespace, config: AgewatchConfig) -> int:
    candidacy = config.candidacy
    overrides = {}
    if args.component:
        overrides["component"] = args.component
    if args.min_snapshots is not None:
        overrides["min_snapshots"] = args.min_snapshots
    if overrides:
        candidacy = dataclasses.replace(candidacy, **overrides)

    series = load_series(_snapshot_paths(args.snapshots))
    report = build_report(series, candidacy)
    paths = write_report(report, args.out or WORK_ROOT / "analyze")
    selected = report.rejuvenation_list.container_names
    print(f"Analysed {len(report.rows)} containers of {series.process_name}; {len(selected)} to rejuvenate")
    for name in selected:
        print(f"  {name}")
    print(f"Report saved to {paths['report']}")
    print(f"Rejuvenation list saved to {paths['list']}")
    return EXIT_OK


def run_detect(args: argparse.Namespace, config: AgewatchConfig) -> int:
    detector_config = config.detector
    if args.window is not None:
        detector_config = dataclasses.replace(detector_config, window=args.window)
    policy = config.scheduler
    if args.policy:
        policy = dataclasses.replace(policy, mode=PolicyMode(args.policy))

    series = read_indicator_csv(args.indicators)
    cpu = series.pop(CPU_INDICATOR, None)
    if args.load:
        load = LoadLevel.parse(args.load)
    elif cpu is not None and len(cpu):
        load = classify_load(cpu.values[-1], thresholds=config.load)
    else:
        load = LoadLevel.MEDIUM
    now = max((s.timestamps[-1] for s in series.values() if len(s)), default=0.0)

    out_dir = args.out or WORK_ROOT / "detect"
    result = replay(series, detector_config)
    alarm = result.alarm
    decision = schedule(alarm, policy, load, now) if alarm is not None else None

    timeline = [(alert.raised_at, "alert", alert.to_mapping()) for alert in result.raised]
    timeline += [(raised.raised_at, "alarm", raised.to_mapping()) for raised in result.alarms]
    with EventLog(out_dir / "events.jsonl", fixed_clock=args.fixed_clock) as log:
        for t, event, fields in sorted(timeline, key=lambda item: (item[0], item[1] == "alarm")):
            log.record(event, t, **fields)
        if decision is not None:
            log.record("decision", now, action=decision.action.value, at=decision.at, reason=decision.reason)
    status = {
        "alerts": [alert.to_mapping() for alert in result.active],
        "raised": [alert.to_mapping() for alert in result.raised],
        "alarm": alarm.to_mapping() if alarm else None,
        "decision": dataclasses.asdict(decision) if decision else None,
        "load": load.label,
    }
    (out_dir / "status.json").write_text(json.dumps(status, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")

    if not result.raised:
        print("no aging detected")
        return EXIT_OK
    active = {id(alert) for alert in result.active}
    for alert in result.raised:
        cleared = "" if id(alert) in active else ", cleared"
        print(
            f"alert {alert.indicator}: slope {alert.slope:.6g}/s, p={alert.p_value:.3g}, "
            f"persisted {format_duration(alert.persistence)}{cleared}"
        )
    if alarm is None:
        print("no alarm: alerts do not satisfy any alarm rule")
        return EXIT_OK
    if alarm.exceeded:
        ttaf = "already reached"
    elif alarm.ttaf_s is None:
        ttaf = "none"
    else:
        ttaf = f"{alarm.ttaf_s:.0f} s ({alarm.ttaf_s / 3600:.2f} h)"
    print(f"alarm: confidence {alarm.confidence.label}, TTAF {ttaf}")
    print(f"decision: {decision.describe()}")
    return EXIT_OK


def _baseline_id(spec) -> Optional[str]:
    for experiment in spec.experiments:
        if experiment.is_baseline:
            return experiment.id
    return None


def run_simulate(args: argparse.Namespace, config: AgewatchConfig) -> int:
    spec = load_simulation_spec(args.spec)
    overridden = sorted(config.sections & SPEC_OWNED_SECTIONS)
    if overridden:
        LOGGER.warning(
            "Ignoring config sections %s: simulated runs take detector, policy and load thresholds from %s",
            ", ".join(overridden),
            args.spec,
        )
    listed = load_rejuvenation_list(args.rejuvenation_list) if args.rejuvenation_list else None
    out_dir = args.out or WORK_ROOT / "simulate"
    traces = run_experiments(
        spec,
        out_dir,
        seed=args.seed,
        jobs=max(1, args.jobs),
        fixed_clock=args.fixed_clock,
        experiment_ids=args.experiment,
        rejuvenation_list=listed,
    )
    for experiment_id, trace in traces.items():
        print(f"{experiment_id}: {len(trace.rejuvenation_times)} rejuvenations, {len(trace.reboots)} reboots")

    baseline = _baseline_id(spec)
    if baseline is None or baseline not in traces or len(traces) < 2:
        print(f"Runs saved to {out_dir}")
        return EXIT_OK
    metrics = dataclasses.replace(
        config.metrics,
        horizon_s=spec.horizon_of(spec.experiment(baseline)),
        threshold_ms=spec.threshold_ms,
        baseline=baseline,
    )
    comparison = summarize(traces, metrics)
    _write_comparison(comparison, traces, out_dir, plots=not args.no_plots)
    return EXIT_OK


def run_report(args: argparse.Namespace, config: AgewatchConfig) -> int:
    run_dirs = find_runs(args.runs)
    if not run_dirs:
        raise InputError(f"no run directories under {args.runs}")
    traces = {}
    for run_dir in run_dirs:
        trace = load_trace(run_dir)
        traces[trace.experiment_id] = trace
    metrics = config.metrics
    if args.baseline:
        metrics = dataclasses.replace(metrics, baseline=args.baseline)
    if metrics.baseline not in traces:
        raise MissingBaseline(f"baseline {metrics.baseline} not found under {args.runs}")
    comparison = summarize(traces, metrics)
    _write_comparison(comparison, traces, args.out or args.runs, plots=not args.no_plots)
    return EXIT_OK


def _write_comparison(comparison, traces, out_dir: pathlib.Path, *, plots: bool) -> None:
    paths = write_comparison(comparison, out_dir)
    if plots:
        paths.update(write_plots(comparison, traces, out_dir))
    for experiment in comparison.experiments:
        print(
            f"{experiment.experiment_id}: mean Gain_LT {format_percent(experiment.mean_gain_lt)}, "
            f"mean Gain_TTAF {format_percent(experiment.mean_gain_ttaf)}"
        )
    LOGGER.debug("Comparison:\n%s", render_markdown(comparison))
    print(f"Comparison saved to {paths['csv']}")


COMMANDS = {
    "analyze": run_analyze,
    "detect": run_detect,
    "simulate": run_simulate,
    "report": run_report,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except InputError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AgewatchError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - surface all errors to CLI
        LOGGER.exception("Unexpected failure")
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
