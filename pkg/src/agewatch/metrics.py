"""Launch-time and time-to-aging-failure gains of rejuvenated runs over a baseline run."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, MissingBaseline
from .trend import DEFAULT_ALPHA, IndicatorSeries, trend_of
from .utils import format_number, format_percent, markdown_table

LOGGER = logging.getLogger(__name__)

COMPARISON_COLUMNS = (
    "experiment",
    "activity",
    "slope",
    "lt_increase",
    "ttaf_h",
    "slope_r",
    "lt_increase_r",
    "ttaf_r_h",
    "gain_lt_pct",
    "gain_ttaf_pct",
)


@dataclass(frozen=True)
class MetricsConfig:
    horizon_s: float = 21600.0
    threshold_ms: float = 200.0
    alpha: float = DEFAULT_ALPHA
    zero_insignificant: bool = True
    baseline: str = "EXP1"

    def __post_init__(self) -> None:
        if self.horizon_s <= 0 or self.threshold_ms <= 0:
            raise ConfigError("metrics.horizon_s and metrics.threshold_ms must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("metrics.alpha must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "MetricsConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown metrics keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def gain_lt(lt: float, lt_r: float) -> float:
    """Percentage reduction of the launch-time increase: (LT - LT^r) / LT * 100."""

    if lt == 0:
        return 0.0 if lt_r == 0 else math.nan
    return (lt - lt_r) / lt * 100.0


def gain_ttaf(ttaf: float, ttaf_r: float) -> float:
    """Percentage increase of the time to aging failure: (TTAF^r - TTAF) / TTAF * 100."""

    if math.isinf(ttaf) and math.isinf(ttaf_r):
        return 0.0
    if math.isinf(ttaf_r):
        return math.inf
    if math.isinf(ttaf) or ttaf == 0:
        return math.nan
    return (ttaf_r - ttaf) / ttaf * 100.0


def ttaf_from_slope(slope: float, threshold: float) -> float:
    return threshold / slope if slope > 0 else math.inf


@dataclass(frozen=True)
class ActivityComparison:
    activity: str
    slope: float
    lt_increase: float
    ttaf_s: float
    slope_r: float
    lt_increase_r: float
    ttaf_r_s: float
    gain_lt_pct: float
    gain_ttaf_pct: float

    @classmethod
    def from_levels(
        cls,
        activity: str,
        slope: float,
        lt_increase: float,
        ttaf_s: float,
        slope_r: float,
        lt_increase_r: float,
        ttaf_r_s: float,
    ) -> "ActivityComparison":
        return cls(
            activity=activity,
            slope=slope,
            lt_increase=lt_increase,
            ttaf_s=ttaf_s,
            slope_r=slope_r,
            lt_increase_r=lt_increase_r,
            ttaf_r_s=ttaf_r_s,
            gain_lt_pct=gain_lt(lt_increase, lt_increase_r),
            gain_ttaf_pct=gain_ttaf(ttaf_s, ttaf_r_s),
        )

    @property
    def ttaf_h(self) -> float:
        return self.ttaf_s / 3600.0

    @property
    def ttaf_r_h(self) -> float:
        return self.ttaf_r_s / 3600.0

    @property
    def treated_trend(self) -> bool:
        return self.slope_r != 0


def averages(rows: Sequence[ActivityComparison]) -> tuple[float, float]:
    """Mean Gain_LT and Gain_TTAF.

    Rows whose treated run shows no trend are left out of both means, and any
    non-finite gain is left out of its own mean.
    """

    kept = [row for row in rows if row.treated_trend]
    lt = [row.gain_lt_pct for row in kept if math.isfinite(row.gain_lt_pct)]
    ttaf = [row.gain_ttaf_pct for row in kept if math.isfinite(row.gain_ttaf_pct)]
    return (float(np.mean(lt)) if lt else math.nan, float(np.mean(ttaf)) if ttaf else math.nan)


def slope_of(series: IndicatorSeries, alpha: float = DEFAULT_ALPHA, zero_insignificant: bool = True) -> float:
    trend = trend_of(series, alpha, interval=False)
    if zero_insignificant and not trend.significant:
        return 0.0
    return trend.slope


def compute_gains(
    baseline_trace: Any,
    treated_trace: Any,
    horizon_s: float = 21600.0,
    threshold_ms: float = 200.0,
    *,
    alpha: float = DEFAULT_ALPHA,
    zero_insignificant: bool = True,
    activities: Optional[Iterable[str]] = None,
) -> list[ActivityComparison]:
    """Per-activity gains of ``treated_trace`` over ``baseline_trace``.

    Both traces only need ``launch_series(activity)`` and ``activities``.
    """

    rows = []
    for activity in activities if activities is not None else baseline_trace.activities:
        slope = slope_of(baseline_trace.launch_series(activity), alpha, zero_insignificant)
        slope_r = slope_of(treated_trace.launch_series(activity), alpha, zero_insignificant)
        rows.append(
            ActivityComparison.from_levels(
                activity,
                slope,
                slope * horizon_s,
                ttaf_from_slope(slope, threshold_ms),
                slope_r,
                slope_r * horizon_s,
                ttaf_from_slope(slope_r, threshold_ms),
            )
        )
    return rows


@dataclass(frozen=True)
class ExperimentSummary:
    experiment_id: str
    rows: tuple[ActivityComparison, ...]
    mean_gain_lt: float
    mean_gain_ttaf: float
    unavailable_s: float = 0.0


@dataclass
class Comparison:
    baseline_id: str
    experiments: list[ExperimentSummary] = field(default_factory=list)

    def summary(self, experiment_id: str) -> ExperimentSummary:
        for experiment in self.experiments:
            if experiment.experiment_id == experiment_id:
                return experiment
        raise KeyError(experiment_id)


def summarize(
    traces: Mapping[str, Any],
    config: MetricsConfig | None = None,
    *,
    unavailable: Optional[Mapping[str, float]] = None,
) -> Comparison:
    config = config or MetricsConfig()
    if config.baseline not in traces:
        raise MissingBaseline(f"baseline experiment {config.baseline} was not run")
    baseline = traces[config.baseline]
    comparison = Comparison(baseline_id=config.baseline)
    for experiment_id, trace in traces.items():
        if experiment_id == config.baseline:
            continue
        rows = compute_gains(
            baseline,
            trace,
            config.horizon_s,
            config.threshold_ms,
            alpha=config.alpha,
            zero_insignificant=config.zero_insignificant,
        )
        mean_lt, mean_ttaf = averages(rows)
        comparison.experiments.append(
            ExperimentSummary(
                experiment_id=experiment_id,
                rows=tuple(rows),
                mean_gain_lt=mean_lt,
                mean_gain_ttaf=mean_ttaf,
                unavailable_s=(unavailable or {}).get(experiment_id, getattr(trace, "unavailable_s", 0.0)),
            )
        )
        LOGGER.info(
            "%s vs %s: mean Gain_LT %s, mean Gain_TTAF %s",
            experiment_id,
            config.baseline,
            format_percent(mean_lt),
            format_percent(mean_ttaf),
        )
    return comparison


def _csv_rows(comparison: Comparison) -> list[list[str]]:
    rows = []
    for experiment in comparison.experiments:
        for row in experiment.rows:
            rows.append(
                [
                    experiment.experiment_id,
                    row.activity,
                    format_number(row.slope, 6),
                    format_number(row.lt_increase),
                    format_number(row.ttaf_h),
                    format_number(row.slope_r, 6),
                    format_number(row.lt_increase_r),
                    format_number(row.ttaf_r_h),
                    format_number(row.gain_lt_pct, 1),
                    format_number(row.gain_ttaf_pct, 1),
                ]
            )
        rows.append(
            [experiment.experiment_id, "AVERAGE", "", "", "", "", "", ""]
            + [format_number(experiment.mean_gain_lt, 1), format_number(experiment.mean_gain_ttaf, 1)]
        )
    return rows


def render_markdown(comparison: Comparison) -> str:
    parts = []
    for experiment in comparison.experiments:
        rows = [
            (
                row.activity,
                format_number(row.slope, 4),
                format_number(row.lt_increase),
                format_number(row.ttaf_h),
                format_number(row.slope_r, 4),
                format_number(row.lt_increase_r),
                format_number(row.ttaf_r_h),
                format_percent(row.gain_lt_pct),
                format_percent(row.gain_ttaf_pct),
            )
            for row in experiment.rows
        ]
        rows.append(
            ("**Average**", "", "", "", "", "", "",
             format_percent(experiment.mean_gain_lt), format_percent(experiment.mean_gain_ttaf))
        )
        parts.append(f"## {experiment.experiment_id} vs {comparison.baseline_id}\n")
        if experiment.unavailable_s:
            parts.append(f"Unavailable for {experiment.unavailable_s:.0f} s.\n")
        parts.append(
            markdown_table(
                (
                    "Activity", "Slope [ms/s]", "LT increase [ms]", "TTAF [h]",
                    "Slope^r [ms/s]", "LT^r increase [ms]", "TTAF^r [h]", "Gain_LT", "Gain_TTAF",
                ),
                rows,
            )
        )
    return "\n".join(parts)


def write_comparison(comparison: Comparison, out_dir: Path | str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "comparison.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        writer.writerows(_csv_rows(comparison))
    md_path = out_dir / "comparison.md"
    md_path.write_text(render_markdown(comparison), encoding="utf-8")
    return {"csv": csv_path, "markdown": md_path}


def write_plots(comparison: Comparison, traces: Mapping[str, Any], out_dir: Path | str) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    baseline = traces[comparison.baseline_id]
    activities = baseline.activities
    if activities:
        focus = activities[0]
        if comparison.experiments:
            # Fastest-aging activity without rejuvenation.
            focus = max(comparison.experiments[0].rows, key=lambda row: row.slope).activity
        fig, ax = plt.subplots(figsize=(9, 5))
        for experiment_id, trace in traces.items():
            series = trace.launch_series(focus)
            ax.plot(np.asarray(series.timestamps) / 3600.0, series.values, linewidth=0.8, label=experiment_id)
        ax.set_xlabel("uptime [h]")
        ax.set_ylabel("launch time [ms]")
        ax.set_title(focus)
        ax.legend()
        fig.tight_layout()
        paths["lt_over_time"] = out_dir / "lt_over_time.png"
        fig.savefig(paths["lt_over_time"], dpi=120)
        plt.close(fig)

    if comparison.experiments:
        labels = [row.activity.rsplit(".", 1)[-1] for row in comparison.experiments[0].rows]
        finite = [
            row.ttaf_r_h
            for experiment in comparison.experiments
            for row in experiment.rows
            if math.isfinite(row.ttaf_r_h)
        ] + [row.ttaf_h for row in comparison.experiments[0].rows if math.isfinite(row.ttaf_h)]
        cap = 1.1 * max(finite) if finite else 1.0
        width = 0.8 / (len(comparison.experiments) + 1)
        positions = np.arange(len(labels))
        fig, ax = plt.subplots(figsize=(10, 5))
        baseline_heights = [min(row.ttaf_h, cap) for row in comparison.experiments[0].rows]
        ax.bar(positions, baseline_heights, width, label=comparison.baseline_id)
        for offset, experiment in enumerate(comparison.experiments, start=1):
            heights = [min(row.ttaf_r_h, cap) for row in experiment.rows]
            ax.bar(positions + offset * width, heights, width, label=experiment.experiment_id)
        ax.set_xticks(positions + width * len(comparison.experiments) / 2)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel("TTAF [h] (infinite values capped)")
        ax.legend()
        fig.tight_layout()
        paths["ttaf_bars"] = out_dir / "ttaf_bars.png"
        fig.savefig(paths["ttaf_bars"], dpi=120)
        plt.close(fig)
    return paths


__all__ = [
    "ActivityComparison",
    "COMPARISON_COLUMNS",
    "Comparison",
    "ExperimentSummary",
    "MetricsConfig",
    "averages",
    "compute_gains",
    "gain_lt",
    "gain_ttaf",
    "render_markdown",
    "slope_of",
    "summarize",
    "ttaf_from_slope",
    "write_comparison",
    "write_plots",
]
