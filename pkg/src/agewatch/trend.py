"""Mann-Kendall trend test and Sen's slope over indicator time series."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, IndicatorFormatError, NonMonotonicTimestamps, ParseError, TooFewSamples

LOGGER = logging.getLogger(__name__)

CSV_COLUMNS = ("timestamp_s", "indicator", "value")
DEFAULT_ALPHA = 0.05


class Direction(str, Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    NONE = "none"


@dataclass(frozen=True)
class IndicatorSeries:
    name: str
    timestamps: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.timestamps) != len(self.values):
            raise IndicatorFormatError(
                f"indicator {self.name}: {len(self.timestamps)} timestamps but {len(self.values)} values"
            )
        for previous, current in zip(self.timestamps, self.timestamps[1:]):
            if current <= previous:
                raise NonMonotonicTimestamps(
                    f"indicator {self.name}: timestamp {current} does not follow {previous}"
                )

    @classmethod
    def from_pairs(cls, name: str, samples: Iterable[tuple[float, float]]) -> "IndicatorSeries":
        pairs = list(samples)
        return cls(
            name=name,
            timestamps=tuple(float(t) for t, _ in pairs),
            values=tuple(float(v) for _, v in pairs),
        )

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.timestamps, self.values))

    def tail(self, count: int) -> "IndicatorSeries":
        return IndicatorSeries(self.name, self.timestamps[-count:], self.values[-count:])

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class MannKendallResult:
    s_statistic: int
    variance_s: float
    z_score: float
    p_value: float


@dataclass(frozen=True)
class TrendResult:
    s_statistic: int
    variance_s: float
    z_score: float
    p_value: float
    slope: float
    direction: Direction
    slope_low: float = math.nan
    slope_high: float = math.nan
    start: float = math.nan
    end: float = math.nan

    @property
    def significant(self) -> bool:
        return self.direction is not Direction.NONE


def mann_kendall(values: Sequence[float]) -> MannKendallResult:
    data = np.asarray(values, dtype=float)
    n = data.size
    if n < 3:
        raise TooFewSamples(f"Mann-Kendall needs at least 3 samples, got {n}")

    i, j = np.triu_indices(n, k=1)
    s = int(np.sign(data[j] - data[i]).sum())

    _, ties = np.unique(data, return_counts=True)
    variance = (n * (n - 1) * (2 * n + 5) - float(np.sum(ties * (ties - 1) * (2 * ties + 5)))) / 18

    # All values tied: no information, reported as no trend.
    if variance <= 0:
        return MannKendallResult(s_statistic=s, variance_s=0.0, z_score=0.0, p_value=1.0)

    if s > 0:
        z = (s - 1) / math.sqrt(variance)
    elif s < 0:
        z = (s + 1) / math.sqrt(variance)
    else:
        z = 0.0
    p = float(min(1.0, 2.0 * norm.sf(abs(z))))
    return MannKendallResult(s_statistic=s, variance_s=float(variance), z_score=float(z), p_value=p)


def _pairwise_slopes(samples: Sequence[tuple[float, float]]) -> np.ndarray:
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    n = data.shape[0]
    if n < 2:
        raise TooFewSamples(f"Sen's slope needs at least 2 samples, got {n}")
    i, j = np.triu_indices(n, k=1)
    dt = data[j, 0] - data[i, 0]
    if np.any(dt == 0):
        raise NonMonotonicTimestamps("Sen's slope requires distinct timestamps")
    return (data[j, 1] - data[i, 1]) / dt


def sen_slope(samples: Sequence[tuple[float, float]]) -> float:
    """Median of all pairwise slopes; an even count takes the mean of the middle pair."""

    return float(np.median(_pairwise_slopes(samples)))


def sen_confidence_interval(
    samples: Sequence[tuple[float, float]], alpha: float = DEFAULT_ALPHA
) -> tuple[float, float]:
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    slopes = np.sort(_pairwise_slopes(samples))
    if len(samples) < 3:
        return math.nan, math.nan
    variance = mann_kendall([value for _, value in samples]).variance_s
    if variance == 0:
        return float(slopes[0]), float(slopes[-1])
    half_width = norm.ppf(1 - alpha / 2) * math.sqrt(variance)
    count = slopes.size
    ranks = np.arange(1, count + 1)
    low = np.interp((count - half_width) / 2, ranks, slopes)
    high = np.interp((count + half_width) / 2, ranks, slopes)
    return float(low), float(high)


def trend_of(
    series: IndicatorSeries, alpha: float = DEFAULT_ALPHA, *, interval: bool = True
) -> TrendResult:
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    result = mann_kendall(series.values)
    samples = series.samples
    slope = sen_slope(samples)
    low, high = sen_confidence_interval(samples, alpha) if interval else (math.nan, math.nan)
    if result.p_value <= alpha and result.s_statistic > 0:
        direction = Direction.INCREASING
    elif result.p_value <= alpha and result.s_statistic < 0:
        direction = Direction.DECREASING
    else:
        direction = Direction.NONE
    return TrendResult(
        s_statistic=result.s_statistic,
        variance_s=result.variance_s,
        z_score=result.z_score,
        p_value=result.p_value,
        slope=slope,
        direction=direction,
        slope_low=low,
        slope_high=high,
        start=series.timestamps[0],
        end=series.timestamps[-1],
    )


def windowed_trend(
    series: IndicatorSeries, window: int, alpha: float = DEFAULT_ALPHA, *, interval: bool = True
) -> TrendResult:
    """Trend of the most recent ``window`` samples."""

    if window < 3:
        raise TooFewSamples(f"window must hold at least 3 samples, got {window}")
    if len(series) < window:
        raise TooFewSamples(f"{series.name}: {len(series)} samples, window needs {window}")
    return trend_of(series.tail(window), alpha, interval=interval)


def read_indicator_csv(path: Path | str) -> dict[str, IndicatorSeries]:
    path = Path(path)
    collected: dict[str, list[tuple[float, float]]] = {}
    try:
        handle = path.open("r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ParseError("indicator file not found", path=path) from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(cell.strip() for cell in header) != CSV_COLUMNS:
            raise IndicatorFormatError(
                f"expected header {','.join(CSV_COLUMNS)}", path=path, line=1
            )
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise IndicatorFormatError(f"expected 3 fields, got {len(row)}", path=path, line=line)
            raw_time, name, raw_value = (cell.strip() for cell in row)
            try:
                timestamp = float(raw_time)
                value = float(raw_value)
            except ValueError:
                raise IndicatorFormatError("timestamp_s and value must be numbers", path=path, line=line) from None
            if not name:
                raise IndicatorFormatError("empty indicator name", path=path, line=line)
            if not (math.isfinite(timestamp) and math.isfinite(value)):
                raise IndicatorFormatError("non-finite number", path=path, line=line)
            samples = collected.setdefault(name, [])
            if samples and timestamp <= samples[-1][0]:
                raise NonMonotonicTimestamps(
                    f"{path}:{line}: {name} timestamp {timestamp} does not follow {samples[-1][0]}"
                )
            samples.append((timestamp, value))
    LOGGER.debug("Read %d indicators from %s", len(collected), path)
    return {name: IndicatorSeries.from_pairs(name, samples) for name, samples in collected.items()}


def write_indicator_csv(path: Path | str, series: Mapping[str, IndicatorSeries]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(
        (timestamp, name, value)
        for name, indicator in series.items()
        for timestamp, value in indicator.samples
    )
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for timestamp, name, value in rows:
            writer.writerow((repr(timestamp), name, repr(value)))
    return path


__all__ = [
    "CSV_COLUMNS",
    "DEFAULT_ALPHA",
    "Direction",
    "IndicatorSeries",
    "MannKendallResult",
    "TrendResult",
    "mann_kendall",
    "read_indicator_csv",
    "sen_confidence_interval",
    "sen_slope",
    "trend_of",
    "windowed_trend",
    "write_indicator_csv",
]
