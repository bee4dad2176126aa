"""Tool configuration: one TOML or JSON file, ``AGEWATCH_CONFIG`` as fallback."""

from __future__ import annotations

import json
import logging
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from dotenv import load_dotenv

from .candidacy import CandidacyConfig
from .detector import DetectorConfig
from .errors import ConfigError, ParseError
from .metrics import MetricsConfig
from .scheduler import LoadThresholds, SchedulerPolicy
from .utils import check_keys

LOGGER = logging.getLogger(__name__)

CONFIG_ENV = "AGEWATCH_CONFIG"
SECTIONS = ("candidacy", "detector", "scheduler", "load", "metrics")


@dataclass(frozen=True)
class AgewatchConfig:
    candidacy: CandidacyConfig = field(default_factory=CandidacyConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    scheduler: SchedulerPolicy = field(default_factory=SchedulerPolicy)
    load: LoadThresholds = field(default_factory=LoadThresholds)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    source: Optional[Path] = None
    sections: frozenset[str] = frozenset()

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], source: Optional[Path] = None) -> "AgewatchConfig":
        check_keys(data, SECTIONS, "config")
        return cls(
            candidacy=CandidacyConfig.from_mapping(data.get("candidacy", {})),
            detector=DetectorConfig.from_mapping(data.get("detector", {})),
            scheduler=SchedulerPolicy.from_mapping(data.get("scheduler", {})),
            load=LoadThresholds.from_mapping(data.get("load", {})),
            metrics=MetricsConfig.from_mapping(data.get("metrics", {})),
            source=source,
            sections=frozenset(data),
        )


def read_config_file(path: Path) -> dict[str, Any]:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ParseError("config file not found", path=path) from None
    try:
        if path.suffix == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc), path=path) from None


def resolve_config_path(explicit: Path | str | None = None) -> Optional[Path]:
    if explicit:
        return Path(explicit)
    load_dotenv()
    from_env = os.getenv(CONFIG_ENV)
    return Path(from_env) if from_env else None


def load_config(path: Path | str | None = None) -> AgewatchConfig:
    """Explicit path, then ``AGEWATCH_CONFIG`` (also read from ``.env``), then built-in defaults."""

    resolved = resolve_config_path(path)
    if resolved is None:
        LOGGER.debug("No config file given; using defaults")
        return AgewatchConfig()
    try:
        config = AgewatchConfig.from_mapping(read_config_file(resolved), source=resolved)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"{resolved}: {exc}") from None
    LOGGER.info("Loaded config from %s", resolved)
    return config


__all__ = ["AgewatchConfig", "CONFIG_ENV", "load_config", "read_config_file", "resolve_config_path"]
