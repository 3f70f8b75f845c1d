"""
Run configuration.

A run is described by one YAML file; command-line flags override its
values. Relative paths resolve against the directory holding the file.
The effective configuration is embedded in every report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from bias_audit.benchmark import BUNDLED_BENCHMARKS, DEFAULT_TOLERANCE
from bias_audit.domain import GroupingMode, ProtectedAxis
from bias_audit.errors import ConfigError
from bias_audit.ingestion import InputFormat
from bias_audit.metrics import (
    DEFAULT_FOUR_FIFTHS_THRESHOLD,
    SmallGroupMode,
    SmallGroupPolicy,
)
from bias_audit.proxy import DEFAULT_PROXY_THRESHOLD

logger = logging.getLogger(__name__)

RENDER_FORMATS = ("json", "markdown", "html")


class BenchmarkKind(Enum):
    NONE = "none"
    BUNDLED = "bundled"
    FILE = "file"
    FETCH = "fetch"


@dataclass(frozen=True)
class BenchmarkSource:
    """
    Where the census benchmark comes from.

    In YAML either a bundled fixture name (``benchmark: nyc_2020``) or a
    mapping with one of ``bundled``, ``file`` (plus ``region`` and
    ``vintage``) or ``fetch`` (a census query file, plus ``offline``).
    """

    kind: BenchmarkKind = BenchmarkKind.BUNDLED
    name: str = "nyc_2020"
    path: Optional[Path] = None
    region: str = ""
    vintage: int = 0
    offline: bool = False

    @classmethod
    def from_value(cls, value: Any, base_dir: Path) -> "BenchmarkSource":
        if value is None or value == "none":
            return cls(kind=BenchmarkKind.NONE, name="")
        if isinstance(value, str):
            return cls._bundled(value)
        if not isinstance(value, Mapping):
            raise ConfigError("'benchmark' must be a name or a mapping", context={"key": "benchmark"})
        if "bundled" in value:
            return cls._bundled(str(value["bundled"]))
        if "file" in value:
            try:
                vintage = int(value.get("vintage", 0))
            except (TypeError, ValueError) as exc:
                raise ConfigError("'benchmark.vintage' must be a year", context={"key": "benchmark.vintage"}) from exc
            return cls(
                kind=BenchmarkKind.FILE,
                name="",
                path=base_dir / str(value["file"]),
                region=str(value.get("region", "")),
                vintage=vintage,
            )
        if "fetch" in value:
            return cls(
                kind=BenchmarkKind.FETCH,
                name="",
                path=base_dir / str(value["fetch"]),
                offline=bool(value.get("offline", False)),
            )
        raise ConfigError(
            "'benchmark' needs one of bundled, file or fetch",
            context={"key": "benchmark"},
        )

    @classmethod
    def _bundled(cls, name: str) -> "BenchmarkSource":
        if name not in BUNDLED_BENCHMARKS:
            raise ConfigError(
                f"Unknown bundled benchmark '{name}'",
                context={"key": "benchmark", "available": ",".join(sorted(BUNDLED_BENCHMARKS))},
            )
        return cls(kind=BenchmarkKind.BUNDLED, name=name)

    def to_dict(self) -> dict[str, Any]:
        if self.kind is BenchmarkKind.NONE:
            return {"kind": "none"}
        if self.kind is BenchmarkKind.BUNDLED:
            return {"kind": "bundled", "name": self.name}
        if self.kind is BenchmarkKind.FILE:
            return {
                "kind": "file",
                "path": _path_str(self.path),
                "region": self.region,
                "vintage": self.vintage,
            }
        return {"kind": "fetch", "query": _path_str(self.path), "offline": self.offline}


def _path_str(path: Optional[Path]) -> Optional[str]:
    return None if path is None else path.as_posix()


def _parse_date(value: Any, key: str) -> Optional[date]:
    if value is None or value == "":
        return None
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"'{key}' must be an ISO date (YYYY-MM-DD)", context={"key": key}) from exc


def _parse_enum_list(values: Any, enum: type[Enum], key: str) -> tuple:
    if isinstance(values, str):
        values = [v.strip() for v in values.split(",") if v.strip()]
    try:
        return tuple(enum(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid value in '{key}': {values}", context={"key": key}) from exc


def _float(data: Mapping[str, Any], key: str, default: float) -> float:
    value = data.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{key}' must be a number", context={"key": key}) from exc


@dataclass(frozen=True)
class RunConfig:
    """Everything one audit run needs."""

    inputs: tuple[Path, ...] = ()
    input_format: Optional[InputFormat] = None  # None: infer from suffix
    binding: Optional[Path] = None
    vocabulary: Optional[Path] = None
    as_of_date: Optional[date] = None
    audit_date: Optional[date] = None
    jurisdiction: str = "NYC"
    groupings: tuple[GroupingMode, ...] = tuple(GroupingMode)
    small_group: SmallGroupPolicy = field(default_factory=SmallGroupPolicy)
    four_fifths_threshold: float = DEFAULT_FOUR_FIFTHS_THRESHOLD
    proxy_threshold: float = DEFAULT_PROXY_THRESHOLD
    proxy_axes: tuple[ProtectedAxis, ...] = tuple(ProtectedAxis)
    benchmark: BenchmarkSource = field(default_factory=BenchmarkSource)
    benchmark_tolerance: float = DEFAULT_TOLERANCE
    delta_stage: Optional[str] = None
    output_dir: Path = Path("audit_output")
    formats: tuple[str, ...] = RENDER_FORMATS
    strict: bool = False
    filter_window: bool = False
    filter_jurisdiction: bool = False
    sample_fraction: Optional[float] = None
    sample_seed: int = 0
    tool_description: str = ""
    source_description: str = ""

    def __post_init__(self) -> None:
        if not 0.0 < self.four_fifths_threshold <= 1.0:
            raise ConfigError(
                f"four_fifths_threshold must be in (0, 1], got {self.four_fifths_threshold}",
                context={"key": "four_fifths_threshold"},
            )
        if not 0.0 <= self.proxy_threshold <= 1.0:
            raise ConfigError(
                f"proxy_threshold must be in [0, 1], got {self.proxy_threshold}",
                context={"key": "proxy_threshold"},
            )
        if not 0.0 <= self.benchmark_tolerance <= 1.0:
            raise ConfigError(
                f"benchmark_tolerance must be in [0, 1], got {self.benchmark_tolerance}",
                context={"key": "benchmark_tolerance"},
            )
        if self.sample_fraction is not None and not 0.0 <= self.sample_fraction <= 1.0:
            raise ConfigError(
                f"sample_fraction must be in [0, 1], got {self.sample_fraction}",
                context={"key": "sample_fraction"},
            )
        unknown = [f for f in self.formats if f not in RENDER_FORMATS]
        if unknown:
            raise ConfigError(
                f"Unknown render format(s): {', '.join(unknown)}",
                context={"key": "formats"},
            )
        if not self.groupings:
            raise ConfigError("At least one grouping is required", context={"key": "groupings"})

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Optional[Path] = None) -> "RunConfig":
        base_dir = Path(base_dir or ".")
        known = (set(cls.__dataclass_fields__) - {"small_group"}) | {"small_group_threshold", "small_group_mode"}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"Unknown config key(s): {', '.join(extra)}", context={"key": extra[0]})

        kwargs: dict[str, Any] = {}
        if "inputs" in data:
            raw = data["inputs"]
            items = [raw] if isinstance(raw, str) else list(raw or [])
            kwargs["inputs"] = tuple(base_dir / str(p) for p in items)
        if data.get("input_format"):
            kwargs["input_format"] = _parse_enum_list([data["input_format"]], InputFormat, "input_format")[0]
        for key in ("binding", "vocabulary", "output_dir"):
            if data.get(key):
                kwargs[key] = base_dir / str(data[key])
        kwargs["as_of_date"] = _parse_date(data.get("as_of_date"), "as_of_date")
        kwargs["audit_date"] = _parse_date(data.get("audit_date"), "audit_date")
        for key in ("jurisdiction", "tool_description", "source_description"):
            if key in data:
                kwargs[key] = str(data[key] or "")
        if "delta_stage" in data:
            kwargs["delta_stage"] = data["delta_stage"] or None
        if "groupings" in data:
            kwargs["groupings"] = _parse_enum_list(data["groupings"], GroupingMode, "groupings")
        if "proxy_axes" in data:
            kwargs["proxy_axes"] = _parse_enum_list(data["proxy_axes"], ProtectedAxis, "proxy_axes")
        if "formats" in data:
            raw = data["formats"]
            kwargs["formats"] = tuple(raw.split(",") if isinstance(raw, str) else raw)

        threshold = _float(data, "small_group_threshold", SmallGroupPolicy().threshold)
        mode = _parse_enum_list(
            [data.get("small_group_mode", SmallGroupMode.INCLUDE_AND_FLAG.value)],
            SmallGroupMode,
            "small_group_mode",
        )[0]
        try:
            kwargs["small_group"] = SmallGroupPolicy(threshold, mode)
        except ValueError as exc:
            raise ConfigError(str(exc), context={"key": "small_group_threshold"}) from exc

        kwargs["four_fifths_threshold"] = _float(data, "four_fifths_threshold", DEFAULT_FOUR_FIFTHS_THRESHOLD)
        kwargs["proxy_threshold"] = _float(data, "proxy_threshold", DEFAULT_PROXY_THRESHOLD)
        kwargs["benchmark_tolerance"] = _float(data, "benchmark_tolerance", DEFAULT_TOLERANCE)
        if "benchmark" in data:
            kwargs["benchmark"] = BenchmarkSource.from_value(data["benchmark"], base_dir)
        if data.get("sample_fraction") is not None:
            kwargs["sample_fraction"] = _float(data, "sample_fraction", 0.0)
        if "sample_seed" in data:
            try:
                kwargs["sample_seed"] = int(data["sample_seed"])
            except (TypeError, ValueError) as exc:
                raise ConfigError("'sample_seed' must be an integer", context={"key": "sample_seed"}) from exc
        for key in ("strict", "filter_window", "filter_jurisdiction"):
            if key in data:
                kwargs[key] = bool(data[key])
        return cls(**kwargs)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply CLI flag values; ``None`` means "not given"."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def check_paths(self) -> None:
        """Every referenced input file must exist before any work starts."""
        if not self.inputs:
            raise ConfigError("No input files configured", context={"key": "inputs"})
        for path in self.inputs:
            if not path.is_file():
                raise ConfigError(f"Input file not found: {path}", context={"key": "inputs"})
        for key in ("binding", "vocabulary"):
            path = getattr(self, key)
            if path is not None and not path.is_file():
                raise ConfigError(f"{key} file not found: {path}", context={"key": key})
        if self.benchmark.path is not None and not self.benchmark.path.is_file():
            raise ConfigError(
                f"Benchmark source not found: {self.benchmark.path}",
                context={"key": "benchmark"},
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "inputs": [p.as_posix() for p in self.inputs],
            "input_format": self.input_format.value if self.input_format else None,
            "binding": _path_str(self.binding),
            "vocabulary": _path_str(self.vocabulary),
            "as_of_date": self.as_of_date.isoformat() if self.as_of_date else None,
            "audit_date": self.audit_date.isoformat() if self.audit_date else None,
            "jurisdiction": self.jurisdiction,
            "groupings": [g.value for g in self.groupings],
            "small_group": self.small_group.to_dict(),
            "four_fifths_threshold": self.four_fifths_threshold,
            "proxy_threshold": self.proxy_threshold,
            "proxy_axes": [a.value for a in self.proxy_axes],
            "benchmark": self.benchmark.to_dict(),
            "benchmark_tolerance": self.benchmark_tolerance,
            "delta_stage": self.delta_stage,
            "output_dir": self.output_dir.as_posix(),
            "formats": list(self.formats),
            "strict": self.strict,
            "filter_window": self.filter_window,
            "filter_jurisdiction": self.filter_jurisdiction,
            "sample_fraction": self.sample_fraction,
            "sample_seed": self.sample_seed,
            "tool_description": self.tool_description,
            "source_description": self.source_description,
        }


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must contain a mapping")
    logger.info("Loaded run config %s", path)
    return RunConfig.from_dict(data, base_dir=path.parent)
