"""
Configuration for runs and for the service process.

Run configuration is a pydantic model loadable from YAML; command-line
flags override file values. Process settings come from the environment,
with ``.env`` defaults.
"""

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from backend.core.errors import ConfigError
from backend.core.trie import CountMode, parse_timeout_fn
from backend.services.traces import BUILTIN_HIERARCHY, SyntheticSpec, load_synthetic_spec

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseModel):
    """Process-level settings read from the environment."""
    log_level: str = os.getenv("ELASTIC_TRIE_LOG_LEVEL", "INFO")
    report_dir: str = os.getenv("ELASTIC_TRIE_REPORT_DIR", "reports")
    host: str = os.getenv("HOST", "0.0.0.0")
    port: int = int(os.getenv("PORT", 8000))
    allowed_origins: str = os.getenv("ALLOWED_ORIGINS", "http://localhost:3000,http://localhost:8000")


def get_settings() -> Settings:
    return Settings()


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(level=(level or get_settings().log_level).upper(), format=LOG_FORMAT)


class Mode(str, Enum):
    """Which address is the trie key and what a counter counts."""
    HHH = "hhh"
    SPREAD = "spread"
    DDOS_VICTIM = "ddos-victim"


def parse_threshold(value: Union[int, float, str]) -> Tuple[float, bool]:
    """``"5%"`` -> (5.0, True); ``200`` or ``"200"`` -> (200.0, False)."""
    if isinstance(value, str):
        text = value.strip()
        percent = text.endswith("%")
        try:
            number = float(text.rstrip("%"))
        except ValueError as exc:
            raise ConfigError(f"invalid threshold {value!r}") from exc
    else:
        number, percent = float(value), False
    if number <= 0 or (percent and number > 100):
        raise ConfigError(f"threshold {value!r} out of range")
    return number, percent


def parse_size(value: Union[int, str]) -> int:
    """Byte count with optional K/M suffix (powers of 1024): ``"8K"`` -> 8192."""
    if isinstance(value, int):
        return value
    text = value.strip().upper().removesuffix("B")
    factor = 1
    if text.endswith("K"):
        factor, text = 1024, text[:-1]
    elif text.endswith("M"):
        factor, text = 1024 * 1024, text[:-1]
    try:
        return int(float(text) * factor)
    except ValueError as exc:
        raise ConfigError(f"invalid size {value!r}") from exc


class RunConfig(BaseModel):
    """
    One simulation run.

    Exactly one of ``trace`` (capture, CSV or ``builtin:hierarchy``) and
    ``synthetic`` (spec file path or inline spec) must be given. Durations
    are seconds.
    """

    model_config = ConfigDict(extra="forbid")

    mode: Mode = Mode.HHH
    count_mode: CountMode = CountMode.PACKETS
    threshold: Union[float, str] = "5%"
    active_timeout_s: float = Field(default=20.0, gt=0)
    inactive_timeout_s: float = Field(default=300.0, gt=0)
    timeout_fn: str = "fixed"
    scale_thresholds: Optional[bool] = None
    max_depth: int = Field(default=32, ge=0, le=32)
    report_hh_on_expand: bool = False

    memory_bytes: Optional[int] = Field(default=None, gt=0)
    identity_max_level: int = Field(default=8, ge=0, le=32)
    filter_bytes: int = Field(default=32768, gt=0)
    filter_hashes: int = Field(default=4, ge=1)

    alarm_threshold: int = Field(default=50, ge=1)
    change_window_s: Optional[float] = Field(default=None, gt=0)
    tick_s: Optional[float] = Field(default=None, gt=0)

    relax: Literal[0, 2] = 2
    warmup_windows: int = Field(default=0, ge=0)
    nominal_rate: Optional[float] = Field(default=None, gt=0)

    trace: Optional[str] = None
    synthetic: Optional[Union[SyntheticSpec, str]] = None
    allow_reorder: bool = False
    reorder_window: int = Field(default=1024, ge=1)
    prefetch: bool = False
    seed: int = 0

    events_out: Optional[str] = None
    report_dir: Optional[str] = None
    sink_capacity: int = Field(default=1_000_000, ge=1)

    @field_validator("threshold")
    @classmethod
    def _check_threshold(cls, value):
        parse_threshold(value)
        return value

    @field_validator("timeout_fn")
    @classmethod
    def _check_timeout_fn(cls, value: str) -> str:
        parse_timeout_fn(value)
        return value.strip().lower()

    @field_validator("memory_bytes", "filter_bytes", mode="before")
    @classmethod
    def _sizes(cls, value):
        return parse_size(value) if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_run(self) -> "RunConfig":
        if (self.trace is None) == (self.synthetic is None):
            raise ValueError("give exactly one of 'trace' or 'synthetic'")
        if self.active_timeout_s > self.inactive_timeout_s:
            raise ValueError(
                f"active timeout {self.active_timeout_s}s exceeds inactive timeout {self.inactive_timeout_s}s"
            )
        if self.memory_bytes is not None and self.memory_bytes * 8 < 144:
            raise ValueError("memory budget cannot hold the root node")
        if self.trace is not None and self.trace != BUILTIN_HIERARCHY and not Path(self.trace).exists():
            raise ValueError(f"trace {self.trace} does not exist")
        return self

    @property
    def threshold_value(self) -> Tuple[float, bool]:
        return parse_threshold(self.threshold)

    def resolve_synthetic(self) -> Optional[SyntheticSpec]:
        if self.synthetic is None or isinstance(self.synthetic, SyntheticSpec):
            return self.synthetic
        return load_synthetic_spec(self.synthetic)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with non-None overrides applied, validated again."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        if overrides.get("trace") is not None:
            data["synthetic"] = None
        if overrides.get("synthetic") is not None:
            data["trace"] = None
        return RunConfig.model_validate(data)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a YAML run config; relative trace and spec paths resolve against the file."""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    for key in ("trace", "synthetic"):
        value = data.get(key)
        if isinstance(value, str) and value != BUILTIN_HIERARCHY and not Path(value).is_absolute():
            candidate = path.parent / value
            if candidate.exists():
                data[key] = str(candidate)
    return RunConfig.model_validate(data)
