"""
Configuration: pydantic models for run parameters, config-file loading and
environment settings.

Config files are either YAML (.yml/.yaml) or plain `key=value` lines.
Environment variables are read from the process and an optional .env file.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic.alias_generators import to_camel

from .constants import (
    DEFAULT_MOSER_TOL,
    DEFAULT_PAIR_COUNT,
    DEFAULT_RK4_STEPS,
    DEFAULT_SEED,
    DEFAULT_SMALLNESS,
    DEFAULT_VERIFY_GRID,
    ENV_LOG_LEVEL,
    ENV_THREADS,
)
from .errors import ConfigError

logger = logging.getLogger(__name__)

COMMANDS = ("cover", "stretch", "solve", "verify", "render")


class CamelModel(BaseModel):
    """Base model: snake_case in Python, camelCase in JSON."""

    model_config = ConfigDict(
        alias_generator=to_camel, populate_by_name=True, extra="forbid"
    )

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(by_alias=True, mode="json")


# ============================================================================
# MODULE CONFIGS
# ============================================================================


class StretchConfig(CamelModel):
    tau: float = Field(0.1, gt=0)
    smallness: float = Field(DEFAULT_SMALLNESS, gt=0)
    max_refinements: int = Field(2, ge=0)
    boundary: bool = True


class MoserConfig(CamelModel):
    rk4_steps: int = Field(DEFAULT_RK4_STEPS, ge=1)
    tol: float = Field(DEFAULT_MOSER_TOL, gt=0)
    raise_on_miss: bool = True


class VerifyConfig(CamelModel):
    grid_n: int = Field(DEFAULT_VERIFY_GRID, ge=16)
    pair_count: int = Field(DEFAULT_PAIR_COUNT, ge=10)
    seed: int = DEFAULT_SEED
    q: float = Field(1.5, gt=1)


class RunConfig(CamelModel):
    """Everything the CLI needs for one run; file values are overridden by flags."""

    command: str
    mask: Optional[Path] = None
    field: Optional[Path] = None
    polygon: Optional[Path] = None
    strips: Optional[Path] = None
    trace: Optional[Path] = None
    masks: List[Path] = []
    mode: str = "lp"
    tau: float = Field(0.1, gt=0)
    p: float = Field(3.0, gt=1)
    q: float = Field(1.5, gt=1)
    delta: float = Field(0.1, gt=0, lt=1)
    eps: Optional[float] = Field(None, gt=0)
    grid: int = Field(DEFAULT_VERIFY_GRID, ge=16)
    tol: float = Field(DEFAULT_MOSER_TOL, gt=0)
    measure_tol: float = Field(1e-4, gt=0)
    max_iter: int = Field(30, ge=1)
    seed: int = DEFAULT_SEED
    out: Path = Path("out")
    no_boundary: bool = False
    svg: bool = False

    @field_validator("mode")
    @classmethod
    def _check_mode(cls, v: str) -> str:
        if v not in ("lp", "linf"):
            raise ValueError("mode must be 'lp' or 'linf'")
        return v

    @field_validator("command")
    @classmethod
    def _check_command(cls, v: str) -> str:
        if v not in COMMANDS:
            raise ValueError(f"unknown command {v!r}")
        return v

    def stretch_config(self) -> StretchConfig:
        return StretchConfig(tau=self.tau, boundary=not self.no_boundary)

    def moser_config(self) -> MoserConfig:
        return MoserConfig(tol=self.tol)

    def verify_config(self) -> VerifyConfig:
        return VerifyConfig(grid_n=self.grid, seed=self.seed, q=self.q)


# ============================================================================
# CONFIG FILES
# ============================================================================


def _parse_key_value(text: str, source: str) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        # reuse YAML scalar typing for numbers and booleans
        values[key] = yaml.safe_load(value) if value else None
    return values


def load_config_file(path: Path) -> Dict[str, Any]:
    """
    Read a run config file.

    Args:
        path: YAML file (.yml/.yaml) or key=value file

    Returns:
        Flat dict with snake_case keys
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    if path.suffix in (".yml", ".yaml"):
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
    else:
        data = _parse_key_value(text, str(path))

    normalized = {str(k).replace("-", "_"): v for k, v in data.items()}
    logger.info(f"Loaded {len(normalized)} settings from {path}")
    return normalized


# ============================================================================
# ENVIRONMENT
# ============================================================================


class Settings(BaseModel):
    threads: int = Field(1, ge=1)
    log_level: str = "INFO"


def get_settings() -> Settings:
    """Settings from the environment (and a .env file when present)."""
    from dotenv import load_dotenv

    load_dotenv()
    raw_threads = os.getenv(ENV_THREADS)
    threads = os.cpu_count() or 1
    if raw_threads:
        try:
            threads = max(1, int(raw_threads))
        except ValueError:
            logger.warning(f"Ignoring non-integer {ENV_THREADS}={raw_threads!r}")
    return Settings(threads=threads, log_level=os.getenv(ENV_LOG_LEVEL, "INFO").upper())


def worker_pool() -> ThreadPoolExecutor:
    """Thread pool capped by JACFORGE_THREADS."""
    return ThreadPoolExecutor(max_workers=get_settings().threads)
