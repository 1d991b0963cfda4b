"""Typed run configuration, loaded from YAML and validated with pydantic."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from fracsource.errors import ConfigError

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TimeConfig(_Section):
    alpha: float = Field(0.75, gt=0.5, lt=1.0)
    T: float = Field(1.0, gt=0.0)
    N: int = Field(100, ge=2)


class MeshConfig(_Section):
    cells_per_side: int = Field(50, ge=2)
    blocks_per_side: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _blocks_divide_cells(self):
        if self.cells_per_side % self.blocks_per_side != 0:
            raise ValueError(
                f"blocks_per_side={self.blocks_per_side} must divide cells_per_side={self.cells_per_side}"
            )
        return self


class SolverConfig(_Section):
    kind: Literal["fem", "gmsfem"] = "fem"
    bases_per_neighborhood: int = Field(2, ge=1)
    snapshots: Literal["harmonic", "full-fine"] = "harmonic"
    linear_solver: Literal["direct", "cg"] = "direct"
    workers: int = Field(4, ge=1)


class MediumConfig(_Section):
    kind: Literal["homogeneous", "channels", "inclusions", "file"] = "homogeneous"
    value: float = Field(1.0, gt=0.0)
    contrast: float = Field(1e3, ge=1.0, le=1e4)
    seed: int = 0
    path: Optional[str] = None
    # channels only: mean channel heights (seeded when unset), strip width and meander amplitude
    levels: Optional[List[float]] = None
    width: float = Field(0.04, gt=0.0, lt=0.5)
    amplitude: Optional[float] = Field(None, ge=0.0, le=0.1)

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "file" and not self.path:
            raise ValueError("medium.kind=file requires medium.path")
        if self.levels is not None and not all(0.0 < y < 1.0 for y in self.levels):
            raise ValueError(f"medium.levels must lie inside (0, 1), got {self.levels}")
        return self


class SourceConfig(_Section):
    kind: Literal["bump", "file"] = "bump"
    center: Tuple[float, float] = (0.5, 0.3)
    radius: Union[float, Tuple[float, float]] = 0.08
    peak: float = Field(1.0, gt=0.0)
    cf: Optional[float] = Field(None, gt=0.0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _file_needs_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("source.kind=file requires source.path")
        return self


class ObservationConfig(_Section):
    x0: Tuple[float, float] = (0.4, 0.2)

    @field_validator("x0")
    @classmethod
    def _strictly_interior(cls, v):
        if not all(0.0 < c < 1.0 for c in v):
            raise ValueError(f"x0={v} must lie strictly inside the unit square")
        return v


class SignalConfig(_Section):
    """g1 and g2: a catalog name (smooth, nonsmooth, constant, zero) or a "t, value" table file."""

    g1: str = "smooth"
    g2: str = "smooth"
    g1_value: Optional[float] = None
    g2_value: Optional[float] = None
    g1_table: Optional[str] = None
    g2_table: Optional[str] = None
    M_bound: Optional[float] = Field(None, gt=0.0)


class EnsembleConfig(_Section):
    realizations: int = Field(30_000, ge=1)
    seed: int = Field(0, ge=0)
    strategy: Literal["response", "direct"] = "response"
    workers: int = Field(4, ge=1)
    batch_size: int = Field(256, ge=1)
    keep_final: bool = False
    text_columns: int = Field(0, ge=0)  # realizations exported as text columns; 0 keeps only the binary form


class InversionConfig(_Section):
    delta: float = Field(0.01, ge=0.0)
    gamma1: Optional[float] = Field(None, gt=0.0)
    gamma2: Optional[float] = Field(None, gt=0.0)
    max_iter: int = Field(100_000, ge=1)
    stop_tol: float = Field(1e-10, gt=0.0)
    noise_seed: Optional[int] = None
    moments: Literal["monte-carlo", "exact"] = "monte-carlo"


class VerifyConfig(_Section):
    eta: Optional[float] = Field(None, gt=0.0)  # defaults to 5 dt
    tol: float = Field(0.02, ge=0.0)


class OutputConfig(_Section):
    directory: str = "out"
    cache_dir: Optional[str] = None


class RunConfig(_Section):
    time: TimeConfig = TimeConfig()
    mesh: MeshConfig = MeshConfig()
    solver: SolverConfig = SolverConfig()
    medium: MediumConfig = MediumConfig()
    source: SourceConfig = SourceConfig()
    observation: ObservationConfig = ObservationConfig()
    signal: SignalConfig = SignalConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    inversion: InversionConfig = InversionConfig()
    verify: VerifyConfig = VerifyConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _eta_inside_horizon(self):
        if self.verify.eta is not None and not self.verify.eta < self.time.T:
            raise ValueError(f"verify.eta={self.verify.eta} must be smaller than T={self.time.T}")
        return self

    @property
    def dt(self) -> float:
        return self.time.T / self.time.N

    @property
    def eta(self) -> float:
        return self.verify.eta if self.verify.eta is not None else 5 * self.dt


def _format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        location = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: Optional[Dict[str, Any]]) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e), "invalid_config") from None


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a YAML config (or start from defaults) and apply dotted-key ``overrides``.

    Relative file paths inside the config are resolved against the config's directory.
    """
    data: Dict[str, Any] = {}
    base = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist", "missing_config")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {path} is not valid YAML: {e}", "invalid_config") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a mapping", "invalid_config")
        base = path.parent
        logger.info(f"Loaded configuration from {path}")

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            raise ConfigError(f"config section {section!r} must be a mapping", "invalid_config")
        data[section][key] = value

    config = parse_config(data)
    if base is not None:
        config = _resolve_paths(config, base)
    return config


def _resolve_paths(config: RunConfig, base: Path) -> RunConfig:
    def fix(p: Optional[str]) -> Optional[str]:
        if p is None or Path(p).is_absolute():
            return p
        return str(base / p)

    return config.model_copy(update={
        "medium": config.medium.model_copy(update={"path": fix(config.medium.path)}),
        "source": config.source.model_copy(update={"path": fix(config.source.path)}),
        "signal": config.signal.model_copy(update={
            "g1_table": fix(config.signal.g1_table),
            "g2_table": fix(config.signal.g2_table),
        }),
    })
