import json
import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from gpam.field_io import read_field
from gpam.fields import Field, Grid2D, GridError, Mollifier, mollify, sample_white_noise, smooth_bump
from gpam.models import renorm_constant
from gpam.rs_symbols import StructureParams
from gpam.spde_solver import PDEConfig, SolverError, get_nonlinearity, stable_dt
from gpam.wavelets import DEFAULT_WAVELET

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class Settings(BaseSettings):
    """Process-level settings read from GPAM_* variables and the local .env file."""
    model_config = SettingsConfigDict(env_prefix="GPAM_", env_file=".env", extra="ignore")

    out: str = PydanticField("runs", description="Output directory for reports and fields")
    jobs: int = PydanticField(default_factory=lambda: os.cpu_count() or 1, ge=1, description="Worker threads")
    log_level: str = PydanticField("INFO", description="Logging level")
    log_file: str = PydanticField("gpam.log", description="Log file path")


@lru_cache()
def get_settings() -> Settings:
    return Settings()


class U0Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["constant", "bump", "file"] = "constant"
    value: float = PydanticField(1.0, description="Constant value, or bump height")
    center: Tuple[float, float] = (np.pi, np.pi)
    inner: float = PydanticField(0.5, gt=0.0, description="Bump plateau radius")
    outer: float = PydanticField(0.75, gt=0.0, description="Bump support radius")
    path: Optional[str] = None

    def build(self, grid: Grid2D) -> Field:
        if self.kind == "constant":
            return Field.constant(grid, self.value)
        if self.kind == "bump":
            return smooth_bump(grid, self.center, self.inner, self.outer) * self.value
        return _read_field(self.path, grid)


class HSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["zero", "constant", "sine", "noise", "file"] = "constant"
    value: float = PydanticField(1.0, description="Amplitude; for 'noise' the L2 norm")
    mode: Tuple[int, int] = (1, 0)
    seed: int = PydanticField(1, description="Seed of the 'noise' direction")
    path: Optional[str] = None

    def build(self, grid: Grid2D, rho: Optional[Mollifier] = None) -> Field:
        if self.kind == "zero":
            return Field.zeros(grid)
        if self.kind == "constant":
            return Field.constant(grid, self.value)
        if self.kind == "sine":
            k1, k2 = self.mode
            return Field.from_function(grid, lambda x1, x2: self.value * np.sin(k1 * x1 + k2 * x2))
        if self.kind == "noise":
            direction = sample_white_noise(self.seed, grid)
            if rho is not None:
                direction = mollify(direction, rho)
            return direction * (self.value / direction.l2_norm())
        return _read_field(self.path, grid)


def _read_field(path: Optional[str], grid: Grid2D) -> Field:
    if not path:
        raise ConfigError("A 'file' spec needs a path")
    field = read_field(path)
    if field.grid != grid:
        raise ConfigError(f"{path} holds a {field.grid.n} grid, config asks for {grid.n}")
    return field


class RunConfig(BaseModel):
    """JSON run document shared by every CLI subcommand."""
    model_config = ConfigDict(extra="forbid")

    grid_n: int = PydanticField(256, description="Points per side")
    kappa: float = PydanticField(0.05, description="Noise regularity loss")
    gamma: float = PydanticField(1.1, description="Expansion order")
    epsilon: float = PydanticField(0.0625, gt=0.0, description="Mollification scale")
    eps_list: List[float] = PydanticField([0.5, 0.25, 0.125, 0.0625], description="Scales of the convergence study")
    seed: int = PydanticField(7, description="Noise seed")
    seeds: List[int] = PydanticField(default_factory=lambda: list(range(20)), description="Ensemble seeds")
    g: str = PydanticField("sin", description="Nonlinearity name")
    u0: U0Spec = PydanticField(default_factory=U0Spec)
    h: HSpec = PydanticField(default_factory=HSpec)
    dt: Optional[float] = PydanticField(None, gt=0.0, description="Time step, stability rule when null")
    t_end: float = PydanticField(1.0, gt=0.0, description="Final time")
    C: Union[Literal["auto"], float] = PydanticField("auto", description="Renormalization constant")
    output_dir: Optional[str] = PydanticField(None, description="Output directory, GPAM_OUT overrides")
    scheme: Literal["etd", "imex"] = "etd"
    laplacian: Literal["spectral", "fd"] = "spectral"
    save_levels: int = PydanticField(6, ge=0, le=16)
    blowup_threshold: float = PydanticField(1e6, gt=0.0)
    mollifier: Literal["bump", "bump_sq"] = "bump"
    wavelet: str = DEFAULT_WAVELET

    @field_validator("grid_n")
    @classmethod
    def _valid_grid(cls, value: int) -> int:
        try:
            Grid2D(value)
        except GridError as e:
            raise ValueError(str(e)) from e
        return value

    @field_validator("g")
    @classmethod
    def _known_g(cls, value: str) -> str:
        try:
            get_nonlinearity(value)
        except SolverError as e:
            raise ValueError(str(e)) from e
        return value

    def grid(self) -> Grid2D:
        return Grid2D(self.grid_n)

    def structure_params(self) -> StructureParams:
        return StructureParams(kappa=self.kappa, gamma=self.gamma)

    def mollifier_for(self, epsilon: Optional[float] = None) -> Mollifier:
        return Mollifier(epsilon or self.epsilon, self.mollifier)

    def noise(self, seed: Optional[int] = None, epsilon: Optional[float] = None) -> Field:
        xi = sample_white_noise(self.seed if seed is None else seed, self.grid())
        return mollify(xi, self.mollifier_for(epsilon))

    def resolve_C(self, epsilon: Optional[float] = None) -> float:
        if self.C != "auto":
            return float(self.C)
        return renorm_constant(epsilon or self.epsilon, self.mollifier_for(epsilon), self.grid())

    def pde_config(self, xi_eps: Field, epsilon: Optional[float] = None, C: Optional[float] = None) -> PDEConfig:
        epsilon = epsilon or self.epsilon
        return PDEConfig(
            grid=self.grid(),
            epsilon=epsilon,
            C=self.resolve_C(epsilon) if C is None else C,
            dt=self.dt or stable_dt(xi_eps),
            t_end=self.t_end,
            u0=self.u0.build(self.grid()),
            blowup_threshold=self.blowup_threshold,
            scheme=self.scheme,
            laplacian=self.laplacian,
            save_levels=self.save_levels,
        )


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Reads the JSON run document and applies CLI overrides (None values are skipped).

    Raises:
        ConfigError: unreadable file or schema violation
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Cannot read config {path}: {e}")
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = RunConfig(**data)
    except ValidationError as e:
        logger.error(f"Invalid run config: {e}")
        raise ConfigError(str(e)) from e
    settings_out = os.getenv("GPAM_OUT")
    if settings_out:
        config = config.model_copy(update={"output_dir": settings_out})
    return config
