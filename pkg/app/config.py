import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .utils.errors import ConfigError
from .utils.error_models import Problem
from .utils.minimizer import LbfgsOptions
from .utils.dd_partition import DDOptions
from .utils.sphere_grid import SphereGrid, build_grid
from .utils.swe_model import FieldParams, ModelParams, StencilVariant


class DAConfig:
    load_dotenv()

    # Every file the harness writes lands under this directory unless an absolute path is given
    OUTPUT_ROOT = os.getenv('DA_OUTPUT_ROOT', './output')
    CONFIG_FILE = os.getenv('DA_CONFIG_FILE')
    LOG_LEVEL = os.getenv('DA_LOG_LEVEL', 'INFO').upper()
    WORKERS = int(os.getenv('DA_WORKERS', '1'))

    CORS_ORIGINS = [
        origin.strip()
        for origin in os.getenv(
            'DA_CORS_ORIGINS',
            'http://localhost:8080,http://localhost:3000,http://127.0.0.1:8080,http://127.0.0.1:3000',
        ).split(',')
        if origin.strip()
    ]

    JSON_SORT_KEYS = False

    @classmethod
    def output_path(cls, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(cls.OUTPUT_ROOT) / p


class ExperimentConfig(BaseModel):
    """Every knob of a run. Values come from defaults, then a TOML file, then CLI flags."""
    model_config = ConfigDict(extra='forbid')

    # grid
    nlon: int = Field(72, ge=3)
    nlat: int = Field(36, ge=2)

    # model
    dt: float = Field(50.0, ge=0)
    alpha: float = Field(1.0 / 3.0, gt=0, lt=1)
    p: int = Field(4, ge=1)
    q: int = Field(2, ge=1)
    variant: StencilVariant = StencilVariant.AS_PRINTED
    total_steps: int = Field(30, ge=1)
    steps: int = Field(30, ge=0)

    # data
    problem: int = Field(1, ge=1, le=4)
    ntobs: int = Field(10, ge=1)
    seed: int = 0
    h_mean: float = 5000.0
    h_std: float = Field(10.0, ge=0)

    # error models
    nsvs: int = Field(1, ge=1)
    rel_tol: float = Field(1e-14, gt=0)
    lam: float = Field(1.0, ge=0)

    # minimizer
    gtol: float = Field(1e-8, gt=0)
    maxiter: int = Field(200, ge=0)
    memory: int = Field(10, ge=1)
    c1: float = Field(1e-4, gt=0, lt=1)
    backtrack: float = Field(0.5, gt=0, lt=1)

    # decomposition
    nsub_space: int = Field(1, ge=1)
    nsub_time: int = Field(1, ge=1)
    halo: int = Field(0, ge=0)
    mu: float = Field(1.0, ge=0)
    outer_tol: float = Field(1e-8, gt=0)
    max_sweeps: int = Field(10, ge=1)

    # sweeps
    dt_list: List[float] = Field(default_factory=lambda: [50.0, 100.0, 150.0, 200.0])
    ntobs_list: List[int] = Field(default_factory=lambda: [1, 2, 4, 6, 8, 10])
    nsvs_list: List[int] = Field(default_factory=lambda: [4, 6, 8, 10, 12])
    problems: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])

    @field_validator('problems')
    @classmethod
    def _known_problems(cls, value: List[int]) -> List[int]:
        for item in value:
            if item not in {int(p) for p in Problem}:
                raise ValueError(f"unknown problem id {item}")
        return value

    @field_validator('dt_list')
    @classmethod
    def _nonnegative_dt(cls, value: List[float]) -> List[float]:
        if any(dt < 0 for dt in value):
            raise ValueError("time steps must be >= 0")
        return value

    @field_validator('ntobs_list', 'nsvs_list')
    @classmethod
    def _positive_counts(cls, value: List[int]) -> List[int]:
        if any(n < 1 for n in value):
            raise ValueError("counts must be >= 1")
        return value

    @model_validator(mode='after')
    def _window_fits(self) -> 'ExperimentConfig':
        too_long = [n for n in [self.ntobs, *self.ntobs_list] if n > self.total_steps]
        if too_long:
            raise ValueError(f"nt_obs {too_long} exceeds total_steps={self.total_steps}")
        return self

    def grid(self) -> SphereGrid:
        return build_grid(self.nlon, self.nlat)

    def model_params(self, dt: Optional[float] = None, msteps: Optional[int] = None) -> ModelParams:
        return ModelParams(
            dt=self.dt if dt is None else dt,
            alpha=self.alpha,
            p=self.p,
            q=self.q,
            msteps=self.total_steps if msteps is None else msteps,
            variant=self.variant,
        )

    def field_params(self) -> FieldParams:
        return FieldParams(h_mean=self.h_mean, h_std=self.h_std)

    def lbfgs_options(self) -> LbfgsOptions:
        return LbfgsOptions(gtol=self.gtol, maxiter=self.maxiter, memory=self.memory,
                            c1=self.c1, backtrack=self.backtrack)

    def dd_options(self, workers: int = 1) -> DDOptions:
        return DDOptions(outer_tol=self.outer_tol, max_sweeps=self.max_sweeps, workers=workers)


def read_toml(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'rb') as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from None
    return data.get('experiment', data)


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Defaults < TOML file < overrides (None values in overrides are ignored)."""
    values: Dict[str, Any] = {}
    path = path or DAConfig.CONFIG_FILE
    if path:
        values.update(read_toml(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(str(e)) from None
