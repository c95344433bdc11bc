"""YAML run configuration with a checked schema.

Every section is optional; omitted fields take the defaults used throughout the
package (default priors, desk grid). Unknown keys are rejected. ``load_config``
raises ``ConfigError`` naming the offending field path.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .filtering import OdemConfig, ParamPrior
from .models import glv_model, lorenz_model
from .simulate import DEFAULT_X0, NoiseSpec

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoiseSection(_Section):
    white_std: float = Field(ge=0)
    kernel_size: int = Field(51, ge=1)
    kernel_std: float = Field(0.005, gt=0)
    seed: int = 0
    kernel_units: Literal["variance", "time", "taps"] = "variance"

    @field_validator("kernel_size")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("must be odd")
        return v

    def spec(self) -> NoiseSpec:
        return NoiseSpec(**self.model_dump())


class DatasetSection(_Section):
    T: float = Field(100.0, gt=0)
    dt: float = Field(0.01, gt=0)
    x0: tuple[float, float, float] = DEFAULT_X0
    state_noise: NoiseSection = NoiseSection(white_std=0.05, seed=1)
    obs_noise: NoiseSection = NoiseSection(white_std=0.1, seed=2)


class ModelSection(_Section):
    family: Literal["lorenz", "glv"] = "lorenz"
    prior_mean: Optional[list[float]] = None
    prior_var: Optional[list[float]] = None

    @field_validator("prior_var")
    @classmethod
    def _positive(cls, v):
        if v is not None and any(x <= 0 for x in v):
            raise ValueError("variances must be positive")
        return v

    def spec(self):
        return lorenz_model() if self.family == "lorenz" else glv_model()

    def prior(self) -> ParamPrior:
        model = self.spec()
        default = ParamPrior.default(model)
        mean = tuple(self.prior_mean) if self.prior_mean is not None else default.mean
        var = tuple(self.prior_var) if self.prior_var is not None else default.var
        if len(mean) != model.n_params or len(var) != model.n_params:
            raise ConfigError("model.prior_mean", f"{model.family.value} has {model.n_params} parameters")
        return ParamPrior(mean, var)


class OdemSection(_Section):
    k_x: int = Field(2, ge=2)
    kappa: float = Field(0.5, ge=0)
    inter_em: int = Field(128, ge=1)
    beta_lambda: float = Field(0.0, ge=0, lt=1)
    beta_theta: float = Field(0.0, ge=0, lt=1)
    rm_lambda: tuple[float, float, float] = (1e-4, 10.0, 0.3)
    rm_theta: tuple[float, float, float] = (1e-4, 10.0, 0.3)
    nu: float = -4.0
    C: float = Field(1.0, gt=0)
    E_pi_x: float = Field(500.0, gt=0)
    sigma_lambda_x: float = Field(0.1, gt=0)
    sigma_lambda_y: float = Field(0.1, gt=0)
    smoothness_sigma: float = Field(0.1, gt=0)
    precision_convention: Literal["inverse", "literal"] = "inverse"
    step_rule: Literal["spectral", "logdet"] = "spectral"
    power_iterations: int = Field(5, ge=1)
    seed: int = 0

    def config(self) -> OdemConfig:
        return OdemConfig.from_dict(self.model_dump())


class SweepSection(_Section):
    grid: Literal["desk", "full"] = "desk"
    include_sigma_lambda: bool = False
    workers: int = Field(1, ge=1)
    burn_in_fraction: float = Field(0.1, ge=0, lt=1)


class RunConfigFile(_Section):
    schema_version: int = CONFIG_SCHEMA_VERSION
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    odem: OdemSection = OdemSection()
    sweep: SweepSection = SweepSection()
    output_dir: str = "out"

    @model_validator(mode="after")
    def _version(self):
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"schema_version {self.schema_version} is not supported "
                             f"(expected {CONFIG_SCHEMA_VERSION})")
        return self


def _field_path(err) -> str:
    loc = ".".join(str(p) for p in err["loc"])
    return loc or "schema_version"


def parse_config(data) -> RunConfigFile:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    try:
        return RunConfigFile.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_field_path(err), err["msg"]) from None


def load_config(path) -> RunConfigFile:
    """Read and validate a YAML config; a missing path gives the defaults."""
    if path is None:
        return RunConfigFile()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    except OSError as exc:
        raise ConfigError(str(path), str(exc)) from None
    return parse_config(data)


def dump_default_config() -> str:
    return yaml.safe_dump(RunConfigFile().model_dump(mode="json"), sort_keys=False)
