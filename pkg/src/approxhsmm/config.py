"""Run configuration schema for the command-line tool.

A run is described by one YAML (or JSON) document. Every section is
validated before any computation and unknown keys are rejected.
"""

from __future__ import annotations

import os
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model import DwellFamily, EmissionFamily, ModelSpec
from .priors import PriorConfig, calibrate_comparable_priors

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Strict):
    path: str
    column: Union[str, int] = "y"
    sqrt_transform: bool = False
    time_column: Optional[Union[str, int]] = None


class ModelConfig(_Strict):
    dwell: Union[DwellFamily, list[DwellFamily]] = DwellFamily.POISSON
    K: Optional[int] = Field(default=None, ge=2)
    a: Union[int, list[int]] = 30
    emission: EmissionFamily = EmissionFamily.GAUSSIAN
    omega_hat: Optional[float] = None
    initial: Union[Literal["stationary"], int, list[float]] = "stationary"
    ordered: bool = True

    @model_validator(mode="after")
    def _sizes(self):
        sizes = {len(v) for v in (self.dwell, self.a) if isinstance(v, list)}
        if self.K is not None:
            sizes.add(self.K)
        if len(sizes) > 1:
            raise ValueError(f"inconsistent number of states: {sorted(sizes)}")
        if not sizes:
            raise ValueError("set K or give per-state lists for dwell or a")
        return self

    @property
    def n_states(self):
        for v in (self.dwell, self.a):
            if isinstance(v, list):
                return len(v)
        return self.K


class ComparableTargets(_Strict):
    mean: Union[float, list[float]]
    var: Union[float, list[float]]
    inv_rho: tuple[float, float] = (2.0, 2.0)


class PriorSection(_Strict):
    dirichlet_alpha: Union[float, list[list[float]]] = 1.0
    gamma_dwell: Union[tuple[float, float], list[tuple[float, float]]] = (0.01, 0.01)
    gamma_inv_rho: Union[tuple[float, float], list[tuple[float, float]]] = (2.0, 2.0)
    location: Union[tuple[float, float], list[tuple[float, float]]] = (0.0, 100.0)
    harmonic_coef: Union[tuple[float, float], list[tuple[float, float]]] = (0.0, 4.0)
    sigma2: Union[tuple[float, float], list[tuple[float, float]]] = (2.0, 0.5)
    hmm_dirichlet_v: Optional[list[list[float]]] = None
    comparable: Optional[ComparableTargets] = None


class SamplerConfig(_Strict):
    chains: int = Field(default=4, ge=1)
    warmup: int = Field(default=1000, ge=0)
    draws: int = Field(default=1000, ge=1)
    seed: Optional[int] = 1
    max_tree_depth: int = Field(default=10, ge=1)
    target_accept: float = Field(default=0.8, gt=0, lt=1)
    init: Literal["data", "uniform"] = "data"
    n_jobs: int = Field(default=1, ge=1)


class MLEConfig(_Strict):
    restarts: int = Field(default=5, ge=1)
    seed: Optional[int] = 1


class SelectModel(_Strict):
    name: str
    model: ModelConfig
    prior: Optional[PriorSection] = None


class SelectConfig(_Strict):
    models: list[SelectModel] = Field(min_length=2)
    criteria: list[Literal["log_ml", "aic", "bic"]] = ["log_ml", "aic", "bic"]


class ForecastConfig(_Strict):
    horizon: int = Field(default=100, ge=1)
    test_path: Optional[str] = None
    mode: Literal["static", "rolling"] = "static"
    methods: list[Literal["bayes", "freq"]] = ["bayes", "freq"]


class DecodeConfig(_Strict):
    estimate: Literal["posterior_mean", "mle"] = "posterior_mean"


class DiagnoseConfig(_Strict):
    fit: Literal["bayes", "mle"] = "bayes"
    rel_tol: float = Field(default=0.10, gt=0)
    ci_level: float = Field(default=0.90, gt=0, lt=1)
    decrease_prob: float = Field(default=0.999, gt=0, lt=1)


class FrequencyConfig(_Strict):
    n_iter: int = Field(default=5000, ge=100)
    phi_omega: float = Field(default=0.1, gt=0, le=0.5)
    sigma2_beta: float = Field(default=5.0, gt=0)
    xi0: float = Field(default=4.0, gt=0)
    tau0: float = Field(default=1.0, gt=0)
    sigma2_omega: Optional[float] = Field(default=None, gt=0)
    pi_omega: float = Field(default=0.1, ge=0, le=1)
    burn_in: float = Field(default=0.2, ge=0, lt=1)
    adapt: bool = True
    center: bool = True
    seed: Optional[int] = 1


class TruthConfig(_Strict):
    pi: Optional[list[list[float]]] = None
    lam: list[float]
    mu: list[float]
    sigma2: list[float]
    rho: Optional[list[Optional[float]]] = None
    harmonic: Optional[list[tuple[float, float]]] = None


class SimulateConfig(_Strict):
    T: int = Field(ge=1)
    seed: Optional[int] = 1
    generator: Literal["hsmm", "hmm", "embedded"] = "hsmm"
    truth: TruthConfig
    gamma: Optional[list[list[float]]] = None


class BenchmarkConfig(_Strict):
    T: int = Field(default=2000, ge=10)
    a_grid: list[int] = [5, 10, 20, 30]
    repeats: int = Field(default=3, ge=1)
    seed: Optional[int] = 1
    truth: Optional[TruthConfig] = None
    sample: bool = False


class RunConfig(_Strict):
    version: int = SCHEMA_VERSION
    data: Optional[DataConfig] = None
    model: Optional[ModelConfig] = None
    prior: Optional[PriorSection] = None
    sampler: SamplerConfig = SamplerConfig()
    mle: MLEConfig = MLEConfig()
    select: Optional[SelectConfig] = None
    forecast: Optional[ForecastConfig] = None
    decode: DecodeConfig = DecodeConfig()
    diagnose: DiagnoseConfig = DiagnoseConfig()
    frequency: FrequencyConfig = FrequencyConfig()
    simulate: Optional[SimulateConfig] = None
    benchmark: Optional[BenchmarkConfig] = None
    output_dir: str = "run"

    @field_validator("version")
    @classmethod
    def _known_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported config version {v}; expected {SCHEMA_VERSION}")
        return v

    def canonical(self):
        """Plain mapping with every default filled in."""
        return self.model_dump(mode="json")

    def dumps(self):
        return yaml.safe_dump(self.canonical(), sort_keys=True)


def load_config(path) -> RunConfig:
    """Parse and validate a YAML or JSON run configuration."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError("the configuration must be a mapping")
    return RunConfig.model_validate(raw)


def apply_environment(cfg: RunConfig, environ=None) -> RunConfig:
    """Apply ``APPROXHSMM_SEED`` and ``APPROXHSMM_THREADS`` overrides."""
    env = os.environ if environ is None else environ
    sampler = cfg.sampler
    if env.get("APPROXHSMM_SEED"):
        sampler = sampler.model_copy(update={"seed": int(env["APPROXHSMM_SEED"])})
    if env.get("APPROXHSMM_THREADS"):
        sampler = sampler.model_copy(update={"n_jobs": max(1, int(env["APPROXHSMM_THREADS"]))})
    return cfg.model_copy(update={"sampler": sampler})


def build_prior(section: PriorSection | None, spec_dwell) -> PriorConfig | None:
    if section is None:
        return None
    values = section.model_dump(exclude={"comparable"})
    prior = PriorConfig(**values)
    if section.comparable is not None:
        c = section.comparable
        mean, var = c.mean, c.var
        K = len(spec_dwell)
        mean = mean if isinstance(mean, list) else [mean] * K
        var = var if isinstance(var, list) else [var] * K
        prior = calibrate_comparable_priors(mean, var, inv_rho=c.inv_rho).apply(prior)
    return prior


def build_spec(model: ModelConfig, prior: PriorSection | None) -> ModelSpec:
    K = model.n_states
    dwell = model.dwell if isinstance(model.dwell, list) else [model.dwell] * K
    a = model.a if isinstance(model.a, list) else [model.a] * K
    return ModelSpec(dwell=tuple(dwell), a=tuple(a), emission=model.emission,
                     omega_hat=model.omega_hat, prior=build_prior(prior, dwell),
                     initial=model.initial if not isinstance(model.initial, list)
                     else tuple(model.initial),
                     ordered=model.ordered)
