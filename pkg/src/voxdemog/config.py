"""Experiment configuration: one strict JSON document per run.

Unknown keys anywhere are rejected. Relative paths resolve against the
directory holding the config file. Importing this module does not import
numpy, so thread settings can still be applied before the numeric stack
loads.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from voxdemog.errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhantomSection(_Strict):
    extent: int = 32
    seed: int = 0
    age_range: tuple[float, float] = (40.0, 70.0)
    atrophy_rate: float = 0.004
    ventricle_growth: float = 0.025
    dimorphism: float = 0.3
    noise_sigma: float = 0.05
    head_size_sd: float = 0.04
    spacing: float = 1.0


class CohortSection(_Strict):
    name: str
    n: int = Field(ge=1)
    seed: int = 0
    sex_ratio: float = Field(0.5, ge=0.0, le=1.0)
    age_distribution: Union[Literal["uniform"], tuple[Literal["normal"], float, float]] = "uniform"


class DataSection(_Strict):
    manifest: Optional[str] = None
    phantom: Optional[PhantomSection] = None
    cohorts: list[CohortSection] = Field(default_factory=list)

    @field_validator("cohorts")
    @classmethod
    def _unique(cls, v):
        names = [c.name for c in v]
        if len(set(names)) != len(names):
            raise ValueError("cohort names must be unique")
        return v


class PreprocessSection(_Strict):
    crop: Optional[tuple[int, int, int]] = None
    normalize: bool = True


class ModelSection(_Strict):
    arch: Literal["sfcn", "densenet3d", "swin3d"] = "sfcn"
    task: Literal["sex", "age"] = "sex"
    preset: Literal["tiny", "full", "none"] = "tiny"
    overrides: dict[str, Any] = Field(default_factory=dict)


class TrainSection(_Strict):
    batch_size: int = 4
    learning_rate: float = 5e-3
    max_epochs: int = 60
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    split_ratio: tuple[int, int] = (2, 1)
    split_seed: int = 42
    standardize_targets: bool = True


class EvalSection(_Strict):
    n_bootstrap: int = Field(1000, ge=1)
    seed: int = 0
    auc_ci: Literal["delong", "bootstrap"] = "delong"


class ExplainSection(_Strict):
    k: int = Field(5, ge=1)
    threshold: float = Field(0.1, ge=0.0, le=1.0)
    slice_step: int = Field(10, ge=1)


class ExperimentConfig(_Strict):
    data: DataSection = Field(default_factory=DataSection)
    preprocess: PreprocessSection = Field(default_factory=PreprocessSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    explain: ExplainSection = Field(default_factory=ExplainSection)
    output_dir: str = "runs"


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key {loc!r}")
        else:
            parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_describe(exc)}") from None


def load_config(path) -> tuple[ExperimentConfig, Path]:
    """(config, base directory for relative paths)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(doc), path.resolve().parent


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Override every seed (phantom, cohorts, training, split, bootstrap) with ``seed``."""
    data = cfg.data
    if data.phantom is not None:
        data = data.model_copy(update={"phantom": data.phantom.model_copy(update={"seed": seed})})
    data = data.model_copy(update={"cohorts": [c.model_copy(update={"seed": seed + i}) for i, c in enumerate(data.cohorts)]})
    return cfg.model_copy(
        update={
            "data": data,
            "train": cfg.train.model_copy(update={"seed": seed, "split_seed": seed}),
            "eval": cfg.eval.model_copy(update={"seed": seed}),
        }
    )
