"""
Configuración del proceso y de los experimentos.

Funcionalidad:
- Settings: variables de entorno HYBRIDFLOWS_* y archivo .env
- ExperimentConfig: documento JSON con datasets, modelos, entrenamiento,
  evaluación, directorio de salida y semillas
"""

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .data.datasets import DataConfig
from .errors import ConfigurationError
from .flows.specs import ModelSpec
from .training.trainer import TrainConfig

Diagnostic = Literal["qq", "copula", "rankcorr", "shift", "marginal_fit", "density"]


class Settings(BaseSettings):
    """Parámetros del proceso."""

    model_config = SettingsConfigDict(env_prefix="HYBRIDFLOWS_", env_file=".env", extra="ignore")

    workers: int = Field(2, ge=1)
    outdir: str = "runs"
    log_level: str = "INFO"
    progress: bool = False


@lru_cache
def get_settings() -> Settings:
    return Settings()


class EvaluationConfig(BaseModel):
    """Qué diagnósticos corren después de evaluar y con qué resolución."""

    diagnostics: List[Diagnostic] = Field(default_factory=lambda: ["qq"])
    n_probs: int = Field(200, ge=2)
    copula_grid: int = Field(25, ge=2)
    density_grid: int = Field(401, ge=3)
    density_span: float = Field(5.0, gt=0)
    shift_points: int = Field(11, ge=2)
    n_samples: int = Field(1000, ge=1)
    sample_seed: int = 0


class ExperimentConfig(BaseModel):
    """Un experimento completo; las banderas de la CLI pisan estos valores."""

    name: str = "experiment"
    datasets: List[DataConfig] = Field(default_factory=lambda: [DataConfig()], min_length=1)
    models: List[ModelSpec] = Field(default_factory=lambda: [ModelSpec()], min_length=1)
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    outdir: Optional[str] = None
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)

    @model_validator(mode="after")
    def _unique_names(self):
        for kind, labels in (("datasets", [d.label for d in self.datasets]),
                             ("models", [m.label for m in self.models])):
            if len(set(labels)) != len(labels):
                raise ValueError(f"nombres repetidos en {kind}: {labels}")
        return self

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Lee y valida el JSON; los errores de validación salen como pydantic.ValidationError."""
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"[Config] no se pudo leer {path}: {exc}", ["config"]) from exc
        return cls.model_validate(payload)

    def dataset(self, name: str) -> DataConfig:
        for cfg in self.datasets:
            if cfg.label == name:
                return cfg
        raise ConfigurationError(f"[Config] dataset '{name}' no configurado", ["datasets"])

    def model(self, name: str) -> ModelSpec:
        for spec in self.models:
            if spec.label == name or (not spec.name and spec.kind == name):
                return spec
        raise ConfigurationError(f"[Config] modelo '{name}' no configurado", ["models"])

    def resolved_outdir(self, settings: Optional[Settings] = None) -> Path:
        return Path(self.outdir or (settings or get_settings()).outdir)


def run_id(data_cfg: DataConfig, spec: ModelSpec, train: TrainConfig, seed: int) -> str:
    """Hash estable de (dataset, modelo, entrenamiento, semilla)."""
    payload = {
        "data": data_cfg.model_dump(mode="json"),
        "model": spec.model_dump(mode="json"),
        "train": train.model_dump(mode="json", exclude={"progress"}),
        "seed": seed,
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
    return f"{data_cfg.label}-{spec.label.replace('(', '_').replace(')', '')}-s{seed}-{digest[:10]}"
