"""
Clase base de los agentes del flujo de experimentos.

Cada paso de un experimento (datos, entrenamiento, evaluación, muestreo,
diagnósticos) es un agente que recibe el RunState, hace su trabajo y lo
devuelve actualizado. Los errores no se propagan: se registran en el estado
y el coordinador decide cómo seguir.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import EvaluationConfig
from ..data.datasets import DataConfig, Dataset
from ..errors import ConfigurationError, TrainingError
from ..flows.specs import ModelSpec
from ..training.trainer import TrainConfig, TrainReport

FailureKind = Literal["configuration", "training", "other"]


class RunState(BaseModel):
    """
    Estado compartido de una corrida (un dataset, un modelo, una semilla).

    Los agentes lo van llenando en orden; `outputs` guarda las rutas de los
    artefactos escritos y `metrics` los números que terminan en los reportes.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    # Entrada
    data_config: DataConfig
    spec: ModelSpec
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seed: int = 0
    run_id: str = ""
    outdir: str = "runs"
    reuse_model: bool = False

    # Resultados
    dataset: Optional[Dataset] = None
    model: Optional[Any] = None
    report: Optional[TrainReport] = None
    outputs: Dict[str, str] = Field(default_factory=dict)
    metrics: Dict[str, Any] = Field(default_factory=dict)

    # Control del flujo
    current_step: str = "data"
    status: str = "running"
    failure: Optional[FailureKind] = None
    errors: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    def path(self, group: str, suffix: str) -> Path:
        """outdir/<group>/<run_id><suffix>, creando la carpeta."""
        folder = Path(self.outdir) / group
        folder.mkdir(parents=True, exist_ok=True)
        return folder / f"{self.run_id}{suffix}"

    @property
    def failed(self) -> bool:
        return self.status == "failed"


class BaseAgent(ABC):
    """Interfaz común de los agentes."""

    def __init__(self, name: str, description: str):
        self.name = name
        self.description = description

    @abstractmethod
    async def execute(self, state: RunState) -> RunState:
        """Hace el trabajo del agente y devuelve el estado actualizado."""
        pass

    def validate_input(self, state: RunState) -> bool:
        return not state.failed

    def log_error(self, state: RunState, error: str) -> None:
        state.errors.append(f"[{self.name}] {error}")

    def log_warning(self, state: RunState, warning: str) -> None:
        state.warnings.append(f"[{self.name}] {warning}")

    def fail(self, state: RunState, exc: Exception) -> RunState:
        """Registra `exc` y marca la corrida como fallida con su tipo de falla."""
        self.log_error(state, str(exc))
        state.status = "failed"
        if isinstance(exc, ConfigurationError):
            state.failure = "configuration"
        elif isinstance(exc, TrainingError):
            state.failure = "training"
        else:
            state.failure = "other"
        return state

    def __str__(self) -> str:
        return f"{self.name}: {self.description}"

