"""
TrainingAgent - Construye y entrena el modelo de una corrida.

Funcionalidad:
- Ajusta la especificación al dataset (J, U, semilla)
- Entrena con parada temprana o reutiliza un modelo ya guardado
- Escribe modelo, reporte JSON, CSV por época y metadatos de la corrida
"""

import json
import logging
from datetime import datetime, timezone
from importlib import metadata

from ..errors import ConfigurationError, HybridFlowError, TrainingError
from ..flows.models import build_model, load_model, save_model
from ..flows.specs import ModelSpec
from ..training.trainer import fit
from .base_agent import BaseAgent, RunState

logger = logging.getLogger(__name__)

VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic")


def fit_spec(spec: ModelSpec, dim: int, n_features: int, seed: int) -> ModelSpec:
    """La especificación con J, U y semilla tomados del dataset y de la corrida."""
    if spec.conditional and n_features == 0:
        raise ConfigurationError(f"[TrainingAgent] {spec.label} es condicional y el dataset no tiene covariables",
                                 ["conditional"])
    return spec.model_copy(update={"dim": dim, "n_features": n_features if spec.conditional else 0, "seed": seed})


def _versions() -> dict:
    out = {}
    for name in VERSIONED_PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = None
    return out


class TrainingAgent(BaseAgent):
    """Agente que entrena (o recupera) el modelo."""

    def __init__(self):
        super().__init__(
            name="TrainingAgent",
            description="Construye el modelo, lo entrena y guarda los artefactos"
        )

    def validate_input(self, state: RunState) -> bool:
        return super().validate_input(state) and state.dataset is not None

    async def execute(self, state: RunState) -> RunState:
        state.current_step = "train"
        if not self.validate_input(state):
            return state
        model_path = state.path("model", ".json")
        try:
            if state.reuse_model and model_path.exists():
                state.model = load_model(model_path)
                logger.info(f"[TrainingAgent] modelo reutilizado desde {model_path}")
                state.outputs["model"] = str(model_path)
                return state

            ds = state.dataset
            spec = fit_spec(state.spec, ds.dim, ds.n_features, state.seed)
            y_tr, x_tr = ds.part("train")
            model = build_model(spec, y_tr, x_tr if spec.uses_features else None)
            state.model = model
            train_cfg = state.train.model_copy(update={"seed": state.seed})
            try:
                state.report = fit(model, ds, train_cfg)
            except TrainingError as exc:
                if exc.report is not None:
                    state.report = exc.report
                    state.outputs["report"] = str(exc.report.write(state.path("report", ".json")))
                    self._write_meta(state)
                raise

            state.outputs["model"] = str(save_model(model, model_path))
            state.outputs["report"] = str(state.report.write(state.path("report", ".json")))
            state.outputs["epochs"] = str(state.path("report", ".epochs.csv"))
            self._write_meta(state)
            state.metrics["best_validation_nll"] = state.report.best_validation_nll
            state.metrics["best_epoch"] = state.report.best_epoch
            state.metrics["n_params"] = model.n_params
        except HybridFlowError as exc:
            logger.error(f"[TrainingAgent] {state.run_id}: {exc}")
            return self.fail(state, exc)
        return state

    def _write_meta(self, state: RunState) -> None:
        """Fecha, versiones y duración; lo único no reproducible de una corrida."""
        meta = {
            "run_id": state.run_id,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "wall_clock": state.report.wall_clock if state.report else None,
            "versions": _versions(),
        }
        path = state.path("report", ".meta.json")
        path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
        state.outputs["meta"] = str(path)
