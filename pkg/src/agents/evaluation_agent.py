"""
EvaluationAgent - NLL de train, validación y test.

Funcionalidad:
- NLL media por observación en cada partición
- NLL en la escala original si los datos se estandarizaron
- Escribe outdir/metrics/<run_id>.json
"""

import json
import logging

from ..errors import HybridFlowError
from ..training.trainer import evaluate_nll
from .base_agent import BaseAgent, RunState

logger = logging.getLogger(__name__)


class EvaluationAgent(BaseAgent):
    """Agente que evalúa el modelo entrenado."""

    def __init__(self):
        super().__init__(
            name="EvaluationAgent",
            description="Calcula la NLL por partición y escribe las métricas"
        )

    def validate_input(self, state: RunState) -> bool:
        return super().validate_input(state) and state.model is not None and state.dataset is not None

    async def execute(self, state: RunState) -> RunState:
        state.current_step = "eval"
        if not self.validate_input(state):
            return state
        try:
            ds = state.dataset
            model = state.model
            summary = {
                "run_id": state.run_id,
                "dataset": state.data_config.label,
                "model": model.spec.label,
                "conditional": model.spec.uses_features,
                "seed": state.seed,
                "n_params": model.n_params,
            }
            for tag, key in (("train", "train_nll"), ("validation", "validation_nll"), ("test", "test_nll")):
                if not ds.has(tag):
                    summary[key] = None
                    continue
                y, x = ds.part(tag)
                summary[key] = evaluate_nll(model, y, x)
            if summary["test_nll"] is None:
                self.log_warning(state, "el dataset no tiene filas de test")
            if ds.standardization is not None and summary["test_nll"] is not None:
                summary["test_nll_original_scale"] = summary["test_nll"] + ds.standardization.log_scale

            path = state.path("metrics", ".json")
            path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
            state.outputs["metrics"] = str(path)
            state.metrics.update({k: v for k, v in summary.items() if k.endswith("_nll") or k.endswith("_scale")})
            logger.info(f"[EvaluationAgent] {state.run_id}: test NLL {summary['test_nll']}")
        except HybridFlowError as exc:
            logger.error(f"[EvaluationAgent] {exc}")
            return self.fail(state, exc)
        return state
