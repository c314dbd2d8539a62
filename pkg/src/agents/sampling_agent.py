"""
SamplingAgent - Muestras del modelo entrenado.

Si el modelo es condicional, las covariables de cada muestra se toman de las
filas de test (o de todo el dataset si no hay test) con la semilla de muestreo.
Las muestras se devuelven en la escala original de los datos.
"""

import logging

import numpy as np
import pandas as pd

from ..data.datasets import unstandardize_values
from ..errors import HybridFlowError
from .base_agent import BaseAgent, RunState

logger = logging.getLogger(__name__)


def draw_samples(state: RunState, n: int, seed: int):
    """(y, x) con n filas; x es None para modelos sin covariables."""
    model = state.model
    ds = state.dataset
    x = None
    if model.spec.uses_features:
        pool = ds.part("test")[1] if ds.has("test") else ds.x
        idx = np.random.default_rng(seed).integers(0, pool.shape[0], size=n)
        x = pool[idx]
    y = model.sample(x, n, seed)
    return y, x


class SamplingAgent(BaseAgent):
    """Agente que escribe outdir/samples/<run_id>.csv."""

    def __init__(self):
        super().__init__(
            name="SamplingAgent",
            description="Muestrea el modelo y guarda las muestras"
        )

    def validate_input(self, state: RunState) -> bool:
        return super().validate_input(state) and state.model is not None and state.dataset is not None

    async def execute(self, state: RunState) -> RunState:
        state.current_step = "sample"
        if not self.validate_input(state):
            return state
        try:
            n = state.evaluation.n_samples
            seed = state.evaluation.sample_seed
            y, x = draw_samples(state, n, seed)
            ds = state.dataset
            frame = pd.DataFrame(unstandardize_values(y, ds.standardization), columns=ds.response_names)
            if x is not None:
                for u, name in enumerate(ds.feature_names):
                    frame[name] = x[:, u]
            path = state.path("samples", f".n{n}.s{seed}.csv")
            frame.to_csv(path, index=False, float_format="%.17g")
            state.outputs["samples"] = str(path)
            logger.info(f"[SamplingAgent] {n} muestras en {path}")
        except HybridFlowError as exc:
            logger.error(f"[SamplingAgent] {exc}")
            return self.fail(state, exc)
        return state
