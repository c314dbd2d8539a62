"""
DiagnosticsAgent - Diagnósticos del modelo entrenado en CSV.

Funcionalidad:
- qq: cuantiles marginales (W de H₁ contra la base, o datos contra muestras)
- marginal_fit: desviación QQ máxima y p-valor KS por dimensión
- copula: densidad de cópula implícita en una grilla de (0,1)²
- rankcorr: Spearman a partir de Λ
- shift: curva β(x) del desplazamiento marginal
- density: integral numérica de la densidad en 2D
"""

import logging
from typing import List, Optional

import numpy as np
import pandas as pd

from ..errors import EvaluationError, HybridFlowError
from ..eval.diagnostics import (
    copula_grid,
    density_integral,
    marginal_fit,
    marginal_shift_curve,
    qq_points,
    qq_two_sample,
    rank_correlations,
)
from ..flows.models import FlowModel, marginal_scale
from .base_agent import BaseAgent, RunState
from .sampling_agent import draw_samples

logger = logging.getLogger(__name__)

MAX_FEATURE_ROWS = 10


def has_marginal(model) -> bool:
    return isinstance(model, FlowModel) and model.marginal is not None


def feature_rows(state: RunState) -> List[Optional[np.ndarray]]:
    """Valores distintos de x a diagnosticar; [None] si el modelo no usa covariables."""
    if not state.model.spec.uses_features:
        return [None]
    unique = np.unique(state.dataset.x, axis=0)
    return [row for row in unique[:MAX_FEATURE_ROWS]]


def _with_features(frame: pd.DataFrame, x: Optional[np.ndarray], names: List[str]) -> pd.DataFrame:
    if x is not None:
        for u, name in enumerate(names):
            frame.insert(u, name, float(x[u]))
    return frame


class DiagnosticsAgent(BaseAgent):
    """Agente que corre los diagnósticos pedidos en EvaluationConfig."""

    def __init__(self, only: Optional[List[str]] = None):
        super().__init__(
            name="DiagnosticsAgent",
            description="Genera QQ, cópula, correlaciones de rango y curvas de desplazamiento"
        )
        self.only = only

    def validate_input(self, state: RunState) -> bool:
        return super().validate_input(state) and state.model is not None and state.dataset is not None

    async def execute(self, state: RunState) -> RunState:
        state.current_step = "diagnostics"
        if not self.validate_input(state):
            return state
        requested = self.only if self.only is not None else state.evaluation.diagnostics
        for name in requested:
            try:
                frame = getattr(self, f"_{name}")(state)
            except EvaluationError as exc:
                self.log_warning(state, f"{name} omitido: {exc}")
                logger.warning(f"[DiagnosticsAgent] {name} omitido: {exc}")
                continue
            except HybridFlowError as exc:
                logger.error(f"[DiagnosticsAgent] {name}: {exc}")
                return self.fail(state, exc)
            path = state.path("metrics", f".{name}.csv")
            frame.to_csv(path, index=False, float_format="%.10g")
            state.outputs[name] = str(path)
            logger.info(f"[DiagnosticsAgent] {name} escrito en {path}")
        return state

    def _eval_part(self, state: RunState):
        ds = state.dataset
        return ds.part("test") if ds.has("test") else ds.part("validation")

    def _qq(self, state: RunState) -> pd.DataFrame:
        model = state.model
        y, x = self._eval_part(state)
        n_probs = state.evaluation.n_probs
        frames = []
        if has_marginal(model):
            w = model.marginal_transform(y, x)
            xs = model.prepare_features(x, w.shape[0])
            w = w / marginal_scale(model, xs, w.shape[0])
            for j in range(model.dim):
                frames.append(qq_points(w[:, j], model.base, n_probs).assign(dimension=j))
        else:
            samples, _ = draw_samples(state, y.shape[0], state.evaluation.sample_seed)
            for j in range(model.dim):
                frame = qq_two_sample(y[:, j], samples[:, j], n_probs)
                frames.append(frame.rename(columns={"model_q": "ref_q", "data_q": "emp_q"}).assign(dimension=j))
        out = pd.concat(frames, ignore_index=True)
        return out[["dimension", "prob", "ref_q", "emp_q"]]

    def _marginal_fit(self, state: RunState) -> pd.DataFrame:
        y, x = self._eval_part(state)
        return marginal_fit(state.model, y, x, state.evaluation.n_probs, state.evaluation.sample_seed)

    def _copula(self, state: RunState) -> pd.DataFrame:
        if not has_marginal(state.model):
            raise EvaluationError("la cópula necesita una etapa marginal H₁")
        frames = [
            _with_features(copula_grid(state.model, state.evaluation.copula_grid, x), x, state.dataset.feature_names)
            for x in feature_rows(state)
        ]
        return pd.concat(frames, ignore_index=True)

    def _rankcorr(self, state: RunState) -> pd.DataFrame:
        rows = feature_rows(state)
        if rows == [None]:
            return rank_correlations(state.model).drop(columns="row")
        x = np.vstack(rows)
        frame = rank_correlations(state.model, x)
        for u, name in enumerate(state.dataset.feature_names):
            frame.insert(u, name, x[frame["row"].to_numpy(), u])
        return frame.drop(columns="row")

    def _shift(self, state: RunState) -> pd.DataFrame:
        model = state.model
        if not model.spec.uses_features:
            raise EvaluationError("el modelo no usa covariables")
        low, high = model.spec.feature_domain[0]
        grid = np.linspace(low, high, state.evaluation.shift_points)
        return marginal_shift_curve(model, grid)

    def _density(self, state: RunState) -> pd.DataFrame:
        model = state.model
        if model.dim != 2:
            raise EvaluationError("la integral numérica es para J=2")
        y, _ = state.dataset.part("train")
        span = state.evaluation.density_span
        center = y.mean(axis=0)
        sd = y.std(axis=0)
        bounds = [(float(c - span * s), float(c + span * s)) for c, s in zip(center, sd)]
        rows = []
        for x in feature_rows(state):
            value = density_integral(model, x, bounds, state.evaluation.density_grid)
            rows.append(_with_features(pd.DataFrame({"integral": [value]}), x, state.dataset.feature_names))
        frame = pd.concat(rows, ignore_index=True)
        state.metrics["density_integral"] = frame["integral"].tolist()
        return frame
