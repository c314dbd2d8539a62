"""
DataAgent - Prepara el dataset de una corrida.

Funcionalidad:
- Genera (lunas, círculos, tabla sintética) o lee un CSV
- Marca test, particiona validación y estandariza según DataConfig
- Guarda el dataset en outdir/dataset/ (train+validation y test por separado)
"""

import logging
import threading
from collections import defaultdict
from pathlib import Path

from ..data.datasets import build_dataset, save_dataset
from ..errors import HybridFlowError
from .base_agent import BaseAgent, RunState

logger = logging.getLogger(__name__)

# Varias corridas de un barrido comparten el mismo archivo de caché.
_cache_locks = defaultdict(threading.Lock)


def dataset_stem(state: RunState) -> Path:
    folder = Path(state.outdir) / "dataset"
    folder.mkdir(parents=True, exist_ok=True)
    return folder / f"{state.data_config.label}-s{state.seed}"


class DataAgent(BaseAgent):
    """Agente que construye y cachea el dataset."""

    def __init__(self):
        super().__init__(
            name="DataAgent",
            description="Genera o lee el dataset, lo particiona y lo guarda"
        )

    async def execute(self, state: RunState) -> RunState:
        state.current_step = "data"
        if not self.validate_input(state):
            return state
        try:
            ds = build_dataset(state.data_config, state.seed, state.train.validation_fraction)
            stem = dataset_stem(state)
            test_mask = ds.mask("test")
            with _cache_locks[str(stem)]:
                state.outputs["dataset"] = str(save_dataset(ds.subset(~test_mask), stem))
                if test_mask.any():
                    state.outputs["dataset_test"] = str(save_dataset(ds.subset(test_mask), f"{stem}.test"))
            state.dataset = ds
            state.metrics["n_rows"] = ds.n
            if state.spec.conditional and ds.n_features == 0:
                self.log_warning(state, "el modelo es condicional pero el dataset no tiene covariables")
            logger.info(f"[DataAgent] dataset {state.data_config.label} listo en {state.outputs['dataset']}")
        except HybridFlowError as exc:
            logger.error(f"[DataAgent] {exc}")
            return self.fail(state, exc)
        return state
