"""
ExperimentGraph - Coordinador de los agentes de experimento.

Funcionalidad:
- Encadena DataAgent → TrainingAgent → EvaluationAgent → SamplingAgent → DiagnosticsAgent
- Corre solo las fases que pide cada comando de la CLI
- Barre semillas y modelos en hilos acotados por Settings.workers
- Agrega las NLL de test en una TrialTable al terminar el barrido
"""

import asyncio
import logging
from typing import List, Optional, Sequence, Tuple

from ..agents.base_agent import RunState
from ..agents.data_agent import DataAgent
from ..agents.diagnostics_agent import DiagnosticsAgent
from ..agents.evaluation_agent import EvaluationAgent
from ..agents.sampling_agent import SamplingAgent
from ..agents.training_agent import TrainingAgent
from ..config import ExperimentConfig, Settings, get_settings, run_id
from ..data.datasets import DataConfig
from ..eval.diagnostics import TrialRow, TrialTable, nll_table
from ..flows.specs import ModelSpec

logger = logging.getLogger(__name__)

PHASES = ("data", "train", "eval", "sample", "diagnostics")


class ExperimentGraph:
    """Coordinador secuencial por corrida, paralelo entre corridas."""

    def __init__(self, settings: Optional[Settings] = None, diagnostics: Optional[List[str]] = None):
        self.settings = settings or get_settings()
        self.data_agent = DataAgent()
        self.training_agent = TrainingAgent()
        self.evaluation_agent = EvaluationAgent()
        self.sampling_agent = SamplingAgent()
        self.diagnostics_agent = DiagnosticsAgent(only=diagnostics)

    def new_state(self, config: ExperimentConfig, data_cfg: DataConfig, spec: ModelSpec, seed: int,
                  reuse_model: bool = False) -> RunState:
        train = config.train
        if self.settings.progress and not train.progress:
            train = train.model_copy(update={"progress": True})
        return RunState(
            data_config=data_cfg,
            spec=spec,
            train=train,
            evaluation=config.evaluation,
            seed=seed,
            run_id=run_id(data_cfg, spec, config.train, seed),
            outdir=str(config.resolved_outdir(self.settings)),
            reuse_model=reuse_model,
        )

    async def run_pipeline(self, state: RunState, phases: Sequence[str] = PHASES) -> RunState:
        """Corre las fases pedidas en orden; se detiene en la primera que falle."""
        logger.info(f"🚀 [ExperimentGraph] corrida {state.run_id}: fases {list(phases)}")
        steps = {
            "data": self._run_data_agent,
            "train": self._run_training_agent,
            "eval": self._run_evaluation_agent,
            "sample": self._run_sampling_agent,
            "diagnostics": self._run_diagnostics_agent,
        }
        for phase in PHASES:
            if phase not in phases:
                continue
            state = await steps[phase](state)
            if state.failed:
                logger.error(f"❌ [ExperimentGraph] {state.run_id} falló en {phase}: {state.errors[-1]}")
                return state
        state.status = "completed"
        self._show_final_summary(state)
        return state

    async def _run_data_agent(self, state: RunState) -> RunState:
        logger.info("📊 Fase 1: preparando el dataset...")
        return await self.data_agent.execute(state)

    async def _run_training_agent(self, state: RunState) -> RunState:
        logger.info(f"🧠 Fase 2: entrenando {state.spec.label}...")
        return await self.training_agent.execute(state)

    async def _run_evaluation_agent(self, state: RunState) -> RunState:
        logger.info("📏 Fase 3: evaluando NLL...")
        return await self.evaluation_agent.execute(state)

    async def _run_sampling_agent(self, state: RunState) -> RunState:
        logger.info("🎲 Fase 4: muestreando...")
        return await self.sampling_agent.execute(state)

    async def _run_diagnostics_agent(self, state: RunState) -> RunState:
        logger.info("🔍 Fase 5: diagnósticos...")
        return await self.diagnostics_agent.execute(state)

    def _show_final_summary(self, state: RunState) -> None:
        logger.info(f"📋 [ExperimentGraph] {state.run_id} completada")
        for key in ("best_validation_nll", "test_nll", "n_params"):
            if key in state.metrics:
                logger.info(f"   {key}: {state.metrics[key]}")
        for warning in state.warnings:
            logger.info(f"   ⚠️ {warning}")

    # ------------------------------------------------------------------
    # Barridos
    # ------------------------------------------------------------------

    def trials(self, config: ExperimentConfig) -> List[Tuple[DataConfig, ModelSpec, int]]:
        return [(d, m, s) for d in config.datasets for m in config.models for s in config.seeds]

    async def run_sweep(self, config: ExperimentConfig) -> Tuple[TrialTable, List[RunState]]:
        """
        Todas las combinaciones dataset × modelo × semilla.

        Cada corrida es dueña de su modelo y corre en un hilo propio; la tabla
        se arma después, en orden fijo, para que no dependa de qué hilo terminó
        primero.
        """
        semaphore = asyncio.Semaphore(self.settings.workers)
        combos = self.trials(config)
        logger.info(f"🚀 [ExperimentGraph] barrido de {len(combos)} corridas con {self.settings.workers} hilos")

        async def one(data_cfg: DataConfig, spec: ModelSpec, seed: int) -> RunState:
            state = self.new_state(config, data_cfg, spec, seed)
            async with semaphore:
                return await asyncio.to_thread(asyncio.run, self.run_pipeline(state, ("data", "train", "eval")))

        states = await asyncio.gather(*(one(d, m, s) for d, m, s in combos))
        table = nll_table(self._trial_rows(states))
        outdir = config.resolved_outdir(self.settings) / "metrics"
        outdir.mkdir(parents=True, exist_ok=True)
        table.to_frame().to_csv(outdir / "trials.csv", index=False, float_format="%.10g")
        if table.rows:
            table.to_wide_frame().to_csv(outdir / "nll_table.csv", index=False)
        failed = [s.run_id for s in states if s.failed]
        if failed:
            logger.warning(f"⚠️ [ExperimentGraph] corridas fallidas: {failed}")
        logger.info(f"✅ [ExperimentGraph] barrido terminado: {len(table.rows)} ensayos en {outdir}")
        return table, states

    def _trial_rows(self, states: List[RunState]) -> List[TrialRow]:
        rows = []
        for state in states:
            if state.failed or state.metrics.get("test_nll") is None:
                continue
            rows.append(TrialRow(
                model=state.spec.label,
                dataset=state.data_config.label,
                conditional=state.spec.conditional,
                seed=state.seed,
                test_nll=state.metrics["test_nll"],
            ))
        return rows

