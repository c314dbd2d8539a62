"""
Trainer - máxima verosimilitud con Adam, coseno y parada temprana.

Funcionalidad:
- nll_loss sobre la cinta de gradientes
- Adam con corrección de sesgo y recorte por norma global
- Tasa de aprendizaje con decaimiento coseno
- Parada temprana por NLL de validación con restauración del mejor snapshot
- Reporte por época (JSON + CSV)
"""

import json
import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from tqdm.auto import tqdm

from ..core.diffcore import Tape, Var
from ..data.datasets import Dataset, split_dataset
from ..errors import HybridFlowError, TrainingError

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


class TrainConfig(BaseModel):
    """Hiperparámetros del entrenamiento."""

    learning_rate: float = Field(1e-3, gt=0)
    min_learning_rate: float = Field(0.0, ge=0)
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(512, ge=1)
    patience: int = Field(50, ge=1)
    seed: int = 0
    validation_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    clip_norm: Optional[float] = Field(10.0, gt=0)
    progress: bool = False
    max_steps: Optional[int] = Field(None, ge=1)


class EpochMetrics(BaseModel):
    epoch: int
    lr: float
    train_nll: float
    val_nll: float


class TrainReport(BaseModel):
    """Historial de un entrenamiento."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    epochs: List[EpochMetrics] = Field(default_factory=list)
    best_epoch: int = -1
    best_validation_nll: float = math.inf
    final_params: List[float] = Field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False
    wall_clock: float = 0.0
    error: Optional[str] = None

    def epochs_frame(self) -> pd.DataFrame:
        return pd.DataFrame([e.model_dump() for e in self.epochs], columns=["epoch", "lr", "train_nll", "val_nll"])

    def write(self, path: Union[str, Path], include_params: bool = False) -> Path:
        """
        Escribe el reporte JSON y, al lado, el CSV por época.

        wall_clock no se escribe aquí para que el archivo sea reproducible.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        exclude = {"wall_clock"} if include_params else {"wall_clock", "final_params"}
        path.write_text(self.model_dump_json(indent=2, exclude=exclude), encoding="utf-8")
        self.epochs_frame().to_csv(path.with_suffix(".epochs.csv"), index=False, float_format="%.10g")
        return path


# ---------------------------------------------------------------------------
# Piezas del optimizador
# ---------------------------------------------------------------------------

class AdamState:
    """Momentos de Adam para un vector plano de parámetros."""

    def __init__(self, size: int):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """Un paso de Adam con corrección de sesgo; actualiza `state` y devuelve parámetros nuevos."""
    state.t += 1
    state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grads
    state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grads * grads
    m_hat = state.m / (1.0 - ADAM_BETA1 ** state.t)
    v_hat = state.v / (1.0 - ADAM_BETA2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """lr_min + ½(lr_max-lr_min)(1+cos(π·step/total)), fijo en lr_min desde step=total."""
    if total <= 0 or step >= total:
        return float(lr_min)
    step = max(step, 0)
    return float(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total)))


def clip_by_norm(grads: np.ndarray, max_norm: Optional[float]) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grads))
    if max_norm is not None and norm > max_norm:
        grads = grads * (max_norm / norm)
    return grads, norm


class EarlyStopping:
    """Cuenta épocas sin mejora de la NLL de validación."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience debe ser >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.wait = 0

    def update(self, value: float, epoch: int) -> bool:
        """Devuelve True si `value` mejora el mejor valor visto."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


# ---------------------------------------------------------------------------
# Pérdida y evaluación
# ---------------------------------------------------------------------------

def _rows(x: Optional[np.ndarray], idx) -> Optional[np.ndarray]:
    return None if x is None else x[idx]


def find_offending_row(model, y: np.ndarray, x: Optional[np.ndarray]) -> Optional[int]:
    """Primera fila cuyo log f(y|x) falla o no es finito."""
    params = model.store.arrays()
    for i in range(y.shape[0]):
        try:
            value = np.asarray(model.log_prob_rows(params, y[i:i + 1], _rows(x, slice(i, i + 1))))
        except HybridFlowError:
            return i
        if not np.all(np.isfinite(value)):
            return i
    return None


def nll_loss(model, y: np.ndarray, x: Optional[np.ndarray] = None, tape: Optional[Tape] = None) -> Var:
    """
    Media de -log f(y|x) sobre el lote, como nodo de la cinta.

    Raises:
        TrainingError: pérdida no finita; lleva la fila que la provoca
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] == 0:
        raise TrainingError("[Trainer] lote vacío")
    tape = tape if tape is not None else Tape()
    params = model.store.bind(tape)
    try:
        loss = model.nll(params, y, x)
    except HybridFlowError as exc:
        raise TrainingError(f"[Trainer] pérdida no evaluable: {exc}", row=find_offending_row(model, y, x)) from exc
    if not np.isfinite(loss.value).all():
        raise TrainingError("[Trainer] pérdida no finita", row=find_offending_row(model, y, x))
    return loss


def evaluate_nll(model, y: np.ndarray, x: Optional[np.ndarray] = None, batch_size: int = 4096) -> float:
    """NLL media por observación sin cinta, por lotes."""
    y = model._prepare_response(y)
    x = model.prepare_features(x, y.shape[0])
    params = model.store.arrays()
    total = 0.0
    for start in range(0, y.shape[0], batch_size):
        idx = slice(start, start + batch_size)
        try:
            lp = np.asarray(model.log_prob_rows(params, y[idx], _rows(x, idx)))
        except HybridFlowError as exc:
            row = find_offending_row(model, y[idx], _rows(x, idx))
            raise TrainingError(f"[Trainer] evaluación fallida: {exc}",
                                row=None if row is None else start + row) from exc
        if not np.all(np.isfinite(lp)):
            bad = int(np.flatnonzero(~np.isfinite(lp))[0])
            raise TrainingError("[Trainer] log-densidad no finita", row=start + bad)
        total -= float(lp.sum())
    return total / y.shape[0]


# ---------------------------------------------------------------------------
# Bucle de entrenamiento
# ---------------------------------------------------------------------------

def fit(model, dataset: Dataset, cfg: TrainConfig) -> TrainReport:
    """
    Entrena `model` sobre las filas train de `dataset`.

    Si el dataset no trae filas de validación se particiona con
    cfg.validation_fraction. Al terminar quedan cargados los parámetros de la
    mejor época de validación.

    Raises:
        TrainingError: con .report parcial y los mejores parámetros restaurados
    """
    if not dataset.has("validation"):
        dataset = split_dataset(dataset, cfg.validation_fraction, cfg.seed)
    y_tr, x_tr = dataset.part("train")
    y_val, x_val = dataset.part("validation")
    if y_tr.shape[0] == 0 or y_val.shape[0] == 0:
        raise TrainingError("[Trainer] faltan filas de entrenamiento o validación")
    x_tr = model.prepare_features(x_tr, y_tr.shape[0])
    x_val = model.prepare_features(x_val, y_val.shape[0])

    n_train = y_tr.shape[0]
    batches_per_epoch = math.ceil(n_train / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    rng = np.random.default_rng(cfg.seed)
    store = model.store
    state = AdamState(len(store))
    stopper = EarlyStopping(cfg.patience)
    best_values = store.snapshot()
    report = TrainReport()
    label = model.spec.label
    start_time = time.perf_counter()
    step = 0

    logger.info(f"[Trainer] {label}: {n_train} filas, {batches_per_epoch} lotes por época, "
                f"{total_steps} pasos como máximo")

    try:
        for epoch in tqdm(range(cfg.epochs), desc=label, disable=not cfg.progress, leave=False):
            if step >= total_steps:
                break
            order = rng.permutation(n_train)
            lr = cfg.learning_rate
            loss_sum = 0.0
            seen = 0
            for b in range(batches_per_epoch):
                if step >= total_steps:
                    break
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                tape = Tape()
                try:
                    loss = nll_loss(model, y_tr[idx], _rows(x_tr, idx), tape)
                except TrainingError as exc:
                    if exc.row is None:
                        raise
                    raise TrainingError(f"[Trainer] pérdida no finita en el paso {step}", row=int(idx[exc.row])) from exc
                tape.backward(loss, store)
                grads, norm = clip_by_norm(store.grads, cfg.clip_norm)
                if not np.isfinite(norm):
                    raise TrainingError(f"[Trainer] gradiente no finito en el paso {step}")
                lr = cosine_lr(step, total_steps, cfg.learning_rate, cfg.min_learning_rate)
                store.values = adam_step(store.values, grads, state, lr)
                loss_sum += float(loss.value) * idx.size
                seen += idx.size
                step += 1

            val_nll = evaluate_nll(model, y_val, x_val, max(cfg.batch_size, 4096))
            metrics = EpochMetrics(epoch=epoch, lr=lr, train_nll=loss_sum / max(seen, 1), val_nll=val_nll)
            report.epochs.append(metrics)
            if stopper.update(val_nll, epoch):
                best_values = store.snapshot()
            if epoch % 10 == 0:
                logger.info(f"[Trainer] {label} época {epoch}: train={metrics.train_nll:.4f} "
                            f"val={val_nll:.4f} lr={lr:.2e}")
            else:
                logger.debug(f"[Trainer] {label} época {epoch}: train={metrics.train_nll:.4f} val={val_nll:.4f}")
            if stopper.should_stop:
                report.stopped_early = True
                logger.info(f"[Trainer] {label}: parada temprana en la época {epoch} "
                            f"(mejor {stopper.best_epoch})")
                break
    except TrainingError as exc:
        store.restore(best_values)
        _finish(report, stopper, store, step, start_time)
        report.error = str(exc)
        exc.report = report
        logger.error(f"[Trainer] {label}: {exc}")
        raise

    store.restore(best_values)
    _finish(report, stopper, store, step, start_time)
    logger.info(f"[Trainer] {label}: mejor validación {report.best_validation_nll:.4f} "
                f"en la época {report.best_epoch} ({report.wall_clock:.1f}s)")
    return report


def _finish(report: TrainReport, stopper: EarlyStopping, store, step: int, start_time: float) -> None:
    report.best_epoch = stopper.best_epoch
    report.best_validation_nll = stopper.best
    report.final_params = [float(v) for v in store.values]
    report.steps = step
    report.wall_clock = time.perf_counter() - start_time


def read_report(path: Union[str, Path]) -> TrainReport:
    return TrainReport.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
