"""
Datasets - generadores sintéticos, lectura de tablas y estandarización.

Funcionalidad:
- Lunas y círculos 2D con covariable binaria (x=1 luna inferior derecha / círculo interior)
- Tabla sintética correlacionada no gaussiana para pruebas de humo en J dimensiones
- Lectura de CSV con errores por fila/columna
- Estandarización registrada e invertible
- Partición semillada en train/validation/test
- Caché en CSV + JSON con los metadatos
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import DataError

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "validation", "test")

MOONS_NOISE = 0.05
# 0.025 veces el diámetro del círculo exterior
CIRCLES_NOISE = 0.05
CIRCLES_INNER_FACTOR = 0.5


class Standardization(BaseModel):
    """Media y desviación por columna de respuesta."""

    mean: List[float]
    std: List[float]

    @property
    def log_scale(self) -> float:
        """Σ log std_j: suma que convierte NLL estandarizada a la escala original."""
        return float(np.sum(np.log(self.std)))


class Dataset(BaseModel):
    """
    Filas (y ∈ R^J, x ∈ R^U) con etiquetas de partición.

    Es inmutable: las operaciones devuelven un Dataset nuevo.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y: np.ndarray
    x: np.ndarray
    split: np.ndarray
    response_names: List[str] = Field(default_factory=list)
    feature_names: List[str] = Field(default_factory=list)
    standardization: Optional[Standardization] = None
    seed: Optional[int] = None
    source: Dict[str, object] = Field(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data):
        if isinstance(data, dict):
            y = np.asarray(data.get("y"), dtype=float)
            if y.ndim == 1:
                y = y.reshape(-1, 1)
            x = data.get("x")
            x = np.zeros((y.shape[0], 0)) if x is None else np.asarray(x, dtype=float)
            if x.ndim == 1:
                x = x.reshape(-1, 1)
            split = data.get("split")
            split = np.full(y.shape[0], "train", dtype=object) if split is None else np.asarray(split, dtype=object)
            data = {**data, "y": y, "x": x, "split": split}
            if not data.get("response_names"):
                data["response_names"] = [f"y{j + 1}" for j in range(y.shape[1])]
            if not data.get("feature_names"):
                data["feature_names"] = [f"x{u + 1}" for u in range(x.shape[1])]
        return data

    @model_validator(mode="after")
    def _check(self):
        n = self.y.shape[0]
        if self.x.shape[0] != n or self.split.shape != (n,):
            raise DataError(f"[Dataset] filas inconsistentes: y={self.y.shape}, x={self.x.shape}")
        if np.isnan(self.y).any() or np.isnan(self.x).any():
            row = int(np.argwhere(np.isnan(np.hstack([self.y, self.x])))[0, 0])
            raise DataError("[Dataset] valores NaN", row=row)
        unknown = set(self.split.tolist()) - set(SPLIT_TAGS)
        if unknown:
            raise DataError(f"[Dataset] etiquetas de partición desconocidas: {sorted(unknown)}")
        if len(self.response_names) != self.y.shape[1] or len(self.feature_names) != self.x.shape[1]:
            raise DataError("[Dataset] nombres de columnas inconsistentes")
        return self

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def dim(self) -> int:
        return int(self.y.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.x.shape[1])

    def mask(self, tag: str) -> np.ndarray:
        return self.split == tag

    def part(self, tag: str) -> Tuple[np.ndarray, np.ndarray]:
        m = self.mask(tag)
        return self.y[m], self.x[m]

    def has(self, tag: str) -> bool:
        return bool(self.mask(tag).any())

    def replace(self, **changes) -> "Dataset":
        data = {
            "y": self.y, "x": self.x, "split": self.split,
            "response_names": self.response_names, "feature_names": self.feature_names,
            "standardization": self.standardization, "seed": self.seed, "source": self.source,
        }
        data.update(changes)
        return Dataset(**data)

    def subset(self, mask: np.ndarray) -> "Dataset":
        return self.replace(y=self.y[mask], x=self.x[mask], split=self.split[mask])

    def without_features(self) -> "Dataset":
        return self.replace(x=np.zeros((self.n, 0)), feature_names=[])


# ---------------------------------------------------------------------------
# Generadores
# ---------------------------------------------------------------------------

def moon_points(t, inner: bool) -> np.ndarray:
    """Puntos sin ruido de la luna exterior (cos t, sin t) o interior (1-cos t, ½-sin t)."""
    t = np.asarray(t, dtype=float)
    if inner:
        return np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=-1)
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def circle_points(angle, radius: float) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    return radius * np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def gen_moons(n: int, noise_std: float = MOONS_NOISE, seed: int = 0) -> Dataset:
    """Dos lunas; la mitad interior (inferior derecha) lleva x=1."""
    if n < 2:
        raise DataError(f"[Moons] se necesitan al menos 2 filas, n={n}")
    rng = np.random.default_rng(seed)
    n_outer = n // 2
    n_inner = n - n_outer
    outer = moon_points(rng.uniform(0.0, np.pi, n_outer), inner=False)
    inner = moon_points(rng.uniform(0.0, np.pi, n_inner), inner=True)
    y = np.vstack([outer, inner])
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=y.shape)
    x = np.concatenate([np.zeros(n_outer), np.ones(n_inner)]).reshape(-1, 1)
    return Dataset(y=y, x=x, seed=seed, feature_names=["inner"],
                   source={"generator": "moons", "n": n, "noise": noise_std, "seed": seed})


def gen_circles(n: int, noise_std: float = CIRCLES_NOISE, inner_factor: float = CIRCLES_INNER_FACTOR,
                seed: int = 0) -> Dataset:
    """Círculo unitario (x=0) y círculo interior de radio inner_factor (x=1)."""
    if not 0.0 < inner_factor < 1.0:
        raise DataError(f"[Circles] inner_factor debe estar en (0, 1), recibió {inner_factor}")
    if n < 2:
        raise DataError(f"[Circles] se necesitan al menos 2 filas, n={n}")
    rng = np.random.default_rng(seed)
    n_outer = n // 2
    n_inner = n - n_outer
    outer = circle_points(rng.uniform(0.0, 2.0 * np.pi, n_outer), 1.0)
    inner = circle_points(rng.uniform(0.0, 2.0 * np.pi, n_inner), inner_factor)
    y = np.vstack([outer, inner])
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=y.shape)
    x = np.concatenate([np.zeros(n_outer), np.ones(n_inner)]).reshape(-1, 1)
    return Dataset(y=y, x=x, seed=seed, feature_names=["inner"],
                   source={"generator": "circles", "n": n, "noise": noise_std,
                           "inner_factor": inner_factor, "seed": seed})


def gen_tabular_smoke(n: int, dim: int = 8, seed: int = 0) -> Dataset:
    """
    Tabla J-dimensional con dependencia lineal y marginales asimétricas.

    Sirve como sustituto sintético de los benchmarks tabulares grandes.
    """
    if dim < 2:
        raise DataError(f"[Tabular] se necesitan al menos 2 columnas, J={dim}")
    rng = np.random.default_rng(seed)
    mixing = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    z = rng.standard_normal((n, dim)) @ (np.eye(dim) + mixing).T
    z = (z - z.mean(axis=0)) / z.std(axis=0)
    y = np.where(np.arange(dim) % 2 == 0, np.exp(0.5 * z), z + z ** 3 / 3.0)
    return Dataset(y=y, seed=seed, source={"generator": "tabular", "n": n, "dim": dim, "seed": seed})


def derive_seed(seed: int, stream: int) -> int:
    """Semilla de un flujo hijo independiente."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Tablas
# ---------------------------------------------------------------------------

def load_table(path: Union[str, Path], response_cols: Sequence[str],
               feature_cols: Sequence[str] = ()) -> Dataset:
    """
    Lee un CSV con encabezado (UTF-8, punto decimal).

    Raises:
        DataError: archivo ilegible, columna faltante o celda no numérica
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"[Tabla] no se pudo leer {path}: {exc}") from exc
    if not response_cols:
        raise DataError("[Tabla] hay que indicar al menos una columna de respuesta")
    for col in list(response_cols) + list(feature_cols):
        if col not in frame.columns:
            raise DataError("[Tabla] columna inexistente", column=col)

    def numeric(cols: Sequence[str]) -> np.ndarray:
        if not cols:
            return np.zeros((len(frame), 0))
        raw = frame[list(cols)]
        values = raw.apply(lambda s: pd.to_numeric(s.str.strip(), errors="coerce"))
        bad = values.isna().to_numpy()
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DataError(f"[Tabla] celda no numérica '{raw.iat[row, col]}'", row=int(row),
                            column=str(cols[col]))
        return values.to_numpy(dtype=float)

    y = numeric(response_cols)
    x = numeric(feature_cols)
    logger.info(f"[Tabla] {path.name}: {len(frame)} filas, J={y.shape[1]}, U={x.shape[1]}")
    return Dataset(y=y, x=x, response_names=list(response_cols), feature_names=list(feature_cols),
                   source={"generator": "file", "path": str(path)})


def standardize(ds: Dataset, fit_on: Optional[str] = None) -> Dataset:
    """
    Respuestas con media 0 y varianza 1 por columna; guarda media y desviación.

    Con `fit_on` la media y la desviación salen solo de esa partición y se
    aplican a todas las filas.
    """
    if ds.standardization is not None:
        return ds
    rows = ds.y if fit_on is None else ds.y[ds.mask(fit_on)]
    if rows.shape[0] == 0:
        raise DataError(f"[Dataset] no hay filas '{fit_on}' para estandarizar")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    info = Standardization(mean=mean.tolist(), std=std.tolist())
    return ds.replace(y=(ds.y - mean) / std, standardization=info)


def inverse_standardize(ds: Dataset) -> Dataset:
    if ds.standardization is None:
        return ds
    info = ds.standardization
    return ds.replace(y=ds.y * np.asarray(info.std) + np.asarray(info.mean), standardization=None)


def unstandardize_values(y: np.ndarray, info: Optional[Standardization]) -> np.ndarray:
    if info is None:
        return y
    return y * np.asarray(info.std) + np.asarray(info.mean)


def split_dataset(ds: Dataset, validation_fraction: float = 0.25, seed: int = 0) -> Dataset:
    """
    Marca como validación la fracción final de una permutación semillada.

    Las filas ya marcadas como test no se tocan.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise DataError(f"[Split] fracción de validación inválida: {validation_fraction}")
    split = ds.split.copy()
    pool = np.flatnonzero(split != "test")
    order = np.random.default_rng(seed).permutation(pool)
    n_val = int(round(validation_fraction * order.size))
    if n_val < 1 or n_val >= order.size:
        raise DataError(f"[Split] {order.size} filas no alcanzan para validar con {validation_fraction}")
    split[order[:-n_val]] = "train"
    split[order[-n_val:]] = "validation"
    return ds.replace(split=split)


def tag_test_rows(ds: Dataset, test_fraction: float, seed: int) -> Dataset:
    """Marca una fracción semillada de filas como test."""
    if test_fraction <= 0.0:
        return ds
    if test_fraction >= 1.0:
        raise DataError(f"[Split] fracción de test inválida: {test_fraction}")
    split = ds.split.copy()
    order = np.random.default_rng(derive_seed(seed, 2)).permutation(ds.n)
    split[order[:int(round(test_fraction * ds.n))]] = "test"
    return ds.replace(split=split)


def concat_datasets(first: Dataset, second: Dataset) -> Dataset:
    return first.replace(
        y=np.vstack([first.y, second.y]),
        x=np.vstack([first.x, second.x]),
        split=np.concatenate([first.split, second.split]),
    )


# ---------------------------------------------------------------------------
# Caché
# ---------------------------------------------------------------------------

def _csv_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path if path.suffix == ".csv" else path.with_name(path.name + ".csv")


def save_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    """Escribe <path>.csv y <path>.json (metadatos)."""
    path = _csv_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.hstack([ds.y, ds.x]), columns=ds.response_names + ds.feature_names)
    frame["split"] = ds.split
    frame.to_csv(path, index=False, float_format="%.17g")
    meta = {
        "response_names": ds.response_names,
        "feature_names": ds.feature_names,
        "standardization": ds.standardization.model_dump() if ds.standardization else None,
        "seed": ds.seed,
        "source": ds.source,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = _csv_path(path)
    meta_path = path.with_suffix(".json")
    if not meta_path.exists():
        raise DataError(f"[Dataset] falta el archivo de metadatos {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    std = meta.get("standardization")
    return Dataset(
        y=frame[meta["response_names"]].to_numpy(dtype=float),
        x=frame[meta["feature_names"]].to_numpy(dtype=float) if meta["feature_names"] else None,
        split=frame["split"].to_numpy(dtype=object),
        response_names=meta["response_names"],
        feature_names=meta["feature_names"],
        standardization=Standardization(**std) if std else None,
        seed=meta.get("seed"),
        source=meta.get("source", {}),
    )


# ---------------------------------------------------------------------------
# Configuración
# ---------------------------------------------------------------------------

class DataConfig(BaseModel):
    """Origen de los datos de un experimento."""

    name: str = ""
    generator: Literal["moons", "circles", "tabular", "file"] = "moons"
    n: int = Field(16384, ge=2)
    noise: Optional[float] = Field(None, ge=0.0)
    inner_factor: float = CIRCLES_INNER_FACTOR
    dim: int = Field(8, ge=2)
    test_size: int = Field(4096, ge=0)
    path: Optional[str] = None
    response_cols: List[str] = Field(default_factory=list)
    feature_cols: List[str] = Field(default_factory=list)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    standardize: bool = False
    conditional: bool = True

    @model_validator(mode="after")
    def _check_file(self):
        if self.generator == "file":
            if not self.path:
                raise ValueError("generator 'file' necesita 'path'")
            if not Path(self.path).exists():
                raise ValueError(f"el archivo {self.path} no existe")
            if not self.response_cols:
                raise ValueError("generator 'file' necesita 'response_cols'")
        return self

    @property
    def label(self) -> str:
        return self.name or self.generator


def _generate(cfg: DataConfig, n: int, seed: int) -> Dataset:
    if cfg.generator == "moons":
        return gen_moons(n, MOONS_NOISE if cfg.noise is None else cfg.noise, seed)
    if cfg.generator == "circles":
        return gen_circles(n, CIRCLES_NOISE if cfg.noise is None else cfg.noise, cfg.inner_factor, seed)
    return gen_tabular_smoke(n, cfg.dim, seed)


def build_dataset(cfg: DataConfig, seed: int, validation_fraction: float = 0.25) -> Dataset:
    """
    Genera o lee el dataset de un experimento, ya particionado.

    Los datos de test de los generadores salen de un flujo hijo de la semilla.
    """
    if cfg.generator == "file":
        ds = load_table(cfg.path, cfg.response_cols, cfg.feature_cols)
        ds = tag_test_rows(ds, cfg.test_fraction, seed)
    else:
        ds = _generate(cfg, cfg.n, seed)
        if cfg.test_size:
            test = _generate(cfg, cfg.test_size, derive_seed(seed, 1))
            ds = concat_datasets(ds, test.replace(split=np.full(test.n, "test", dtype=object)))
    if not cfg.conditional:
        ds = ds.without_features()
    ds = split_dataset(ds, validation_fraction, seed)
    if cfg.standardize:
        # media y desviación solo del train, aplicadas a todas las filas
        ds = standardize(ds, fit_on="train")
    logger.info(f"[Data] {cfg.label}: {ds.n} filas (train={int(ds.mask('train').sum())}, "
                f"validation={int(ds.mask('validation').sum())}, test={int(ds.mask('test').sum())})")
    return ds
