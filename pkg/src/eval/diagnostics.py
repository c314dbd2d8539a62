"""
Diagnostics - métricas y diagnósticos de modelos entrenados.

Funcionalidad:
- Tablas de NLL por (modelo, dataset, condicional, semilla) con media ± 2·std
- Puntos QQ contra una distribución de referencia o contra otra muestra
- PIT y densidad de cópula implícita
- Correlaciones de rango de Spearman a partir de Λ
- Integral de la densidad en 2D, ajuste marginal de H₁ y curva de desplazamiento β(x)
"""

import logging
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy import integrate, stats

from ..core.diffcore import value_of
from ..errors import EvaluationError
from ..flows.models import (
    BaseDistribution,
    FlowModel,
    get_base,
    lambda_matrices,
    marginal_log_pdf,
    marginal_quantile,
    marginal_scale,
)

logger = logging.getLogger(__name__)

N_PROBS = 200


def _reference(reference: Union[str, BaseDistribution]) -> BaseDistribution:
    return get_base(reference) if isinstance(reference, str) else reference


def midpoint_probs(n_probs: int = N_PROBS) -> np.ndarray:
    """p_i = (i-½)/n, i=1..n."""
    return (np.arange(1, n_probs + 1) - 0.5) / n_probs


# ---------------------------------------------------------------------------
# QQ
# ---------------------------------------------------------------------------

def qq_points(samples, reference: Union[str, BaseDistribution] = "normal", n_probs: int = N_PROBS) -> pd.DataFrame:
    """
    Cuantiles de referencia contra cuantiles empíricos.

    Returns:
        DataFrame con columnas prob, ref_q, emp_q
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise EvaluationError(f"[QQ] se necesitan al menos 2 muestras, hay {samples.size}")
    probs = midpoint_probs(n_probs)
    return pd.DataFrame({
        "prob": probs,
        "ref_q": _reference(reference).ppf(probs),
        "emp_q": np.quantile(samples, probs),
    })


def qq_two_sample(a, b, n_probs: int = N_PROBS) -> pd.DataFrame:
    """Cuantiles de `a` (datos) contra cuantiles de `b` (muestras del modelo)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise EvaluationError("[QQ] se necesitan al menos 2 muestras por lado")
    probs = midpoint_probs(n_probs)
    return pd.DataFrame({"prob": probs, "data_q": np.quantile(a, probs), "model_q": np.quantile(b, probs)})


def max_qq_deviation(frame: pd.DataFrame) -> float:
    return float(np.max(np.abs(frame["emp_q"].to_numpy() - frame["ref_q"].to_numpy())))


# ---------------------------------------------------------------------------
# PIT y cópula
# ---------------------------------------------------------------------------

def pit(w, base: Union[str, BaseDistribution] = "normal") -> np.ndarray:
    return _reference(base).cdf(np.asarray(w, dtype=float))


def copula_density(model: FlowModel, u, x=None) -> np.ndarray:
    """
    c(u|x) = f_Y(F⁻¹(u)|x) / Π_j f_{Y_j}(F_j⁻¹(u_j)|x), una por fila de u.

    Raises:
        EvaluationError: u fuera de (0,1) o modelo sin etapa H₁
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise EvaluationError("[Copula] u debe estar en el interior de (0,1)^J")
    y = marginal_quantile(model, u, x)
    joint = model.log_prob(y, x)
    marginals = marginal_log_pdf(model, y, x).sum(axis=-1)
    return np.exp(joint - marginals)


def copula_grid(model: FlowModel, n_grid: int = 25, x=None) -> pd.DataFrame:
    """c(u₁,u₂|x) en una grilla de puntos medios de (0,1)²."""
    if model.dim != 2:
        raise EvaluationError(f"[Copula] la grilla es para J=2, el modelo tiene J={model.dim}")
    g = midpoint_probs(n_grid)
    u1, u2 = np.meshgrid(g, g, indexing="ij")
    u = np.column_stack([u1.ravel(), u2.ravel()])
    c = copula_density(model, u, x)
    return pd.DataFrame({"u1": u[:, 0], "u2": u[:, 1], "c": c})


def copula_integral(frame: pd.DataFrame) -> float:
    """Regla del punto medio sobre una grilla de copula_grid."""
    n = int(round(np.sqrt(len(frame))))
    return float(frame["c"].sum() / (n * n))


# ---------------------------------------------------------------------------
# Correlaciones de rango
# ---------------------------------------------------------------------------

def pearson_to_spearman(rho):
    """ρˢ = (6/π)·arcsin(ρ/2)."""
    rho = np.clip(np.asarray(rho, dtype=float), -1.0, 1.0)
    return 6.0 / np.pi * np.arcsin(rho / 2.0)


def spearman_from_lambda(lam) -> np.ndarray:
    """Σ = Λ⁻¹Λ⁻ᵀ, correlación de Pearson y su equivalente de Spearman."""
    lam = np.asarray(lam, dtype=float)
    J = lam.shape[-1]
    if lam.shape[-2:] != (J, J):
        raise EvaluationError(f"[RankCorr] Λ debe ser cuadrada, forma {lam.shape}")
    if not np.allclose(np.diagonal(lam, axis1=-2, axis2=-1), 1.0) or np.any(np.triu(lam, 1) != 0.0):
        raise EvaluationError("[RankCorr] Λ debe ser triangular inferior con diagonal unitaria")
    inv = np.linalg.inv(lam)
    sigma = inv @ np.swapaxes(inv, -1, -2)
    sd = np.sqrt(np.diagonal(sigma, axis1=-2, axis2=-1))
    rho = sigma / (sd[..., :, None] * sd[..., None, :])
    out = pearson_to_spearman(rho)
    idx = np.arange(J)
    out[..., idx, idx] = 1.0
    return out


def rank_correlations(model: FlowModel, x=None) -> pd.DataFrame:
    """
    Tabla (row, i, j, spearman) del Λ del modelo, una matriz por fila de x.

    Raises:
        EvaluationError: H₂ no es una única matriz triangular
    """
    n = 1 if x is None else np.atleast_2d(np.asarray(x, dtype=float)).shape[0]
    lam = lambda_matrices(model, x, n) if isinstance(model, FlowModel) else None
    if lam is None:
        raise EvaluationError("[RankCorr] el modelo no tiene una etapa Λ")
    rs = spearman_from_lambda(lam).reshape(-1, model.dim, model.dim)
    rows = []
    for r in range(rs.shape[0]):
        for i in range(model.dim):
            for j in range(i):
                rows.append({"row": r, "i": i, "j": j, "spearman": float(rs[r, i, j])})
    return pd.DataFrame(rows, columns=["row", "i", "j", "spearman"])


# ---------------------------------------------------------------------------
# Tablas de NLL
# ---------------------------------------------------------------------------

class TrialRow(BaseModel):
    model: str
    dataset: str
    conditional: bool
    seed: int
    test_nll: float


class TrialTable(BaseModel):
    """NLL de test por ensayo; la agregación sale siempre de las filas crudas."""

    rows: List[TrialRow] = Field(default_factory=list)

    def add(self, row: TrialRow) -> None:
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        columns = list(TrialRow.model_fields)
        frame = pd.DataFrame([r.model_dump() for r in self.rows], columns=columns)
        return frame.sort_values(["dataset", "conditional", "model", "seed"], kind="stable").reset_index(drop=True)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TrialTable":
        return cls(rows=[TrialRow(**rec) for rec in frame.to_dict(orient="records")])

    def aggregate(self) -> pd.DataFrame:
        """Media y 2·std (ddof=1) por celda; un único ensayo tiene dispersión 0."""
        frame = self.to_frame()
        grouped = frame.groupby(["model", "dataset", "conditional"], sort=True)["test_nll"]
        out = grouped.agg(n_trials="count", mean="mean", std=lambda s: s.std(ddof=1) if len(s) > 1 else 0.0)
        out["spread"] = 2.0 * out.pop("std")
        return out.reset_index()

    def to_wide_frame(self, digits: int = 3) -> pd.DataFrame:
        """Modelos en filas, (dataset, condicional) en columnas, celdas "media ± dispersión"."""
        agg = self.aggregate()
        agg["column"] = agg["dataset"] + "|" + np.where(agg["conditional"], "conditional", "unconditional")
        agg["cell"] = [f"{m:.{digits}f} ± {s:.{digits}f}" for m, s in zip(agg["mean"], agg["spread"])]
        wide = agg.pivot(index="model", columns="column", values="cell")
        wide.columns.name = None
        return wide.reset_index()


def nll_table(runs: Iterable[Union[TrialRow, dict]]) -> TrialTable:
    table = TrialTable()
    for run in runs:
        table.add(run if isinstance(run, TrialRow) else TrialRow(**run))
    return table


# ---------------------------------------------------------------------------
# Normalización, ajuste marginal y desplazamiento
# ---------------------------------------------------------------------------

def density_integral(model, x=None, bounds: Sequence[Tuple[float, float]] = ((-5.0, 5.0), (-5.0, 5.0)),
                     n: int = 400) -> float:
    """∫∫ exp(log f(y|x)) dy con la regla de Simpson en una grilla n×n."""
    if model.dim != 2:
        raise EvaluationError(f"[Density] la integral es para J=2, el modelo tiene J={model.dim}")
    g1 = np.linspace(bounds[0][0], bounds[0][1], n)
    g2 = np.linspace(bounds[1][0], bounds[1][1], n)
    y1, y2 = np.meshgrid(g1, g2, indexing="ij")
    grid = np.column_stack([y1.ravel(), y2.ravel()])
    xs = None
    if x is not None:
        xs = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, -1), (grid.shape[0], np.size(x)))
    dens = np.exp(model.log_prob(grid, xs)).reshape(n, n)
    return float(integrate.simpson(integrate.simpson(dens, x=g2, axis=1), x=g1))


def marginal_fit(model: FlowModel, y, x=None, n_probs: int = N_PROBS, seed: int = 0) -> pd.DataFrame:
    """
    Calidad de H₁: W_j = H₁(y)_j reescalado contra la base.

    Returns:
        DataFrame (dimension, max_qq_deviation, ks_pvalue)
    """
    if not isinstance(model, FlowModel) or model.marginal is None:
        raise EvaluationError("[MarginalFit] el modelo no tiene etapa marginal H₁")
    y = np.asarray(y, dtype=float)
    w = model.marginal_transform(y, x)
    xs = model.prepare_features(x, w.shape[0])
    w = w / marginal_scale(model, xs, w.shape[0])
    fresh = model.base.sample(np.random.default_rng(seed), w.shape)
    rows = []
    for j in range(model.dim):
        qq = qq_points(w[:, j], model.base, n_probs)
        rows.append({
            "dimension": j,
            "max_qq_deviation": max_qq_deviation(qq),
            "ks_pvalue": float(stats.ks_2samp(w[:, j], fresh[:, j]).pvalue),
        })
    return pd.DataFrame(rows, columns=["dimension", "max_qq_deviation", "ks_pvalue"])


def marginal_shift_curve(model: FlowModel, feature_grid, feature_index: int = 0,
                         base_features: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """
    β_j(x) y el desplazamiento inverso -β_j(x) sobre una grilla de una covariable.

    Las demás covariables quedan fijas en `base_features` (0 por defecto).
    """
    if not isinstance(model, FlowModel) or model.marginal is None or model.marginal.shift_map is None:
        raise EvaluationError("[Shift] el modelo no tiene desplazamiento marginal β(x)")
    U = model.spec.n_features
    if not 0 <= feature_index < U:
        raise EvaluationError(f"[Shift] índice de covariable {feature_index} fuera de rango (U={U})")
    grid = np.asarray(feature_grid, dtype=float).ravel()
    x = np.tile(np.zeros(U) if base_features is None else np.asarray(base_features, dtype=float), (grid.size, 1))
    x[:, feature_index] = grid
    beta = np.asarray(value_of(model.marginal.shift(model.store.arrays(), x)))
    rows = []
    for i, value in enumerate(grid):
        for j in range(model.dim):
            rows.append({"feature": float(value), "dimension": j,
                         "beta": float(beta[i, j]), "inverse_shift": float(-beta[i, j])})
    return pd.DataFrame(rows, columns=["feature", "dimension", "beta", "inverse_shift"])
