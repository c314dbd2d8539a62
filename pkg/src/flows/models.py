"""
Modelos de densidad condicional.

Funcionalidad:
- Distribuciones base (normal estándar, logística estándar)
- FlowModel: base + H₁ (marginales de Bernstein) + H₂ (dependencia)
- MVNModel: normal multivariada con media y factor de Cholesky desde una FCN
- build_model: arma los modelos del zoológico a partir de un ModelSpec
- Serialización JSON {spec, porciones, valores} y marginales vía H₁
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from ..core import diffcore as dc
from ..core.diffcore import ParamStore, value_of
from ..errors import BijectorError, ConfigurationError, DomainError, EvaluationError, FlowError
from .bijectors import bernstein_log_det, lambda_matrix
from .conditioners import FCN
from .layers import (
    BernsteinFamily,
    CouplingLayer,
    FlowLayer,
    MarginalBernsteinLayer,
    MaskedAutoregressiveLayer,
    PermutationLayer,
    RQSFamily,
    TriangularLayer,
    layer_kinds,
)
from .specs import HYBRID_KINDS, ModelSpec

logger = logging.getLogger(__name__)

DOMAIN_MARGIN = 0.05
MVN_MIN_SCALE = 1e-5


# ---------------------------------------------------------------------------
# Distribuciones base
# ---------------------------------------------------------------------------

class BaseDistribution(ABC):
    name = "base"

    @abstractmethod
    def log_prob(self, z):
        pass

    @abstractmethod
    def cdf(self, z: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def ppf(self, u: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        pass


class StandardNormal(BaseDistribution):
    name = "normal"

    def log_prob(self, z):
        return dc.normal_log_pdf(z)

    def cdf(self, z):
        return special.ndtr(z)

    def ppf(self, u):
        return special.ndtri(u)

    def sample(self, rng, shape):
        return rng.standard_normal(shape)


class StandardLogistic(BaseDistribution):
    name = "logistic"

    def log_prob(self, z):
        return dc.logistic_log_pdf(z)

    def cdf(self, z):
        return special.expit(z)

    def ppf(self, u):
        return special.logit(u)

    def sample(self, rng, shape):
        return rng.logistic(size=shape)


def get_base(name: str) -> BaseDistribution:
    bases = {"normal": StandardNormal, "logistic": StandardLogistic}
    if name not in bases:
        raise ConfigurationError("[Models] distribución base desconocida", ["base"])
    return bases[name]()


# ---------------------------------------------------------------------------
# Interfaz común
# ---------------------------------------------------------------------------

class DensityModel(ABC):
    """Métodos compartidos entre FlowModel y MVNModel."""

    def __init__(self, spec: ModelSpec, store: ParamStore, base: BaseDistribution):
        self.spec = spec
        self.store = store
        self.base = base

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_params(self) -> int:
        return len(self.store)

    def prepare_features(self, x, n: int) -> Optional[np.ndarray]:
        """Lleva x a (n, U); None si el modelo no usa covariables."""
        if not self.spec.uses_features:
            return None
        if x is None:
            raise FlowError("[Models] el modelo es condicional y faltan covariables")
        x = np.asarray(x, dtype=float)
        U = self.spec.n_features
        if x.ndim <= 1 and x.size == U:
            return np.broadcast_to(x.reshape(1, U), (n, U)).copy()
        if x.ndim == 1 and U == 1 and x.size == n:
            return x.reshape(n, 1)
        if x.shape != (n, U):
            raise FlowError(f"[Models] covariables con forma {x.shape}, se esperaba ({n}, {U})")
        return x

    def _prepare_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(1, -1) if y.size == self.dim else y.reshape(-1, 1)
        if y.ndim != 2 or y.shape[1] != self.dim:
            raise FlowError(f"[Models] respuesta con forma {y.shape}, J={self.dim}")
        return y

    @abstractmethod
    def log_prob_rows(self, params, y, x=None):
        """log f(y|x) por fila, sobre la cinta o en numpy."""
        pass

    @abstractmethod
    def inverse(self, z: np.ndarray, x=None) -> np.ndarray:
        pass

    def nll(self, params, y, x=None):
        """Media de -log f(y|x) en el lote."""
        return -dc.mean(self.log_prob_rows(params, y, x))

    def log_prob(self, y, x=None) -> np.ndarray:
        y = self._prepare_response(y)
        x = self.prepare_features(x, y.shape[0])
        return np.asarray(self.log_prob_rows(self.store.arrays(), y, x))

    def sample(self, x, n: int, seed: int) -> np.ndarray:
        """n muestras i.i.d. invirtiendo el flujo sobre muestras de la base."""
        rng = np.random.default_rng(seed)
        z = self.base.sample(rng, (n, self.dim))
        return self.inverse(z, x)


# ---------------------------------------------------------------------------
# Flujos
# ---------------------------------------------------------------------------

class FlowModel(DensityModel):
    """
    H = H₂ ∘ H₁ con base f_Z.

    log f(y|x) = log f_Z(H(y|x)) + Σ log-dets de las etapas.
    """

    def __init__(self, spec: ModelSpec, store: ParamStore, base: BaseDistribution,
                 marginal: Optional[MarginalBernsteinLayer] = None,
                 dependence: Optional[Sequence[FlowLayer]] = None):
        super().__init__(spec, store, base)
        self.marginal = marginal
        self.dependence: List[FlowLayer] = list(dependence or [])

    @property
    def stages(self) -> List[FlowLayer]:
        return ([self.marginal] if self.marginal is not None else []) + self.dependence

    def stage_kinds(self) -> List[str]:
        return layer_kinds(self.stages)

    def register(self, rng: np.random.Generator) -> None:
        for stage in self.stages:
            stage.register(self.store, rng)

    def _run(self, params, y, x, stages):
        z = y
        total = 0.0
        for i, stage in enumerate(stages):
            try:
                z, log_det = stage.forward(params, z, x)
            except (BijectorError, DomainError) as exc:
                raise FlowError(f"[Models] {exc}", stage=i) from exc
            if not (np.all(np.isfinite(value_of(z))) and np.all(np.isfinite(value_of(log_det)))):
                raise FlowError("[Models] valor no finito", stage=i)
            total = total + log_det
        return z, total

    def log_prob_rows(self, params, y, x=None):
        z, log_det = self._run(params, y, x, self.stages)
        return dc.sum_(self.base.log_prob(z), axis=-1) + log_det

    def transform(self, y, x=None) -> np.ndarray:
        y = self._prepare_response(y)
        x = self.prepare_features(x, y.shape[0])
        return np.asarray(value_of(self._run(self.store.arrays(), y, x, self.stages)[0]))

    def marginal_transform(self, y, x=None) -> np.ndarray:
        """W = H₁(y|x); la identidad si el modelo no tiene etapa marginal."""
        y = self._prepare_response(y)
        if self.marginal is None:
            return y.copy()
        x = self.prepare_features(x, y.shape[0])
        return np.asarray(value_of(self.marginal.forward(self.store.arrays(), y, x)[0]))

    def inverse(self, z, x=None) -> np.ndarray:
        z = self._prepare_response(z)
        x = self.prepare_features(x, z.shape[0])
        params = self.store.arrays()
        y = z
        for stage in reversed(self.stages):
            y = stage.inverse(params, y, x)
        return y


class MVNModel(DensityModel):
    """
    y = μ(x) + L(x) z con L triangular inferior y diagonal softplus + 1e-5.

    Sin covariables μ y L son parámetros libres; con covariables salen de una
    FCN de dos capas.
    """

    def __init__(self, spec: ModelSpec, store: ParamStore):
        super().__init__(spec, store, StandardNormal())
        J = spec.dim
        self.rows, self.cols = np.tril_indices(J)
        self.n_tril = self.rows.size
        self.net: Optional[FCN] = None
        if spec.uses_features:
            self.net = FCN("mvn.net", [spec.n_features, *spec.mvn_hidden, J + self.n_tril])

    def _diag_position(self, j: int) -> int:
        return int(np.flatnonzero((self.rows == j) & (self.cols == j))[0])

    def _entry_position(self, j: int, i: int) -> int:
        return int(np.flatnonzero((self.rows == j) & (self.cols == i))[0])

    def _initial_scale(self) -> np.ndarray:
        raw = np.zeros(self.n_tril)
        unit = np.log(np.expm1(1.0 - MVN_MIN_SCALE))
        for j in range(self.dim):
            raw[self._diag_position(j)] = unit
        return raw

    def register(self, rng: np.random.Generator) -> None:
        if self.net is None:
            self.store.add("mvn.loc", np.zeros(self.dim))
            self.store.add("mvn.scale", self._initial_scale())
        else:
            bias = np.concatenate([np.zeros(self.dim), self._initial_scale()])
            self.net.register(self.store, rng, output_bias=bias)

    def loc_scale(self, params, x=None):
        """(μ, entradas crudas de L); con covariables cada uno tiene una fila por observación."""
        if self.net is None:
            return params["mvn.loc"], params["mvn.scale"]
        out = self.net(params, np.asarray(x, dtype=float))
        return out[:, :self.dim], out[:, self.dim:]

    def _scale_from_raw(self, raw) -> np.ndarray:
        raw = np.asarray(value_of(raw))
        L = np.zeros(raw.shape[:-1] + (self.dim, self.dim))
        L[..., self.rows, self.cols] = raw
        diag = np.arange(self.dim)
        L[..., diag, diag] = value_of(dc.softplus(L[..., diag, diag])) + MVN_MIN_SCALE
        return L

    def scale_matrix(self, x=None) -> np.ndarray:
        """L(x); una matriz por fila de x si el modelo es condicional."""
        n = 1 if x is None else np.atleast_2d(np.asarray(x, dtype=float)).shape[0]
        x = self.prepare_features(x, n)
        return self._scale_from_raw(self.loc_scale(self.store.arrays(), x)[1])

    def log_prob_rows(self, params, y, x=None):
        loc, raw = self.loc_scale(params, x)
        resid = y - loc
        z_cols = []
        log_diag = 0.0
        log_pdf = 0.0
        for j in range(self.dim):
            d = dc.softplus(raw[..., self._diag_position(j)]) + MVN_MIN_SCALE
            acc = resid[:, j]
            for i in range(j):
                acc = acc - raw[..., self._entry_position(j, i)] * z_cols[i]
            z_j = acc / d
            z_cols.append(z_j)
            log_diag = log_diag + dc.log(d)
            log_pdf = log_pdf + self.base.log_prob(z_j)
        return log_pdf - log_diag

    def inverse(self, z, x=None) -> np.ndarray:
        z = self._prepare_response(z)
        x = self.prepare_features(x, z.shape[0])
        params = self.store.arrays()
        loc, raw = self.loc_scale(params, x)
        L = self._scale_from_raw(raw)
        return np.asarray(value_of(loc)) + np.einsum("...ij,...j->...i", L, z)


AnyModel = Union[FlowModel, MVNModel]


# ---------------------------------------------------------------------------
# Construcción
# ---------------------------------------------------------------------------

def infer_domain(values: np.ndarray, margin: float = DOMAIN_MARGIN) -> List[Tuple[float, float]]:
    """[min, max] por columna, ensanchado un `margin` del rango en cada lado."""
    values = np.asarray(values, dtype=float)
    low = values.min(axis=0)
    high = values.max(axis=0)
    span = np.where(high > low, high - low, 1.0)
    return [(float(lo - margin * s), float(hi + margin * s)) for lo, hi, s in zip(low, high, span)]


def _feature_domain(x: np.ndarray) -> List[Tuple[float, float]]:
    x = np.asarray(x, dtype=float)
    low = x.min(axis=0)
    high = x.max(axis=0)
    high = np.where(high > low, high, low + 1.0)
    return [(float(lo), float(hi)) for lo, hi in zip(low, high)]


def resolve_spec(spec: ModelSpec, y: Optional[np.ndarray] = None, x: Optional[np.ndarray] = None) -> ModelSpec:
    """Completa los dominios que dependen de los datos."""
    update = {}
    if spec.kind in HYBRID_KINDS and spec.marginal_domain is None:
        if y is not None:
            update["marginal_domain"] = infer_domain(y)
        else:
            update["marginal_domain"] = [(-4.0, 4.0)] * spec.dim
    if spec.uses_features and spec.feature_domain is None:
        if x is not None and np.asarray(x).size:
            update["feature_domain"] = _feature_domain(x)
        else:
            update["feature_domain"] = [(0.0, 1.0)] * spec.n_features
    return spec.model_copy(update=update) if update else spec


def _stack(spec: ModelSpec, make_layer, rng: np.random.Generator, keep: int = 0) -> List[FlowLayer]:
    layers: List[FlowLayer] = []
    n_free = spec.dim - keep
    for k in range(spec.n_layers):
        if k > 0 and n_free > 1:
            name = f"h2.perm{k}"
            if spec.permutation == "random":
                layers.append(PermutationLayer.random(name, spec.dim, rng, keep=keep))
            else:
                layers.append(PermutationLayer.reverse(name, spec.dim, keep=keep))
        layers.append(make_layer(k))
    return layers


def build_model(spec: ModelSpec, y: Optional[np.ndarray] = None, x: Optional[np.ndarray] = None) -> AnyModel:
    """
    Arma un modelo listo para entrenar.

    Args:
        spec: especificación del modelo
        y: respuestas de entrenamiento, para inferir el dominio de H₁
        x: covariables de entrenamiento, para inferir su dominio

    Returns:
        FlowModel o MVNModel con sus parámetros registrados
    """
    spec.check()
    spec = resolve_spec(spec, y, x)
    rng = np.random.default_rng(spec.seed)
    store = ParamStore()

    if spec.kind == "mvn":
        model = MVNModel(spec, store)
        model.register(rng)
        logger.info(f"[Models] {spec.label}: {len(store)} parámetros")
        return model

    J = spec.dim
    U = spec.n_features if spec.uses_features else 0
    concat = spec.feature_mode == "concat"
    additive = spec.feature_mode == "additive"
    if spec.family == "bernstein":
        family = BernsteinFamily(spec.flow_order, spec.constraint)
    else:
        family = RQSFamily(spec.bins, spec.tail_bound)

    marginal = None
    if spec.kind in HYBRID_KINDS:
        marginal = MarginalBernsteinLayer(
            "h1", J, spec.marginal_order, spec.marginal_domain, spec.constraint,
            n_features=U, shift_mode=spec.resolved_shift(), shift_order=spec.shift_order,
            feature_domain=spec.feature_domain, theta_mode=spec.resolved_theta())

    def coupling(k: int) -> CouplingLayer:
        return CouplingLayer(f"h2.{k}", J, family, spec.hidden, n_features=U,
                             concat_features=concat, additive_features=additive and k == 0,
                             feature_hidden=spec.feature_hidden)

    def maf(k: int, passthrough: int = 0) -> MaskedAutoregressiveLayer:
        return MaskedAutoregressiveLayer(f"h2.{k}", J, family, spec.hidden, n_features=U,
                                         concat_features=concat, additive_features=additive and k == 0,
                                         passthrough=passthrough, context_hidden=spec.context_hidden,
                                         feature_hidden=spec.feature_hidden)

    if spec.kind == "mctm":
        dependence = [TriangularLayer("h2.lambda", J, n_features=U, conditional=bool(U),
                                      order=spec.shift_order, feature_domain=spec.feature_domain)]
    elif spec.kind == "cf":
        dependence = _stack(spec, coupling, rng)
    elif spec.kind == "maf":
        dependence = _stack(spec, maf, rng)
    elif spec.kind == "hcf":
        dependence = [coupling(0)]
    else:
        dependence = _stack(spec, lambda k: maf(k, passthrough=1), rng, keep=1)

    model = FlowModel(spec, store, get_base(spec.base), marginal, dependence)
    model.register(rng)
    logger.info(f"[Models] {spec.label}: etapas {model.stage_kinds()}, {len(store)} parámetros")
    return model


def log_prob(model: AnyModel, y, x=None) -> np.ndarray:
    return model.log_prob(y, x)


def sample(model: AnyModel, x, n: int, seed: int) -> np.ndarray:
    return model.sample(x, n, seed)


# ---------------------------------------------------------------------------
# Serialización
# ---------------------------------------------------------------------------

def model_to_dict(model: AnyModel) -> dict:
    return {"spec": model.spec.model_dump(mode="json"), "params": model.store.to_dict()}


def model_from_dict(payload: dict) -> AnyModel:
    spec = ModelSpec.model_validate(payload["spec"])
    model = build_model(spec)
    store = ParamStore.from_dict(payload["params"])
    if store.slices != model.store.slices:
        raise ConfigurationError("[Models] las porciones guardadas no coinciden con el modelo", ["params"])
    model.store.restore(store.values)
    return model


def save_model(model: AnyModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")
    return path


def load_model(path: Union[str, Path]) -> AnyModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Marginales a través de H₁
# ---------------------------------------------------------------------------

def _require_marginal(model: AnyModel) -> MarginalBernsteinLayer:
    if not isinstance(model, FlowModel) or model.marginal is None:
        raise EvaluationError("[Models] el modelo no tiene etapa marginal H₁")
    return model.marginal


def lambda_matrices(model: FlowModel, x=None, n: int = 1) -> Optional[np.ndarray]:
    """Λ (o una Λ por fila si depende de x) cuando H₂ es triangular."""
    if len(model.dependence) != 1 or not isinstance(model.dependence[0], TriangularLayer):
        return None
    layer = model.dependence[0]
    x = model.prepare_features(x, n)
    entries = np.asarray(value_of(layer.entries(model.store.arrays(), x)))
    return lambda_matrix(entries, model.dim)


def marginal_scale(model: FlowModel, x=None, n: int = 1) -> np.ndarray:
    """
    Escala de W_j bajo la base: √Σ_jj con Σ = Λ⁻¹Λ⁻ᵀ si H₂ es triangular, 1 si no.
    """
    lam = lambda_matrices(model, x, n)
    if lam is None:
        return np.ones(model.dim)
    inv = np.linalg.inv(lam)
    sigma = inv @ np.swapaxes(inv, -1, -2)
    return np.sqrt(np.diagonal(sigma, axis1=-2, axis2=-1))


def _base_marginal_scale(model: FlowModel, x=None, n: int = 1) -> np.ndarray:
    """Escala de W_j; fuera de la base normal solo vale si Λ no mezcla dimensiones."""
    scale = marginal_scale(model, x, n)
    if not isinstance(model.base, StandardNormal) and not np.allclose(scale, 1.0, rtol=0.0, atol=1e-12):
        raise EvaluationError(f"[Models] con base {model.base.name} W_j no es una base escalada si Λ mezcla dimensiones")
    return scale


def marginal_cdf(model: AnyModel, y, x=None) -> np.ndarray:
    """F_{Y_j}(y_j|x) por columna."""
    marginal = _require_marginal(model)
    y = model._prepare_response(y)
    x = model.prepare_features(x, y.shape[0])
    w = np.asarray(value_of(marginal.forward(model.store.arrays(), y, x)[0]))
    return model.base.cdf(w / _base_marginal_scale(model, x, y.shape[0]))


def marginal_log_pdf(model: AnyModel, y, x=None) -> np.ndarray:
    """log f_{Y_j}(y_j|x) por columna."""
    marginal = _require_marginal(model)
    y = model._prepare_response(y)
    x = model.prepare_features(x, y.shape[0])
    params = model.store.arrays()
    w = np.asarray(value_of(marginal.forward(params, y, x)[0]))
    theta = value_of(marginal.theta(params, x))
    log_det = np.asarray(value_of(bernstein_log_det(y, theta, marginal.low, marginal.high)))
    scale = _base_marginal_scale(model, x, y.shape[0])
    return np.asarray(value_of(model.base.log_prob(w / scale))) - np.log(scale) + log_det


def marginal_quantile(model: AnyModel, u, x=None) -> np.ndarray:
    """Inversa de marginal_cdf por columna."""
    marginal = _require_marginal(model)
    u = model._prepare_response(u)
    x = model.prepare_features(x, u.shape[0])
    w = model.base.ppf(u) * _base_marginal_scale(model, x, u.shape[0])
    return marginal.inverse(model.store.arrays(), w, x)
