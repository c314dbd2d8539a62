"""
Etapas del flujo.

Cada etapa transforma y → z en la dirección de normalización y devuelve el
log-determinante por observación. Las etapas registran sus parámetros en el
ParamStore del modelo y los leen del diccionario que reciben en cada llamada,
así el mismo objeto sirve con la cinta (entrenamiento) o con numpy (evaluación).
"""

import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import diffcore as dc
from ..core.diffcore import ParamStore, value_of
from ..errors import BijectorError, ConditionerError
from .bijectors import (
    IDENTITY_BOUND,
    RQS_DEFAULT_BOUND,
    Bijector,
    bernstein_constrain,
    bernstein_constrain_recursive,
    bernstein_forward,
    bernstein_inverse,
    bernstein_log_det,
    rqs_constrain,
    rqs_forward_and_log_det,
    rqs_inverse,
    triangular_apply,
    triangular_solve,
)
from .conditioners import (
    FCN,
    FeatureCoefficientMap,
    FeatureShiftMap,
    MaskedMLP,
    coupling_params,
    feature_shift,
    feature_theta,
    made_forward,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Familias de transformaciones elemento a elemento
# ---------------------------------------------------------------------------

class TransformFamily(ABC):
    """Transformación monótona por coordenada parametrizada por P valores crudos."""

    name = "family"

    @property
    @abstractmethod
    def params_per_dim(self) -> int:
        pass

    @abstractmethod
    def forward_and_log_det(self, y, raw):
        pass

    @abstractmethod
    def inverse(self, z: np.ndarray, raw: np.ndarray, dimension: Optional[int] = None) -> np.ndarray:
        pass


class BernsteinFamily(TransformFamily):
    name = "bernstein"

    def __init__(self, order: int, constraint: str = "softmax", bound: float = IDENTITY_BOUND):
        if order < 1:
            raise BijectorError(f"[Bernstein] orden inválido: {order}")
        self.order = order
        self.constraint = constraint
        self.bound = bound

    @property
    def params_per_dim(self) -> int:
        return self.order + 2 if self.constraint == "softmax" else self.order + 1

    def constrain(self, raw):
        if self.constraint == "softmax":
            return bernstein_constrain(raw)
        return bernstein_constrain_recursive(raw)

    def forward_and_log_det(self, y, raw):
        theta = self.constrain(raw)
        z = bernstein_forward(y, theta, -self.bound, self.bound)
        return z, bernstein_log_det(y, theta, -self.bound, self.bound)

    def inverse(self, z, raw, dimension=None):
        theta = value_of(self.constrain(np.asarray(raw, dtype=float)))
        return bernstein_inverse(z, theta, -self.bound, self.bound, dimension=dimension)


class RQSFamily(TransformFamily):
    name = "rqs"

    def __init__(self, bins: int = 32, bound: float = RQS_DEFAULT_BOUND):
        if bins < 2:
            raise BijectorError(f"[RQS] se necesitan al menos 2 bins, hay {bins}")
        self.bins = bins
        self.bound = bound

    @property
    def params_per_dim(self) -> int:
        return 3 * self.bins - 1

    def forward_and_log_det(self, y, raw):
        return rqs_forward_and_log_det(y, rqs_constrain(raw, self.bound))

    def inverse(self, z, raw, dimension=None):
        return rqs_inverse(z, rqs_constrain(np.asarray(raw, dtype=float), self.bound))


# ---------------------------------------------------------------------------
# Etapas
# ---------------------------------------------------------------------------

class FlowLayer(ABC):
    """Interfaz de una etapa del flujo."""

    kind = "layer"

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        pass

    @abstractmethod
    def forward(self, params, y, x=None):
        """Devuelve (z, log_det) con log_det de forma (n,)."""
        pass

    @abstractmethod
    def inverse(self, params, z: np.ndarray, x=None) -> np.ndarray:
        pass

    def _check_dim(self, y) -> None:
        shape = value_of(y).shape
        if len(shape) != 2 or shape[1] != self.dim:
            raise BijectorError(f"[{self.name}] entrada {shape}, se esperaban {self.dim} columnas")

    def __str__(self) -> str:
        return f"{self.kind}:{self.name}"


class MarginalBernsteinLayer(FlowLayer):
    """
    H₁: un polinomio de Bernstein por dimensión más un desplazamiento β(x).

    Con `theta_mode="linear"` los coeficientes crudos dependen de x (para una
    covariable binaria, un juego de coeficientes por clase).
    """

    kind = "bernstein"

    def __init__(self, name: str, dim: int, order: int, domain: Sequence[Sequence[float]],
                 constraint: str = "softmax", n_features: int = 0, shift_mode: str = "none",
                 shift_order: int = 6, feature_domain=None, theta_mode: str = "shared"):
        super().__init__(name, dim)
        self.family = BernsteinFamily(order, constraint)
        dom = np.asarray(domain, dtype=float)
        if dom.shape != (dim, 2) or np.any(dom[:, 1] <= dom[:, 0]):
            raise BijectorError(f"[{name}] dominio inválido: {dom.tolist()}")
        self.low = dom[:, 0]
        self.high = dom[:, 1]
        self.shift_map: Optional[FeatureShiftMap] = None
        self.coef_map: Optional[FeatureCoefficientMap] = None
        if shift_mode != "none":
            self.shift_map = FeatureShiftMap(f"{name}.shift", shift_mode, n_features, dim,
                                             order=shift_order, domain=feature_domain)
        if theta_mode == "linear":
            self.coef_map = FeatureCoefficientMap(f"{name}.theta_x", n_features, dim,
                                                  self.family.params_per_dim)

    @property
    def order(self) -> int:
        return self.family.order

    @property
    def conditional(self) -> bool:
        return self.shift_map is not None or self.coef_map is not None

    def register(self, store, rng):
        store.add(f"{self.name}.theta", np.zeros((self.dim, self.family.params_per_dim)))
        if self.shift_map is not None:
            self.shift_map.register(store, rng)
        if self.coef_map is not None:
            self.coef_map.register(store, rng)

    def theta(self, params, x=None):
        """Coeficientes restringidos: (J, M+1) o (n, J, M+1) si dependen de x."""
        raw = params[f"{self.name}.theta"]
        if self.coef_map is not None:
            raw = feature_theta(x, self.coef_map, params, raw)
        return self.family.constrain(raw)

    def shift(self, params, x=None):
        if self.shift_map is None:
            return None
        return feature_shift(x, self.shift_map, params)

    def forward(self, params, y, x=None):
        self._check_dim(y)
        theta = self.theta(params, x)
        h = bernstein_forward(y, theta, self.low, self.high)
        log_det = dc.sum_(bernstein_log_det(y, theta, self.low, self.high), axis=-1)
        beta = self.shift(params, x)
        if beta is not None:
            h = h + beta
        return h, log_det

    def inverse(self, params, z, x=None):
        z = np.asarray(z, dtype=float)
        theta = value_of(self.theta(params, x))
        beta = self.shift(params, x)
        if beta is not None:
            z = z - value_of(beta)
        y = np.empty_like(z)
        for j in range(self.dim):
            y[:, j] = bernstein_inverse(z[:, j], theta[..., j, :], self.low[j], self.high[j], dimension=j)
        return y


class CouplingLayer(FlowLayer):
    """
    Acoplamiento: y_A = y[:, :d] pasa igual y parametriza la transformación de y_B.

    d = ⌊J/2⌋. Las covariables pueden concatenarse a y_A o sumarse a los
    parámetros a través de una red propia.
    """

    kind = "coupling"

    def __init__(self, name: str, dim: int, family: TransformFamily, hidden: Sequence[int],
                 n_features: int = 0, concat_features: bool = False, additive_features: bool = False,
                 feature_hidden: Sequence[int] = (16, 16)):
        super().__init__(name, dim)
        if dim < 2:
            raise ConditionerError(f"[{name}] un acoplamiento necesita J >= 2, J={dim}")
        self.family = family
        self.split = dim // 2
        self.n_transformed = dim - self.split
        self.concat_features = bool(concat_features and n_features)
        out = self.n_transformed * family.params_per_dim
        in_dim = self.split + (n_features if self.concat_features else 0)
        self.net = FCN(f"{name}.net", [in_dim, *hidden, out])
        self.feature_net = None
        if additive_features and n_features:
            self.feature_net = FCN(f"{name}.feat", [n_features, *feature_hidden, out])

    def register(self, store, rng):
        self.net.register(store, rng)
        if self.feature_net is not None:
            self.feature_net.register(store, rng)

    def raw_params(self, params, y_a, x=None):
        raw = coupling_params(y_a, x if self.concat_features else None, self.net, params,
                              self.n_transformed, self.family.params_per_dim)
        if self.feature_net is not None:
            extra = self.feature_net(params, np.asarray(x, dtype=float))
            raw = raw + dc.reshape(extra, value_of(raw).shape)
        return raw

    def forward(self, params, y, x=None):
        self._check_dim(y)
        y_a = y[:, :self.split]
        y_b = y[:, self.split:]
        raw = self.raw_params(params, y_a, x)
        z_b, log_det = self.family.forward_and_log_det(y_b, raw)
        return dc.concat([y_a, z_b], axis=-1), dc.sum_(log_det, axis=-1)

    def inverse(self, params, z, x=None):
        z = np.asarray(z, dtype=float)
        y_a = z[:, :self.split]
        raw = value_of(self.raw_params(params, y_a, x))
        y_b = np.empty((z.shape[0], self.n_transformed))
        for k in range(self.n_transformed):
            y_b[:, k] = self.family.inverse(z[:, self.split + k], raw[:, k, :], dimension=self.split + k)
        return np.concatenate([y_a, y_b], axis=-1)


class MaskedAutoregressiveLayer(FlowLayer):
    """
    Capa MAF: Ψ = MADE(w) y z_j = h(w_j; ψ_j).

    Con `passthrough=p` las primeras p dimensiones no se transforman y alimentan
    una red adicional cuya salida se suma a Ψ (variante híbrida que aplica H₂
    solo a y_{j>p}).
    """

    kind = "maf"

    def __init__(self, name: str, dim: int, family: TransformFamily, hidden: Sequence[int],
                 n_features: int = 0, concat_features: bool = False, additive_features: bool = False,
                 passthrough: int = 0, context_hidden: Sequence[int] = (16, 16),
                 feature_hidden: Sequence[int] = (16, 16)):
        super().__init__(name, dim)
        if passthrough < 0 or passthrough >= dim:
            raise ConditionerError(f"[{name}] passthrough={passthrough} fuera de rango para J={dim}")
        self.family = family
        self.passthrough = passthrough
        self.n_ar = dim - passthrough
        self.concat_features = bool(concat_features and n_features)
        P = family.params_per_dim
        self.made = MaskedMLP(f"{name}.made", self.n_ar, hidden, P,
                              context_dim=n_features if self.concat_features else 0)
        self.feature_net = None
        if additive_features and n_features:
            self.feature_net = FCN(f"{name}.feat", [n_features, *feature_hidden, self.n_ar * P])
        self.context_net = None
        if passthrough:
            self.context_net = FCN(f"{name}.ctx", [passthrough, *context_hidden, self.n_ar * P])

    def register(self, store, rng):
        self.made.register(store, rng)
        if self.feature_net is not None:
            self.feature_net.register(store, rng)
        if self.context_net is not None:
            self.context_net.register(store, rng)

    def raw_params(self, params, w, x=None, context=None):
        psi = made_forward(w, np.asarray(x, dtype=float) if self.concat_features else None, self.made, params)
        shape = value_of(psi).shape
        if self.feature_net is not None:
            psi = psi + dc.reshape(self.feature_net(params, np.asarray(x, dtype=float)), shape)
        if self.context_net is not None:
            psi = psi + dc.reshape(self.context_net(params, context), shape)
        return psi

    def forward(self, params, y, x=None):
        self._check_dim(y)
        p = self.passthrough
        context = y[:, :p] if p else None
        w = y[:, p:] if p else y
        psi = self.raw_params(params, w, x, context)
        z_ar, log_det = self.family.forward_and_log_det(w, psi)
        z = dc.concat([context, z_ar], axis=-1) if p else z_ar
        return z, dc.sum_(log_det, axis=-1)

    def inverse(self, params, z, x=None):
        z = np.asarray(z, dtype=float)
        p = self.passthrough
        context = z[:, :p] if p else None
        target = z[:, p:]
        w = np.zeros_like(target)
        for j in range(self.n_ar):
            psi = value_of(self.raw_params(params, w, x, context))
            w[:, j] = self.family.inverse(target[:, j], psi[:, j, :], dimension=p + j)
        return np.concatenate([context, w], axis=-1) if p else w


class PermutationLayer(FlowLayer):
    """Permutación fija de coordenadas; log-det 0."""

    kind = "permutation"

    def __init__(self, name: str, dim: int, perm: Sequence[int]):
        super().__init__(name, dim)
        perm = np.asarray(perm, dtype=int)
        if sorted(perm.tolist()) != list(range(dim)):
            raise ConditionerError(f"[{name}] permutación inválida: {perm.tolist()}")
        self.perm = perm
        self.inverse_perm = np.argsort(perm)

    @classmethod
    def reverse(cls, name: str, dim: int, keep: int = 0) -> "PermutationLayer":
        return cls(name, dim, list(range(keep)) + list(range(dim - 1, keep - 1, -1)))

    @classmethod
    def random(cls, name: str, dim: int, rng: np.random.Generator, keep: int = 0) -> "PermutationLayer":
        tail = rng.permutation(np.arange(keep, dim))
        return cls(name, dim, list(range(keep)) + tail.tolist())

    def forward(self, params, y, x=None):
        self._check_dim(y)
        n = value_of(y).shape[0]
        return y[:, self.perm], np.zeros(n)

    def inverse(self, params, z, x=None):
        return np.asarray(z, dtype=float)[:, self.inverse_perm]


class TriangularLayer(FlowLayer):
    """
    Λ con diagonal unitaria. Sin covariables sus entradas son parámetros libres;
    con covariables cada entrada es α(x̃)ᵀϑ en base de Bernstein.
    """

    kind = "triangular"

    def __init__(self, name: str, dim: int, n_features: int = 0, conditional: bool = False,
                 order: int = 6, feature_domain=None):
        super().__init__(name, dim)
        self.n_entries = dim * (dim - 1) // 2
        self.entry_map: Optional[FeatureShiftMap] = None
        if conditional and n_features:
            self.entry_map = FeatureShiftMap(f"{name}.lambda", "bernstein", n_features, self.n_entries,
                                             order=order, domain=feature_domain)

    def register(self, store, rng):
        if self.entry_map is not None:
            self.entry_map.register(store, rng)
        else:
            store.add(f"{self.name}.lambda", np.zeros(self.n_entries))

    def entries(self, params, x=None):
        if self.entry_map is not None:
            return self.entry_map(params, x)
        return params[f"{self.name}.lambda"]

    def forward(self, params, y, x=None):
        self._check_dim(y)
        z = triangular_apply(y, self.entries(params, x), self.dim)
        return z, np.zeros(value_of(y).shape[0])

    def inverse(self, params, z, x=None):
        return triangular_solve(z, value_of(self.entries(params, x)), self.dim)


class BijectorLayer(FlowLayer):
    """Envuelve un Bijector fijo (sin parámetros entrenables)."""

    kind = "bijector"

    def __init__(self, name: str, dim: int, bijector: Bijector):
        super().__init__(name, dim)
        self.bijector = bijector

    def forward(self, params, y, x=None):
        self._check_dim(y)
        return self.bijector.forward(y), dc.sum_(self.bijector.forward_log_det(y), axis=-1)

    def inverse(self, params, z, x=None):
        return self.bijector.inverse(np.asarray(z, dtype=float))


def layer_kinds(layers: List[FlowLayer]) -> List[str]:
    return [layer.kind for layer in layers]
