"""
Conditioners - redes que producen los parámetros de las transformaciones.

Funcionalidad:
- FCN: red densa con ReLU (acoplamientos, efectos de covariables, MVN)
- MaskedMLP: red enmascarada tipo MADE con grados secuenciales
- FeatureShiftMap: desplazamiento marginal β(x) lineal o en base de Bernstein
- FeatureCoefficientMap: coeficientes de Bernstein que dependen de x

Cada red registra sus pesos en un ParamStore con un prefijo propio y se evalúa
con el diccionario de porciones que devuelve ParamStore.bind o ParamStore.arrays.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core import diffcore as dc
from ..core.diffcore import ParamStore, value_of
from ..errors import ConditionerError
from .bijectors import bernstein_basis

logger = logging.getLogger(__name__)

Params = Dict[str, object]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class FCN:
    """
    Red totalmente conectada con activación max(0, ·).

    La última capa arranca en cero (o en `output_bias`) para que cada flujo
    empiece en la identidad.
    """

    def __init__(self, name: str, sizes: Sequence[int]):
        if len(sizes) < 2:
            raise ConditionerError(f"[FCN] {name}: se necesitan al menos entrada y salida")
        self.name = name
        self.sizes = [int(s) for s in sizes]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def register(self, store: ParamStore, rng: np.random.Generator,
                 output_bias: Optional[np.ndarray] = None) -> None:
        for k in range(self.n_layers):
            fan_in, fan_out = self.sizes[k], self.sizes[k + 1]
            last = k == self.n_layers - 1
            weight = np.zeros((fan_in, fan_out)) if last else glorot_uniform(rng, fan_in, fan_out)
            bias = np.zeros(fan_out)
            if last and output_bias is not None:
                bias = np.asarray(output_bias, dtype=float).reshape(fan_out)
            store.add(f"{self.name}.W{k}", weight)
            store.add(f"{self.name}.b{k}", bias)

    def __call__(self, params: Params, inputs):
        iv = value_of(inputs)
        if iv.ndim != 2 or iv.shape[1] != self.sizes[0]:
            raise ConditionerError(
                f"[FCN] {self.name}: entrada {iv.shape}, se esperaban {self.sizes[0]} columnas")
        h = inputs
        for k in range(self.n_layers):
            h = dc.matmul(h, params[f"{self.name}.W{k}"]) + params[f"{self.name}.b{k}"]
            if k < self.n_layers - 1:
                h = dc.relu(h)
        return h


# ---------------------------------------------------------------------------
# MADE
# ---------------------------------------------------------------------------

def build_masks(dim: int, hidden: Sequence[int], params_per_dim: int,
                order: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    """
    Máscaras binarias con grados secuenciales.

    Las entradas tienen grado order[i]+1, las unidades ocultas ciclan 1..J-1 y
    el bloque de salida j solo ve entradas de grado menor que el suyo.

    Returns:
        Una máscara (fan_in, fan_out) por capa, la última con J*P columnas
    """
    if dim < 1:
        raise ConditionerError(f"[MADE] J debe ser >= 1, recibió {dim}")
    if params_per_dim < 1:
        raise ConditionerError("[MADE] P debe ser >= 1")
    order = np.arange(dim) if order is None else np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(dim)):
        raise ConditionerError(f"[MADE] orden inválido: {order.tolist()}")
    for size in hidden:
        if size < dim - 1:
            raise ConditionerError(
                f"[MADE] capa oculta de {size} unidades no alcanza para J-1={dim - 1}")

    in_degrees = order + 1
    degrees = [in_degrees]
    for size in hidden:
        if dim > 1:
            degrees.append(np.arange(size) % (dim - 1) + 1)
        else:
            degrees.append(np.zeros(size, dtype=int))

    masks = []
    for prev, nxt in zip(degrees[:-1], degrees[1:]):
        masks.append((nxt[None, :] >= prev[:, None]).astype(float))
    out_degrees = np.repeat(in_degrees, params_per_dim)
    masks.append((out_degrees[None, :] > degrees[-1][:, None]).astype(float))
    return masks


class MaskedMLP:
    """
    Red autorregresiva enmascarada.

    La salida tiene forma (n, J, P); la fila j depende solo de w_{<j} y del
    contexto sin máscara. El contexto entra en la primera capa oculta y además
    directo a la salida (`feat_out`); la fila 0 no ve ninguna unidad oculta.
    """

    def __init__(self, name: str, dim: int, hidden: Sequence[int], params_per_dim: int,
                 context_dim: int = 0, order: Optional[Sequence[int]] = None):
        self.name = name
        self.dim = dim
        self.hidden = list(hidden)
        self.params_per_dim = params_per_dim
        self.context_dim = context_dim
        self.masks = build_masks(dim, self.hidden, params_per_dim, order)
        self.sizes = [dim] + self.hidden + [dim * params_per_dim]

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        n_layers = len(self.masks)
        for k, mask in enumerate(self.masks):
            last = k == n_layers - 1
            fan_in, fan_out = mask.shape
            weight = np.zeros((fan_in, fan_out)) if last else glorot_uniform(rng, fan_in, fan_out) * mask
            store.add(f"{self.name}.W{k}", weight)
            store.add(f"{self.name}.b{k}", np.zeros(fan_out))
        if self.context_dim:
            width = self.sizes[1]
            ctx = np.zeros((self.context_dim, width)) if n_layers == 1 else \
                glorot_uniform(rng, self.context_dim, width)
            store.add(f"{self.name}.C", ctx)
            store.add(f"{self.name}.feat_out", np.zeros((self.context_dim, self.sizes[-1])))

    def __call__(self, params: Params, w, context=None):
        wv = value_of(w)
        if wv.ndim != 2 or wv.shape[1] != self.dim:
            raise ConditionerError(f"[MADE] {self.name}: entrada {wv.shape}, J={self.dim}")
        if self.context_dim:
            if context is None or value_of(context).shape[-1] != self.context_dim:
                raise ConditionerError(f"[MADE] {self.name}: falta el contexto de {self.context_dim} columnas")
        h = w
        for k, mask in enumerate(self.masks):
            h = dc.matmul(h, params[f"{self.name}.W{k}"] * mask) + params[f"{self.name}.b{k}"]
            if k == 0 and self.context_dim:
                h = h + dc.matmul(context, params[f"{self.name}.C"])
            if k < len(self.masks) - 1:
                h = dc.relu(h)
        if self.context_dim:
            h = h + dc.matmul(context, params[f"{self.name}.feat_out"])
        return dc.reshape(h, (wv.shape[0], self.dim, self.params_per_dim))


def made_forward(w, x, net: MaskedMLP, params: Params):
    """Ψ (n, J, P) para entradas w y covariables x (x puede ser None)."""
    return net(params, w, context=x if net.context_dim else None)


def coupling_params(y_a, x, net: FCN, params: Params, n_transformed: int, params_per_dim: int):
    """
    Parámetros para transformar y_B a partir de y_A (y de x si se concatena).

    Returns:
        Arreglo (n, J-d, P)
    """
    inputs = y_a if x is None else dc.concat([y_a, x], axis=-1)
    out = net(params, inputs)
    return dc.reshape(out, (value_of(y_a).shape[0], n_transformed, params_per_dim))


# ---------------------------------------------------------------------------
# Efectos de covariables
# ---------------------------------------------------------------------------

def scale_features(x: np.ndarray, domain: np.ndarray, name: str = "features") -> np.ndarray:
    """Lleva x a [0, 1] según su dominio; recorta y avisa si se sale."""
    x = np.asarray(x, dtype=float)
    low, high = domain[:, 0], domain[:, 1]
    scaled = (x - low) / (high - low)
    outside = (scaled < 0.0) | (scaled > 1.0)
    if outside.any():
        logger.warning(f"[FeatureShift] {name}: {int(outside.sum())} valores fuera del dominio, se recortan")
        scaled = np.clip(scaled, 0.0, 1.0)
    return scaled


class FeatureShiftMap:
    """
    β(x) por dimensión de salida.

    Modo `linear`: β = x·W (+ b). Modo `bernstein`: β_j = Σ_u α(x̃_u)ᵀ ϑ_{u,j}
    con α la base de Bernstein de orden `order`; ϑ no se restringe.
    """

    def __init__(self, name: str, mode: str, n_features: int, n_outputs: int,
                 order: int = 6, domain: Optional[Sequence[Sequence[float]]] = None,
                 intercept: bool = False):
        if mode not in ("linear", "bernstein"):
            raise ConditionerError(f"[FeatureShift] modo desconocido: {mode}")
        if n_features < 1:
            raise ConditionerError("[FeatureShift] se necesita al menos una covariable")
        self.name = name
        self.mode = mode
        self.n_features = n_features
        self.n_outputs = n_outputs
        self.order = order
        self.intercept = intercept
        dom = np.asarray(domain if domain is not None else [[0.0, 1.0]] * n_features, dtype=float)
        if dom.shape != (n_features, 2) or np.any(dom[:, 1] <= dom[:, 0]):
            raise ConditionerError(f"[FeatureShift] dominio de covariables inválido: {dom.tolist()}")
        self.domain = dom

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        if self.mode == "linear":
            store.add(f"{self.name}.W", np.zeros((self.n_features, self.n_outputs)))
            if self.intercept:
                store.add(f"{self.name}.b", np.zeros(self.n_outputs))
        else:
            store.add(f"{self.name}.theta", np.zeros((self.n_features * (self.order + 1), self.n_outputs)))

    def design(self, x) -> np.ndarray:
        """Matriz de diseño en modo base: (n, U·(order+1))."""
        scaled = scale_features(x, self.domain, self.name)
        basis = value_of(bernstein_basis(scaled, self.order))
        return basis.reshape(scaled.shape[0], -1)

    def __call__(self, params: Params, x):
        x = np.asarray(value_of(x), dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ConditionerError(f"[FeatureShift] {self.name}: x {x.shape}, U={self.n_features}")
        if self.mode == "linear":
            out = dc.matmul(x, params[f"{self.name}.W"])
            if self.intercept:
                out = out + params[f"{self.name}.b"]
            return out
        return dc.matmul(self.design(x), params[f"{self.name}.theta"])


def feature_shift(x, shift_map: FeatureShiftMap, params: Params):
    return shift_map(params, x)


class FeatureCoefficientMap:
    """Coeficientes crudos de Bernstein por fila: raw(x) = raw₀ + x·W."""

    def __init__(self, name: str, n_features: int, dim: int, params_per_dim: int):
        self.name = name
        self.n_features = n_features
        self.dim = dim
        self.params_per_dim = params_per_dim

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(f"{self.name}.W", np.zeros((self.n_features, self.dim * self.params_per_dim)))

    def __call__(self, params: Params, x, base_raw):
        x = np.asarray(value_of(x), dtype=float)
        delta = dc.matmul(x, params[f"{self.name}.W"])
        delta = dc.reshape(delta, (x.shape[0], self.dim, self.params_per_dim))
        return delta + base_raw


def feature_theta(x, coef_map: FeatureCoefficientMap, params: Params, base_raw):
    return coef_map(params, x, base_raw)
