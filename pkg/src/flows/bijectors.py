"""
Bijectors - transformaciones invertibles con log-determinante exacto.

Funcionalidad:
- Polinomios de Bernstein monótonos con extrapolación lineal fuera de [l, u]
- Restricción de coeficientes (softmax con bordes [-3, 3] o softplus recursivo)
- Splines racionales cuadráticos (RQS) con colas identidad
- Desplazamiento, matriz triangular unitaria y composición (Chain)

Las funciones aceptan Var de diffcore o arreglos numpy, así el mismo código sirve
para entrenar y para evaluar. Los inversos trabajan solo con numpy.
"""

import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from ..core import diffcore as dc
from ..core.diffcore import value_of
from ..errors import BijectorError
from .roots import find_increasing_root

logger = logging.getLogger(__name__)

BOUNDARY = 3.0
# Con parámetros crudos nulos el polinomio es la identidad sobre este dominio
IDENTITY_BOUND = BOUNDARY + float(np.log(2.0))
MIN_INCREMENT = 1e-9
BASIS_EPS = 1e-14

RQS_MIN_BIN = 1e-3
RQS_MIN_DERIVATIVE = 1e-3
RQS_DEFAULT_BOUND = 4.0
# softplus(0 + offset) + min_derivative == 1
RQS_DERIVATIVE_OFFSET = float(np.log(np.expm1(1.0 - RQS_MIN_DERIVATIVE)))


def _as_input(x):
    return x if dc.is_var(x) else np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# Bernstein
# ---------------------------------------------------------------------------

def bernstein_constrain(raw):
    """
    Convierte M+2 parámetros crudos en M+1 coeficientes crecientes.

    ϑ₀ = -softplus(r₀) - 3, ϑ_M = softplus(r_{M+1}) + 3 y los incrementos
    interiores reparten Δ = ϑ_M - ϑ₀ con un softmax de r₁..r_M.
    """
    raw = _as_input(raw)
    rv = value_of(raw)
    if not np.all(np.isfinite(rv)):
        raise BijectorError("[Bernstein] parámetros crudos no finitos")
    order = rv.shape[-1] - 2
    if order < 1:
        raise BijectorError(f"[Bernstein] se necesitan al menos 3 parámetros crudos, hay {rv.shape[-1]}")

    first = -dc.softplus(raw[..., 0]) - BOUNDARY
    last = dc.softplus(raw[..., -1]) + BOUNDARY
    span = last - first
    weights = dc.softmax(raw[..., 1:-1], axis=-1)
    # piso relativo para que el softmax nunca deje un incremento nulo
    weights = weights * (1.0 - order * MIN_INCREMENT) + MIN_INCREMENT
    increments = dc.expand_dims(span, -1) * weights
    interior = dc.expand_dims(first, -1) + dc.cumsum(increments, axis=-1)[..., :-1]
    return dc.concat([dc.expand_dims(first, -1), interior, dc.expand_dims(last, -1)], axis=-1)


def bernstein_constrain_recursive(raw):
    """ϑ₀ = r₀, ϑ_k = ϑ_{k-1} + softplus(r_k). Usa M+1 parámetros crudos."""
    raw = _as_input(raw)
    rv = value_of(raw)
    if not np.all(np.isfinite(rv)):
        raise BijectorError("[Bernstein] parámetros crudos no finitos")
    if rv.shape[-1] < 2:
        raise BijectorError("[Bernstein] se necesitan al menos 2 parámetros crudos")
    first = raw[..., :1]
    steps = dc.softplus(raw[..., 1:])
    return dc.concat([first, first + dc.cumsum(steps, axis=-1)], axis=-1)


def bernstein_basis(t, order: int):
    """
    Base b_{i,M}(t) = C(M,i) t^i (1-t)^(M-i), evaluada en escala logarítmica.

    Equivale a Be_i(t)/(M+1) con Be_i la densidad Beta(i+1, M-i+1); la suma
    sobre i es 1.
    """
    t = _as_input(t)
    k = np.arange(order + 1, dtype=float)
    log_binom = gammaln(order + 1.0) - gammaln(k + 1.0) - gammaln(order - k + 1.0)
    tv = value_of(t)
    clipped = dc.where(tv < BASIS_EPS, BASIS_EPS, dc.where(tv > 1.0 - BASIS_EPS, 1.0 - BASIS_EPS, t))
    log_t = dc.expand_dims(dc.log(clipped), -1)
    log_1mt = dc.expand_dims(dc.log(1.0 - clipped), -1)
    return dc.exp(log_binom + k * log_t + (order - k) * log_1mt)


def bernstein_polynomial(t, theta):
    order = value_of(theta).shape[-1] - 1
    return dc.sum_(bernstein_basis(t, order) * theta, axis=-1)


def bernstein_polynomial_derivative(t, theta):
    """dh/dt usando la base de orden M-1 sobre las diferencias de coeficientes."""
    order = value_of(theta).shape[-1] - 1
    diffs = theta[..., 1:] - theta[..., :-1]
    return order * dc.sum_(bernstein_basis(t, order - 1) * diffs, axis=-1)


def _boundary_terms(theta):
    order = value_of(theta).shape[-1] - 1
    slope_low = order * (theta[..., 1] - theta[..., 0])
    slope_high = order * (theta[..., -1] - theta[..., -2])
    return theta[..., 0], theta[..., -1], slope_low, slope_high


def bernstein_forward(y, theta, low=0.0, high=1.0):
    """h(y); fuera de [low, high] continúa en línea recta con la pendiente del borde."""
    y = _as_input(y)
    theta = _as_input(theta)
    if value_of(theta).shape[-1] < 2:
        raise BijectorError("[Bernstein] el orden debe ser al menos 1")
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    t = (y - low) / (high - low)
    tv = value_of(t)
    start, end, slope_low, slope_high = _boundary_terms(theta)
    inner = bernstein_polynomial(t, theta)
    below = start + slope_low * t
    above = end + slope_high * (t - 1.0)
    return dc.where(tv < 0.0, below, dc.where(tv > 1.0, above, inner))


def bernstein_log_det(y, theta, low=0.0, high=1.0):
    """log dh/dy; constante en las zonas de extrapolación."""
    y = _as_input(y)
    theta = _as_input(theta)
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    t = (y - low) / (high - low)
    tv = value_of(t)
    _, _, slope_low, slope_high = _boundary_terms(theta)
    inner = bernstein_polynomial_derivative(t, theta)
    deriv = dc.where(tv < 0.0, slope_low, dc.where(tv > 1.0, slope_high, inner))
    dv = value_of(deriv)
    if not np.all(np.isfinite(dv)) or np.any(dv <= 0.0):
        raise BijectorError("[Bernstein] derivada no positiva: coeficientes no crecientes")
    return dc.log(deriv) - np.log(high - low)


def bernstein_inverse(z, theta, low=0.0, high=1.0, dimension: Optional[int] = None) -> np.ndarray:
    """
    Inversa de bernstein_forward.

    Dentro de [ϑ₀, ϑ_M] se busca la raíz en t ∈ [0, 1]; fuera se invierte la
    recta de extrapolación en forma cerrada.
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(np.diff(theta, axis=-1) <= 0):
        raise BijectorError("[Bernstein] los coeficientes deben ser estrictamente crecientes")
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    shape = np.broadcast_shapes(z.shape, theta.shape[:-1], low.shape, high.shape)
    z_flat = np.broadcast_to(z, shape).ravel()
    theta_flat = np.broadcast_to(theta, shape + theta.shape[-1:]).reshape(-1, theta.shape[-1])
    low_flat = np.broadcast_to(low, shape).ravel()
    high_flat = np.broadcast_to(high, shape).ravel()

    start, end, slope_low, slope_high = _boundary_terms(theta_flat)
    t = np.empty_like(z_flat)
    below = z_flat < start
    above = z_flat > end
    inside = ~(below | above)
    t[below] = (z_flat[below] - start[below]) / slope_low[below]
    t[above] = 1.0 + (z_flat[above] - end[above]) / slope_high[above]

    if inside.any():
        theta_in = theta_flat[inside]
        z_in = z_flat[inside]

        def residual(x, rows):
            return bernstein_polynomial(x, theta_in[rows]) - z_in[rows]

        t[inside] = find_increasing_root(residual, np.zeros(z_in.size), np.ones(z_in.size),
                                         dimension=dimension)
    return (low_flat + t * (high_flat - low_flat)).reshape(shape)


# ---------------------------------------------------------------------------
# Splines racionales cuadráticos
# ---------------------------------------------------------------------------

class RQSParams:
    """
    Parámetros de un spline con K bins en [-B, B].

    widths y heights suman 2B; derivatives tiene K+1 valores positivos, con los
    extremos fijos en 1 para empalmar con las colas identidad.
    """

    def __init__(self, widths, heights, derivatives, bound: float = RQS_DEFAULT_BOUND):
        self.widths = _as_input(widths)
        self.heights = _as_input(heights)
        self.derivatives = _as_input(derivatives)
        self.bound = float(bound)
        wv, hv, dv = value_of(self.widths), value_of(self.heights), value_of(self.derivatives)
        if wv.shape[-1] + 1 != dv.shape[-1] or wv.shape != hv.shape:
            raise BijectorError("[RQS] formas inconsistentes entre anchos, alturas y derivadas")
        if np.any(wv <= 0) or np.any(hv <= 0) or np.any(dv <= 0):
            raise BijectorError("[RQS] anchos, alturas y derivadas deben ser positivos")
        total = 2.0 * self.bound
        if not (np.allclose(wv.sum(-1), total) and np.allclose(hv.sum(-1), total)):
            raise BijectorError("[RQS] anchos y alturas deben sumar 2B")

    @property
    def bins(self) -> int:
        return value_of(self.widths).shape[-1]

    def knots(self, sizes):
        """Posiciones de los nudos con extremos exactos en ±B."""
        lead = dc.expand_dims(np.full(value_of(sizes).shape[:-1], -self.bound), -1)
        tail = dc.expand_dims(np.full(value_of(sizes).shape[:-1], self.bound), -1)
        inner = -self.bound + dc.cumsum(sizes, axis=-1)[..., :-1]
        return dc.concat([lead, inner, tail], axis=-1)


def rqs_constrain(raw, bound: float = RQS_DEFAULT_BOUND,
                  min_bin: float = RQS_MIN_BIN, min_derivative: float = RQS_MIN_DERIVATIVE) -> RQSParams:
    """3K-1 parámetros crudos -> RQSParams (K anchos, K alturas, K-1 derivadas internas)."""
    raw = _as_input(raw)
    size = value_of(raw).shape[-1]
    if (size + 1) % 3 != 0:
        raise BijectorError(f"[RQS] {size} parámetros crudos no corresponden a 3K-1")
    bins = (size + 1) // 3
    if min_bin * bins >= 1.0:
        raise BijectorError("[RQS] el ancho mínimo de bin es demasiado grande")
    total = 2.0 * bound
    widths = total * (min_bin + (1.0 - min_bin * bins) * dc.softmax(raw[..., :bins], axis=-1))
    heights = total * (min_bin + (1.0 - min_bin * bins) * dc.softmax(raw[..., bins:2 * bins], axis=-1))
    interior = min_derivative + dc.softplus(raw[..., 2 * bins:] + RQS_DERIVATIVE_OFFSET)
    ones = np.ones(value_of(raw).shape[:-1] + (1,))
    derivatives = dc.concat([ones, interior, ones], axis=-1)
    return RQSParams(widths, heights, derivatives, bound)


def _broadcast_like(param, shape):
    pv = value_of(param)
    target = tuple(shape) + pv.shape[-1:]
    if pv.shape == target:
        return param
    return param + np.zeros(target)


def _rqs_bin_terms(p: RQSParams, shape, locate_on: str, x_values: np.ndarray):
    widths = _broadcast_like(p.widths, shape)
    heights = _broadcast_like(p.heights, shape)
    derivs = _broadcast_like(p.derivatives, shape)
    cumw = p.knots(widths)
    cumh = p.knots(heights)
    bin_w = cumw[..., 1:] - cumw[..., :-1]
    bin_h = cumh[..., 1:] - cumh[..., :-1]
    knots = value_of(cumw if locate_on == "x" else cumh)
    idx = np.sum(x_values[..., None] >= knots[..., 1:-1], axis=-1)[..., None]

    def pick(a):
        return dc.take_along_axis(a, idx)[..., 0]

    return (pick(cumw), pick(bin_w), pick(cumh), pick(bin_h),
            pick(derivs[..., :-1]), pick(derivs[..., 1:]))


def rqs_forward_and_log_det(y, p: RQSParams):
    y = _as_input(y)
    yv = value_of(y)
    inside = (yv >= -p.bound) & (yv <= p.bound)
    x = dc.where(inside, y, 0.0)
    x_k, w_k, y_k, h_k, d_k, d_k1 = _rqs_bin_terms(p, yv.shape, "x", value_of(x))
    slope = h_k / w_k
    xi = (x - x_k) / w_k
    xi_1m = xi * (1.0 - xi)
    numerator = h_k * (slope * xi * xi + d_k * xi_1m)
    denominator = slope + (d_k + d_k1 - 2.0 * slope) * xi_1m
    out = y_k + numerator / denominator
    deriv_num = slope * slope * (d_k1 * xi * xi + 2.0 * slope * xi_1m + d_k * (1.0 - xi) * (1.0 - xi))
    log_det = dc.log(deriv_num) - 2.0 * dc.log(denominator)
    return dc.where(inside, out, y), dc.where(inside, log_det, np.zeros(yv.shape))


def rqs_forward(y, p: RQSParams):
    return rqs_forward_and_log_det(y, p)[0]


def rqs_log_det(y, p: RQSParams):
    return rqs_forward_and_log_det(y, p)[1]


def rqs_inverse(z, p: RQSParams) -> np.ndarray:
    """Inversa analítica por bin (raíz de la cuadrática)."""
    z = np.asarray(z, dtype=float)
    plain = RQSParams.__new__(RQSParams)
    plain.widths = value_of(p.widths)
    plain.heights = value_of(p.heights)
    plain.derivatives = value_of(p.derivatives)
    plain.bound = p.bound
    inside = (z >= -p.bound) & (z <= p.bound)
    zin = np.where(inside, z, 0.0)
    x_k, w_k, y_k, h_k, d_k, d_k1 = _rqs_bin_terms(plain, z.shape, "y", zin)
    slope = h_k / w_k
    rel = zin - y_k
    a = rel * (d_k + d_k1 - 2.0 * slope) + h_k * (slope - d_k)
    b = h_k * d_k - rel * (d_k + d_k1 - 2.0 * slope)
    c = -slope * rel
    disc = np.maximum(b * b - 4.0 * a * c, 0.0)
    root = (2.0 * c) / (-b - np.sqrt(disc))
    out = root * w_k + x_k
    return np.where(inside, out, z)


# ---------------------------------------------------------------------------
# Triangular y desplazamiento
# ---------------------------------------------------------------------------

def lambda_entries_index(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Índices (fila, columna) de las entradas estrictamente inferiores, por filas."""
    return np.tril_indices(dim, -1)


def lambda_matrix(entries, dim: int) -> np.ndarray:
    """Arma Λ (diagonal unitaria) a partir de sus entradas libres."""
    entries = np.asarray(entries, dtype=float)
    rows, cols = lambda_entries_index(dim)
    if entries.shape[-1] != rows.size:
        raise BijectorError(f"[Triangular] se esperaban {rows.size} entradas, hay {entries.shape[-1]}")
    out = np.zeros(entries.shape[:-1] + (dim, dim))
    out[..., np.arange(dim), np.arange(dim)] = 1.0
    out[..., rows, cols] = entries
    return out


def lambda_entries(matrix) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    dim = matrix.shape[-1]
    if matrix.shape[-2] != dim:
        raise BijectorError("[Triangular] Λ debe ser cuadrada")
    if not np.allclose(np.diagonal(matrix, axis1=-2, axis2=-1), 1.0):
        raise BijectorError("[Triangular] Λ debe tener diagonal unitaria")
    if np.any(matrix[..., np.triu_indices(dim, 1)[0], np.triu_indices(dim, 1)[1]] != 0):
        raise BijectorError("[Triangular] Λ debe ser triangular inferior")
    rows, cols = lambda_entries_index(dim)
    return matrix[..., rows, cols]


def triangular_apply(w, entries, dim: int):
    """z_j = w_j + Σ_{i<j} λ_ji w_i con Λ dada por sus entradas libres."""
    w = _as_input(w)
    if value_of(w).shape[-1] != dim:
        raise BijectorError(f"[Triangular] dimensión {value_of(w).shape[-1]} != {dim}")
    if value_of(entries).shape[-1] != dim * (dim - 1) // 2:
        raise BijectorError("[Triangular] número de entradas incorrecto")
    columns = [w[..., 0:1]]
    for j in range(1, dim):
        start = j * (j - 1) // 2
        row = entries[..., start:start + j]
        columns.append(w[..., j:j + 1] + dc.sum_(row * w[..., :j], axis=-1, keepdims=True))
    return dc.concat(columns, axis=-1)


def triangular_solve(z, entries, dim: int) -> np.ndarray:
    """Inversa de triangular_apply por sustitución hacia adelante."""
    z = np.asarray(z, dtype=float)
    entries = np.asarray(entries, dtype=float)
    w = np.empty_like(z)
    for j in range(dim):
        start = j * (j - 1) // 2
        acc = np.sum(entries[..., start:start + j] * w[..., :j], axis=-1) if j else 0.0
        w[..., j] = z[..., j] - acc
    return w


def triangular_combine(w, lam) -> np.ndarray:
    """z = Λ w̃ para una Λ completa (J×J); el log-det de esta etapa es 0."""
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != w.shape[-1]:
        raise BijectorError(f"[Triangular] Λ es {lam.shape[-1]}x{lam.shape[-1]} y w tiene {w.shape[-1]}")
    return triangular_apply(w, lambda_entries(lam), w.shape[-1])


def shift_apply(h, beta):
    return h + beta


def shift_inverse(z, beta):
    return z - beta


# ---------------------------------------------------------------------------
# Objetos bijector
# ---------------------------------------------------------------------------

class Bijector(ABC):
    """
    Interfaz común: forward, inverse y log-det por coordenada.

    El log-det devuelto tiene la forma de la entrada; el total de una
    observación es la suma sobre el último eje.
    """

    @abstractmethod
    def forward(self, y):
        pass

    @abstractmethod
    def inverse(self, z) -> np.ndarray:
        pass

    @abstractmethod
    def forward_log_det(self, y):
        pass

    def __str__(self) -> str:
        return type(self).__name__


class Bernstein(Bijector):
    def __init__(self, theta, low=0.0, high=1.0):
        self.theta = _as_input(theta)
        self.low = low
        self.high = high

    @classmethod
    def from_raw(cls, raw, low=0.0, high=1.0, constraint: str = "softmax") -> "Bernstein":
        fn = bernstein_constrain if constraint == "softmax" else bernstein_constrain_recursive
        return cls(fn(raw), low, high)

    @property
    def order(self) -> int:
        return value_of(self.theta).shape[-1] - 1

    def forward(self, y):
        return bernstein_forward(y, self.theta, self.low, self.high)

    def inverse(self, z):
        return bernstein_inverse(z, value_of(self.theta), self.low, self.high)

    def forward_log_det(self, y):
        return bernstein_log_det(y, self.theta, self.low, self.high)


class RQS(Bijector):
    def __init__(self, params: RQSParams):
        self.params = params

    def forward(self, y):
        return rqs_forward(y, self.params)

    def inverse(self, z):
        return rqs_inverse(z, self.params)

    def forward_log_det(self, y):
        return rqs_log_det(y, self.params)


class Shift(Bijector):
    def __init__(self, beta):
        self.beta = _as_input(beta)

    def forward(self, y):
        return shift_apply(y, self.beta)

    def inverse(self, z):
        return shift_inverse(np.asarray(z, dtype=float), value_of(self.beta))

    def forward_log_det(self, y):
        return np.zeros(np.broadcast_shapes(value_of(y).shape, value_of(self.beta).shape))


class TriangularLinear(Bijector):
    """Λ con diagonal unitaria; opera sobre el último eje."""

    def __init__(self, entries, dim: int):
        self.entries = _as_input(entries)
        self.dim = dim

    @classmethod
    def from_matrix(cls, matrix) -> "TriangularLinear":
        matrix = np.asarray(matrix, dtype=float)
        return cls(lambda_entries(matrix), matrix.shape[-1])

    @property
    def matrix(self) -> np.ndarray:
        return lambda_matrix(value_of(self.entries), self.dim)

    def forward(self, y):
        return triangular_apply(y, self.entries, self.dim)

    def inverse(self, z):
        return triangular_solve(z, value_of(self.entries), self.dim)

    def forward_log_det(self, y):
        return np.zeros(value_of(y).shape)


class Chain(Bijector):
    """Composición h_K ∘ ... ∘ h_1; el primero de la lista se aplica primero."""

    def __init__(self, bijectors: Sequence[Bijector]):
        self.bijectors: List[Bijector] = list(bijectors)

    def forward(self, y):
        for b in self.bijectors:
            y = b.forward(y)
        return y

    def inverse(self, z):
        for b in reversed(self.bijectors):
            z = b.inverse(z)
        return z

    def forward_log_det(self, y):
        total = np.zeros(value_of(y).shape)
        for b in self.bijectors:
            total = total + b.forward_log_det(y)
            y = b.forward(y)
        return total


def chain(bijectors: Sequence[Bijector]) -> Chain:
    return Chain(bijectors)
