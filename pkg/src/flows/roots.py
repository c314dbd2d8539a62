"""
Búsqueda de raíces vectorizada para funciones monótonas crecientes.

Usa el método de Chandrupatla de scipy (optimize.elementwise.find_root) y, para
los elementos que no cumplen la tolerancia, una bisección de respaldo.
"""

import logging
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import elementwise

from ..errors import RootFindingError

logger = logging.getLogger(__name__)

# f(x, filas) -> residuo; filas indexa los datos propios de cada elemento
RowFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

F_TOL = 1e-9
MAX_ITER = 100


def expand_bracket(func: RowFunction, low: np.ndarray, high: np.ndarray, rows: np.ndarray,
                   factor: float = 2.0, max_expansions: int = 60,
                   dimension: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Ensancha [low, high] geométricamente hasta que f(low) <= 0 <= f(high)."""
    low = low.copy()
    high = high.copy()
    width = np.maximum(high - low, 1.0)
    for _ in range(max_expansions):
        f_low = func(low, rows)
        f_high = func(high, rows)
        bad_low = f_low > 0
        bad_high = f_high < 0
        if not (bad_low.any() or bad_high.any()):
            return low, high
        low[bad_low] -= width[bad_low]
        high[bad_high] += width[bad_high]
        width *= factor
    raise RootFindingError("[Roots] no se encontró un intervalo con cambio de signo", dimension)


def _bisect(func: RowFunction, low: np.ndarray, high: np.ndarray, rows: np.ndarray,
            tol: float, max_iter: int = 200) -> np.ndarray:
    low = low.copy()
    high = high.copy()
    mid = 0.5 * (low + high)
    for _ in range(max_iter):
        mid = 0.5 * (low + high)
        f_mid = func(mid, rows)
        if np.all(np.abs(f_mid) < tol):
            break
        go_right = f_mid < 0
        low = np.where(go_right, mid, low)
        high = np.where(go_right, high, mid)
    return mid


def find_increasing_root(func: RowFunction, low, high, tol: float = F_TOL,
                         max_iter: int = MAX_ITER, dimension: Optional[int] = None) -> np.ndarray:
    """
    Resuelve func(x, filas) = 0 elemento a elemento.

    Args:
        func: función creciente en x; recibe también los índices de fila de
            cada elemento activo para buscar sus propios parámetros
        low, high: intervalo inicial por elemento
        tol: tolerancia sobre |f|
        max_iter: iteraciones de Chandrupatla
        dimension: dimensión de la respuesta, solo para el mensaje de error

    Returns:
        Raíces con la forma de low/high
    """
    low, high = np.broadcast_arrays(np.asarray(low, dtype=float), np.asarray(high, dtype=float))
    shape = low.shape
    low = low.ravel().copy()
    high = high.ravel().copy()
    if low.size == 0:
        return np.zeros(shape)
    rows = np.arange(low.size)

    low, high = expand_bracket(func, low, high, rows, dimension=dimension)

    def residual(x, r):
        return func(x, np.asarray(r).astype(np.intp))

    res = elementwise.find_root(
        residual,
        (low, high),
        args=(rows.astype(float),),
        tolerances={"fatol": tol * 1e-3},
        maxiter=max_iter,
    )
    x = np.asarray(res.x, dtype=float).reshape(-1)
    f_x = func(x, rows) if x.size else x
    bad = ~np.isfinite(x) | ~(np.abs(f_x) < tol)
    if bad.any():
        logger.debug(f"[Roots] {int(bad.sum())} elementos pasan a bisección")
        x[bad] = _bisect(func, low[bad], high[bad], rows[bad], tol)
        still = np.abs(func(x[bad], rows[bad])) >= tol
        if still.any():
            raise RootFindingError(
                f"[Roots] {int(still.sum())} elementos sin converger", dimension)
    return x.reshape(shape)
