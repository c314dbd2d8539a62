"""Utilidades para las pruebas numéricas."""

import numpy as np

from src.core.diffcore import Tape
from src.flows.specs import ModelSpec


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Diferencias centrales de una función escalar de un arreglo."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        up = f(x)
        x[idx] = old - eps
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def tape_grad(f, x: np.ndarray) -> np.ndarray:
    """Gradiente de f en x usando la cinta; f recibe una Var y devuelve un escalar."""
    tape = Tape()
    var = tape.leaf(x)
    grads = tape.backward(f(var))
    return grads[var.id]


def perturb(model, scale: float = 0.3, seed: int = 0) -> None:
    """Parámetros aleatorios para salir de la identidad inicial."""
    rng = np.random.default_rng(seed)
    model.store.values = model.store.values + scale * rng.standard_normal(len(model.store))


def small_spec(kind: str, **overrides) -> ModelSpec:
    base = dict(kind=kind, dim=2, n_features=1, marginal_order=5, flow_order=5, bins=4,
                hidden=[8, 8], feature_hidden=[4], context_hidden=[4], mvn_hidden=[4],
                marginal_domain=[(-3.0, 3.0), (-3.0, 3.0)], feature_domain=[(0.0, 1.0)])
    base.update(overrides)
    return ModelSpec(**base)
