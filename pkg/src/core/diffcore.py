"""
diffcore - Motor mínimo de gradientes en modo reverso.

Funcionalidad:
- Tape: registra cada operación (opcode, índices de entrada, derivadas locales)
  en orden topológico y evalúa su valor de forma inmediata
- Var: manejador de un nodo de la cinta con operadores aritméticos
- ParamStore: vector plano de parámetros con porciones nombradas y gradientes
- Primitivas (exp, log, softplus, erf, matmul, sum, where, ...) que aceptan
  tanto Var como np.ndarray; sin ninguna Var la operación es numpy puro

Los valores de los nodos son arreglos de numpy y las operaciones escalares se
aplican elemento a elemento. Un escalar es simplemente un arreglo 0-d.
"""

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from ..errors import DomainError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Var", np.ndarray, float]
Vjp = Callable[[np.ndarray], np.ndarray]

LOG_2PI = float(np.log(2.0 * np.pi))


class Node:
    """Registro de una operación en la cinta."""

    __slots__ = ("op", "inputs", "vjps", "value")

    def __init__(self, op: str, inputs: Tuple[int, ...], vjps: Tuple[Vjp, ...], value: np.ndarray):
        self.op = op
        self.inputs = inputs
        self.vjps = vjps
        self.value = value


class Tape:
    """
    Cinta de gradientes.

    Cada nodo guarda sus entradas y las funciones que propagan el gradiente
    hacia ellas. Como los nodos se agregan al ejecutar, el orden de la lista ya
    es topológico y el paso hacia atrás solo la recorre al revés.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def values(self) -> List[np.ndarray]:
        return [node.value for node in self.nodes]

    def record(self, op: str, inputs: Sequence[int], value: np.ndarray,
               vjps: Sequence[Vjp] = ()) -> int:
        """Agrega un nodo ya evaluado y devuelve su identificador."""
        for idx in inputs:
            if idx >= len(self.nodes):
                raise TapeError(f"[Tape] la entrada {idx} no precede al nodo {len(self.nodes)}")
        self.nodes.append(Node(op, tuple(inputs), tuple(vjps), np.asarray(value, dtype=float)))
        return len(self.nodes) - 1

    def leaf(self, value, op: str = "leaf") -> "Var":
        return Var(self, self.record(op, (), np.array(value, dtype=float, copy=True)))

    def constant(self, value) -> "Var":
        """Hoja sin parámetro asociado; su gradiente no se guarda en ningún lado."""
        return self.leaf(value, op="const")

    def backward(self, loss: "Var", store: Optional["ParamStore"] = None) -> Dict[int, np.ndarray]:
        """
        Propaga d(loss)/d(nodo) hasta las hojas.

        Args:
            loss: nodo escalar de esta cinta
            store: si se indica, sus gradientes quedan escritos en store.grads

        Returns:
            Gradientes por identificador de hoja
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("[Tape] la pérdida no pertenece a esta cinta")
        if np.size(loss.value) != 1:
            raise TapeError(f"[Tape] la pérdida debe ser escalar, forma {np.shape(loss.value)}")

        grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        leaf_grads: Dict[int, np.ndarray] = {}
        for nid in range(loss.id, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            if not node.inputs:
                leaf_grads[nid] = g
                continue
            for inp, vjp in zip(node.inputs, node.vjps):
                contrib = vjp(g)
                if inp in grads:
                    grads[inp] = grads[inp] + contrib
                else:
                    grads[inp] = contrib

        logger.debug(f"[Tape] backward desde el nodo {loss.id}: {len(leaf_grads)} hojas con gradiente")
        if store is not None:
            store.collect(self, leaf_grads)
        return leaf_grads


class Var:
    """Referencia a un nodo de una cinta."""

    __slots__ = ("tape", "id")
    # numpy devuelve NotImplemented y Python usa los operadores reflejados
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# Utilidades internas
# ---------------------------------------------------------------------------

def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x) -> np.ndarray:
    """Valor numpy de una Var o de un arreglo."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=float)


def _tape_of(args: Iterable) -> Optional[Tape]:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("[Tape] operandos de cintas distintas")
    return tape


def _next_id(args: Iterable) -> Optional[int]:
    tape = _tape_of(args)
    return len(tape.nodes) if tape is not None else None


def _emit(op: str, args: Sequence, value: np.ndarray, vjps: Sequence[Optional[Vjp]]):
    """Crea el nodo si alguna entrada es Var; si no, devuelve el valor numpy."""
    tape = _tape_of(args)
    if tape is None:
        return value
    ids, fns = [], []
    for a, fn in zip(args, vjps):
        if isinstance(a, Var):
            ids.append(a.id)
            fns.append(fn)
    return Var(tape, tape.record(op, ids, value, fns))


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Suma el gradiente sobre los ejes que se expandieron por broadcasting."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Operaciones binarias
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    return _emit("add", (a, b), av + bv, (
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    ))


def sub(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    return _emit("sub", (a, b), av - bv, (
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    ))


def mul(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    return _emit("mul", (a, b), av * bv, (
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    ))


def div(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    if np.any(bv == 0):
        raise DomainError("div", _next_id((a, b)), "divisor cero")
    out = av / bv
    return _emit("div", (a, b), out, (
        lambda g: _unbroadcast(g / bv, av.shape),
        lambda g: _unbroadcast(-g * out / bv, bv.shape),
    ))


def neg(a: ArrayLike):
    av = value_of(a)
    return _emit("neg", (a,), -av, (lambda g: -g,))


def power(a: ArrayLike, exponent: float):
    """a**p con exponente constante."""
    if isinstance(exponent, Var):
        raise TapeError("[Tape] power solo admite exponente constante")
    av = value_of(a)
    p = float(exponent)
    integral = p == int(p)
    if p < 0.0 and np.any(av == 0):
        raise DomainError("power", _next_id((a,)), "base cero con exponente negativo")
    if not integral and np.any(av < 0):
        raise DomainError("power", _next_id((a,)), "base negativa con exponente no entero")
    if p < 1.0 and not integral and np.any(av == 0):
        raise DomainError("power", _next_id((a,)), "base cero, derivada infinita")
    return _emit("power", (a,), av ** p, (lambda g: g * p * av ** (p - 1.0),))


def matmul(a: ArrayLike, b: ArrayLike):
    """Producto matricial 2-D: (n, k) @ (k, m)."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise TapeError(f"[Tape] matmul espera matrices 2-D, recibió {av.shape} y {bv.shape}")
    return _emit("matmul", (a, b), av @ bv, (
        lambda g: g @ bv.T,
        lambda g: av.T @ g,
    ))


# ---------------------------------------------------------------------------
# Operaciones unarias elemento a elemento
# ---------------------------------------------------------------------------

def exp(a: ArrayLike):
    av = value_of(a)
    out = np.exp(av)
    return _emit("exp", (a,), out, (lambda g: g * out,))


def log(a: ArrayLike):
    av = value_of(a)
    if np.any(av <= 0):
        raise DomainError("log", _next_id((a,)), "argumento no positivo")
    return _emit("log", (a,), np.log(av), (lambda g: g / av,))


def sqrt(a: ArrayLike):
    av = value_of(a)
    if np.any(av <= 0):
        raise DomainError("sqrt", _next_id((a,)), "argumento no positivo")
    out = np.sqrt(av)
    return _emit("sqrt", (a,), out, (lambda g: 0.5 * g / out,))


def tanh(a: ArrayLike):
    out = np.tanh(value_of(a))
    return _emit("tanh", (a,), out, (lambda g: g * (1.0 - out * out),))


def relu(a: ArrayLike):
    av = value_of(a)
    return _emit("relu", (a,), np.maximum(av, 0.0), (lambda g: g * (av > 0),))


def softplus(a: ArrayLike):
    av = value_of(a)
    out = np.log1p(np.exp(-np.abs(av))) + np.maximum(av, 0.0)
    return _emit("softplus", (a,), out, (lambda g: g * special.expit(av),))


def sigmoid(a: ArrayLike):
    out = special.expit(value_of(a))
    return _emit("sigmoid", (a,), out, (lambda g: g * out * (1.0 - out),))


def erf(a: ArrayLike):
    av = value_of(a)
    return _emit("erf", (a,), special.erf(av), (
        lambda g: g * (2.0 / np.sqrt(np.pi)) * np.exp(-av * av),
    ))


# ---------------------------------------------------------------------------
# Operaciones estructurales
# ---------------------------------------------------------------------------

def sum_(a: ArrayLike, axis=None, keepdims: bool = False):
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _emit("sum", (a,), out, (vjp,))


def mean(a: ArrayLike, axis=None, keepdims: bool = False):
    av = value_of(a)
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return div(sum_(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a: ArrayLike, shape):
    av = value_of(a)
    return _emit("reshape", (a,), av.reshape(shape), (lambda g: np.reshape(g, av.shape),))


def expand_dims(a: ArrayLike, axis: int):
    av = value_of(a)
    return reshape(a, np.expand_dims(av, axis).shape)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a: ArrayLike, index):
    av = value_of(a)
    basic = _is_basic_index(index)

    def vjp(g):
        out = np.zeros_like(av)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return out

    return _emit("getitem", (a,), av[index], (vjp,))


def concat(items: Sequence[ArrayLike], axis: int = -1):
    values = [value_of(x) for x in items]
    sizes = [v.shape[axis] for v in values]
    bounds = np.cumsum(sizes)[:-1]

    def make_vjp(k):
        return lambda g: np.split(g, bounds, axis=axis)[k]

    return _emit("concat", tuple(items), np.concatenate(values, axis=axis),
                 tuple(make_vjp(k) for k in range(len(items))))


def stack(items: Sequence[ArrayLike], axis: int = -1):
    return concat([expand_dims(x, axis) for x in items], axis=axis)


def where(condition, a: ArrayLike, b: ArrayLike):
    """Selección por máscara constante; el gradiente solo va a la rama elegida."""
    cond = np.asarray(condition, dtype=bool)
    av, bv = value_of(a), value_of(b)
    return _emit("where", (a, b), np.where(cond, av, bv), (
        lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape),
        lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape),
    ))


def cumsum(a: ArrayLike, axis: int = -1):
    av = value_of(a)
    return _emit("cumsum", (a,), np.cumsum(av, axis=axis), (
        lambda g: np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),
    ))


def take_along_axis(a: ArrayLike, indices: np.ndarray, axis: int = -1):
    """Recolección a lo largo del último eje con índices enteros constantes."""
    if axis not in (-1, np.ndim(value_of(a)) - 1):
        raise TapeError("[Tape] take_along_axis solo soporta el último eje")
    av = value_of(a)
    idx = np.asarray(indices, dtype=np.intp)
    k = av.shape[-1]

    def vjp(g):
        onehot = idx[..., None] == np.arange(k)
        full = np.sum(onehot * np.asarray(g)[..., None], axis=-2)
        return _unbroadcast(full, av.shape)

    return _emit("take", (a,), np.take_along_axis(av, idx, axis=-1), (vjp,))


# ---------------------------------------------------------------------------
# Compuestas
# ---------------------------------------------------------------------------

def softmax(a: ArrayLike, axis: int = -1):
    shift = np.max(value_of(a), axis=axis, keepdims=True)
    e = exp(a - shift)
    return e / sum_(e, axis=axis, keepdims=True)


def normal_log_pdf(z: ArrayLike):
    return -0.5 * z * z - 0.5 * LOG_2PI


def normal_cdf(z: ArrayLike):
    return 0.5 * (1.0 + erf(z * (1.0 / np.sqrt(2.0))))


def logistic_log_pdf(z: ArrayLike):
    return -z - 2.0 * softplus(-z)


# ---------------------------------------------------------------------------
# Almacén de parámetros
# ---------------------------------------------------------------------------

class ParamStore:
    """
    Vector plano de parámetros entrenables con porciones nombradas.

    Las porciones son contiguas y disjuntas. Cada porción conserva su forma para
    que las capas reciban matrices y no índices. `bind` crea una hoja por
    porción en la cinta y `collect` devuelve sus gradientes al vector plano.
    """

    def __init__(self):
        self.values = np.zeros(0)
        self.grads = np.zeros(0)
        self.slices: Dict[str, Tuple[int, int, Tuple[int, ...]]] = {}
        self._bound: Optional[Tuple[Tape, Dict[str, int]]] = None

    def __len__(self) -> int:
        return int(self.values.size)

    def __contains__(self, name: str) -> bool:
        return name in self.slices

    def add(self, name: str, init) -> None:
        if name in self.slices:
            raise KeyError(f"[ParamStore] porción duplicada: {name}")
        init = np.asarray(init, dtype=float)
        start = self.values.size
        self.values = np.concatenate([self.values, init.ravel()])
        self.grads = np.zeros_like(self.values)
        self.slices[name] = (start, start + init.size, tuple(init.shape))

    def get(self, name: str) -> np.ndarray:
        start, stop, shape = self.slices[name]
        return self.values[start:stop].reshape(shape)

    def set(self, name: str, value) -> None:
        start, stop, shape = self.slices[name]
        value = np.asarray(value, dtype=float)
        if value.shape != shape:
            raise ValueError(f"[ParamStore] forma {value.shape} no coincide con {shape} en {name}")
        self.values[start:stop] = value.ravel()

    def arrays(self) -> Dict[str, np.ndarray]:
        """Vistas numpy de cada porción (camino sin cinta)."""
        return {name: self.get(name) for name in self.slices}

    def bind(self, tape: Tape) -> Dict[str, Var]:
        """Registra una hoja por porción y devuelve las Var correspondientes."""
        out: Dict[str, Var] = {}
        ids: Dict[str, int] = {}
        for name in self.slices:
            var = tape.leaf(self.get(name), op=f"param:{name}")
            out[name] = var
            ids[name] = var.id
        self._bound = (tape, ids)
        return out

    def collect(self, tape: Tape, leaf_grads: Dict[int, np.ndarray]) -> None:
        self.grads = np.zeros_like(self.values)
        if self._bound is None or self._bound[0] is not tape:
            return
        for name, nid in self._bound[1].items():
            g = leaf_grads.get(nid)
            if g is not None:
                start, stop, _ = self.slices[name]
                self.grads[start:stop] = np.asarray(g).ravel()

    def snapshot(self) -> np.ndarray:
        return self.values.copy()

    def restore(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ValueError("[ParamStore] el snapshot no coincide con el almacén")
        self.values = values.copy()

    def to_dict(self) -> Dict[str, object]:
        return {
            "slices": {name: [s, e, list(shape)] for name, (s, e, shape) in self.slices.items()},
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "ParamStore":
        store = cls()
        store.values = np.asarray(payload["values"], dtype=float)
        store.grads = np.zeros_like(store.values)
        store.slices = {
            name: (int(s), int(e), tuple(int(d) for d in shape))
            for name, (s, e, shape) in payload["slices"].items()
        }
        return store
