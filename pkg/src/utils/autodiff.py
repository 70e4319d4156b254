"""
Diferenciación Automática en Modo Reverso - Módulo de Utilidades
================================================================

Este módulo implementa un motor mínimo de diferenciación automática en modo
reverso sobre tensores densos de punto flotante de 64 bits. El grafo se
construye al vuelo (define-by-run) en cada lote y se descarta después del
paso hacia atrás.

Funcionalidades principales:
- Nodos inmutables (Tensor) y parámetros con nombre (ParamTensor)
- Primitivas: matmul, suma/resta con broadcasting, producto elemento a elemento,
  ReLU, sum, mean, square, log, exp, gather, take, concat, reshape,
  log_softmax estable con máscara y stop_gradient
- Detección de NaN/Inf en cada nodo hacia adelante y en cada gradiente local
- Detección de grafos mutados (parámetros actualizados entre forward y backward)

Clases principales:
- Tensor: Nodo del grafo de cómputo
- ParamTensor: Parámetro entrenable o congelado con nombre

Ejemplo de uso:
    w = ParamTensor('w', [1.0, 2.0])
    loss = sum_(square(w))
    grads = backward(loss)
    # grads = {'w': array([2., 4.])}

Versión: 1.0.0
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GraphError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def _check_finite(value: np.ndarray, op: str, mask: Optional[np.ndarray] = None):
    checked = value if mask is None else value[mask]
    if not np.all(np.isfinite(checked)):
        raise NonFiniteError(f"Valor no finito producido por la operación '{op}'")


class Tensor:
    """
    Nodo del grafo de cómputo

    Cada nodo guarda su valor hacia adelante (de solo lectura), la operación
    que lo produjo, los nodos de entrada y la función que calcula los
    gradientes locales respecto a cada entrada.

    Atributos:
        value (np.ndarray): Valor calculado en el paso hacia adelante
        op (str): Nombre de la primitiva que produjo el nodo
        parents (tuple): Nodos de entrada
        requires_grad (bool): Si algún parámetro entrenable alcanza este nodo
    """

    __slots__ = ('value', 'op', 'parents', '_backward', 'requires_grad', '_versions')

    def __init__(self, value, op: str = 'const', parents: Sequence['Tensor'] = (),
                 backward: Optional[BackwardFn] = None, requires_grad: bool = False,
                 copy: bool = True):
        self.value = _freeze(np.array(value, dtype=DTYPE) if copy else np.asarray(value, dtype=DTYPE))
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad
        self._versions = tuple(getattr(p, 'version', None) for p in self.parents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class ParamTensor(Tensor):
    """
    Parámetro con nombre del grafo de cómputo

    Los valores son inmutables: ``assign`` reemplaza el arreglo completo e
    incrementa el contador de versión, lo que permite a ``backward`` detectar
    grafos construidos con valores anteriores.

    Atributos:
        name (str): Identificador único del parámetro
        version (int): Número de asignaciones realizadas
    """

    __slots__ = ('name', 'version')

    def __init__(self, name: str, values, requires_grad: bool = True):
        array = np.array(values, dtype=DTYPE)
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError(f"Dimensiones no positivas para el parámetro {name}: {array.shape}")
        _check_finite(array, f'param:{name}')
        super().__init__(array, op='param', requires_grad=requires_grad)
        self.name = name
        self.version = 0

    @property
    def values(self) -> np.ndarray:
        """Valores planos en orden row-major"""
        return self.value.reshape(-1)

    def assign(self, new_value):
        array = np.array(new_value, dtype=DTYPE)
        if array.shape != self.value.shape:
            raise ShapeError(
                f"Asignación con forma {array.shape} al parámetro {self.name} de forma {self.value.shape}"
            )
        _check_finite(array, f'assign:{self.name}')
        self.value = _freeze(array)
        self.version += 1

    def __repr__(self):
        return f"ParamTensor(name={self.name}, shape={self.shape}, requires_grad={self.requires_grad})"


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(value: np.ndarray, op: str, parents: Sequence[Tensor], backward: BackwardFn,
          mask: Optional[np.ndarray] = None) -> Tensor:
    _check_finite(value, op, mask)
    if any(p.requires_grad for p in parents):
        return Tensor(value, op, parents, backward, True, copy=False)
    return Tensor(value, op, copy=False)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"Formas incompatibles en '{op}': {a.shape} y {b.shape}") from e


# ---------------------------------------------------------------------------
# Primitivas
# ---------------------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'add')
    return _node(a.value + b.value, 'add', (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'sub')
    return _node(a.value - b.value, 'sub', (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, 'neg', (a,), lambda g: (-g,))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'mul')
    return _node(a.value * b.value, 'mul', (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Formas incompatibles en 'matmul': {a.shape} @ {b.shape}")
    return _node(a.value @ b.value, 'matmul', (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    active = a.value > 0
    return _node(np.where(active, a.value, 0.0), 'relu', (a,), lambda g: (g * active,))


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * a.value, 'square', (a,), lambda g: (2.0 * a.value * g,))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide='ignore', invalid='ignore'):
        value = np.log(a.value)
    return _node(value, 'log', (a,), lambda g: (g / a.value,))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over='ignore'):
        value = np.exp(a.value)
    return _node(value, 'exp', (a,), lambda g: (g * value,))


def sum_(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(a.value.sum(axis=axis), 'sum', (a,), backward)


def mean(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("Media sobre un eje vacío")
    return mul(sum_(a, axis), 1.0 / count)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"No se puede redimensionar {a.shape} a {tuple(shape)}") from e
    return _node(value, 'reshape', (a,), lambda g: (g.reshape(a.shape),))


def gather(a: TensorLike, index) -> Tensor:
    """
    Selecciona elementos por índice a lo largo del último eje

    Con ``index`` de una dimensión sobre una entrada (filas, columnas) devuelve
    ``a[i, index[i]]`` con forma (filas,). Con ``index`` de la misma dimensión
    que la entrada devuelve ``take_along_axis`` sobre el último eje.
    """
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    squeeze = idx.ndim == a.ndim - 1
    if squeeze:
        idx = idx[..., None]
    if idx.ndim != a.ndim or idx.shape[:-1] != a.shape[:-1]:
        raise ShapeError(f"Índice de forma {np.shape(index)} incompatible con {a.shape} en 'gather'")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[-1]):
        raise ShapeError("Índice fuera de rango en 'gather'")
    value = np.take_along_axis(a.value, idx, axis=-1)

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        g_full = g[..., None] if squeeze else g
        lead = np.indices(idx.shape, sparse=True)[:-1]
        np.add.at(grad, (*lead, idx), g_full)
        return (grad,)

    return _node(value[..., 0] if squeeze else value, 'gather', (a,), backward)


def take(a: TensorLike, index) -> Tensor:
    """Selecciona filas (eje 0) por índice, con repetición permitida"""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("Índice fuera de rango en 'take'")

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(grad, idx, g)
        return (grad,)

    return _node(a.value[idx], 'take', (a,), backward)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"Formas incompatibles en 'concat': {[p.shape for p in parts]}") from e
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _node(value, 'concat', parts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def log_softmax(a: TensorLike, mask=None) -> Tensor:
    """
    Log-softmax estable sobre el último eje

    Las entradas con ``mask`` falso quedan en -inf en la salida y reciben
    gradiente cero. Una fila sin ninguna entrada permitida es un error.

    Ejemplo de uso:
        log_softmax(Tensor([1000.0, 0.0])).value
        # array([ 0., -1000.])
    """
    a = as_tensor(a)
    if mask is None:
        legal = np.ones(a.shape, dtype=bool)
    else:
        legal = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if a.ndim and not np.all(legal.any(axis=-1)):
        raise GraphError("Fila de log_softmax sin ninguna acción permitida")
    shifted = np.where(legal, a.value, -np.inf)
    top = shifted.max(axis=-1, keepdims=True)
    centered = shifted - top
    out = centered - np.log(np.exp(centered).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        g_legal = np.where(legal, g, 0.0)
        return (g_legal - probs * g_legal.sum(axis=-1, keepdims=True),)

    return _node(out, 'log_softmax', (a,), backward, mask=legal)


def stop_gradient(a: TensorLike) -> Tensor:
    """Identidad hacia adelante; no propaga gradiente hacia sus entradas"""
    a = as_tensor(a)
    if not a.requires_grad:
        return a
    return Tensor(a.value, 'stop_gradient', (a,), lambda g: (None,), True, copy=False)


# ---------------------------------------------------------------------------
# Paso hacia atrás
# ---------------------------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> Dict[str, np.ndarray]:
    """
    Calcula el gradiente exacto de una pérdida escalar

    Args:
        loss (Tensor): Nodo escalar del grafo

    Returns:
        Dict[str, np.ndarray]: Gradiente por nombre para cada ParamTensor
        entrenable alcanzable desde la pérdida. Los parámetros alcanzables solo
        a través de stop_gradient reciben un gradiente de ceros.

    Raises:
        GraphError: Si la pérdida no es escalar o algún parámetro cambió
            después de construir el grafo
        NonFiniteError: Si aparece NaN/Inf en un gradiente local
    """
    if loss.value.size != 1:
        raise GraphError(f"backward requiere una pérdida escalar, se recibió forma {loss.shape}")
    grads: Dict[str, np.ndarray] = {}
    if not loss.requires_grad:
        return grads

    pending: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    seen_params: Dict[str, ParamTensor] = {}

    for node in reversed(_topological_order(loss)):
        for parent, version in zip(node.parents, node._versions):
            if isinstance(parent, ParamTensor) and parent.version != version:
                raise GraphError(f"El parámetro {parent.name} cambió después del paso hacia adelante")

        g = pending.pop(id(node), None)

        if isinstance(node, ParamTensor):
            previous = seen_params.setdefault(node.name, node)
            if previous is not node:
                raise GraphError(f"Dos parámetros distintos comparten el nombre {node.name}")
            grads[node.name] = g.copy() if g is not None else np.zeros(node.shape, dtype=DTYPE)
            continue

        if g is None or node._backward is None:
            continue
        for parent, local in zip(node.parents, node._backward(g)):
            if local is None or not parent.requires_grad:
                continue
            _check_finite(local, f'backward:{node.op}')
            key = id(parent)
            pending[key] = pending[key] + local if key in pending else local

    return grads
