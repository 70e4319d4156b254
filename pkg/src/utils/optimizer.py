"""
Optimizador Adam - Módulo de Utilidades
=======================================

Actualización Adam con corrección de sesgo sobre diccionarios de
ParamTensor. El entrenamiento usa dos grupos con estados separados: la red
(lr 1e-3) y el escalar log Z (lr 1e-1).

Ejemplo de uso:
    state = AdamState(lr=1e-3)
    adam_update({'w': w}, {'w': grad_w}, state)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .autodiff import DTYPE, ParamTensor
from .errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Estado del optimizador Adam

    Atributos:
        lr (float): Tasa de aprendizaje
        beta1 (float): Decaimiento del primer momento
        beta2 (float): Decaimiento del segundo momento
        eps (float): Constante de estabilidad numérica
        step (int): Pasos realizados (>= 0)
        m (dict): Primer momento por nombre de parámetro
        v (dict): Segundo momento por nombre de parámetro
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> 'AdamState':
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_update(params: Mapping[str, ParamTensor], grads: Mapping[str, np.ndarray],
                state: AdamState) -> Mapping[str, ParamTensor]:
    """
    Aplica un paso de Adam a todos los parámetros del grupo

    Los parámetros sin gradiente en ``grads`` se tratan como gradiente cero
    (sus momentos siguen decayendo).

    Args:
        params: Parámetros del grupo por nombre
        grads: Gradientes por nombre (forma idéntica al parámetro)
        state: Estado del grupo, se modifica en el lugar

    Returns:
        Mapping[str, ParamTensor]: Los mismos parámetros con valores nuevos

    Raises:
        ShapeError: Si un gradiente o momento no coincide con su parámetro
    """
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros(param.shape, dtype=DTYPE)
        if grad.shape != param.shape:
            raise ShapeError(f"Gradiente de forma {grad.shape} para {name} de forma {param.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(param.shape, dtype=DTYPE)
            v = np.zeros(param.shape, dtype=DTYPE)
        if m.shape != param.shape or v.shape != param.shape:
            raise ShapeError(f"Momentos de Adam con forma distinta a {name}")

        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        param.assign(param.value - state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps))

    return params
