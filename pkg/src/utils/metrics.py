"""
Métricas - Módulo de Utilidades
===============================

Cantidades reportadas por el laboratorio: distancia L1 entre la
distribución empírica y la objetivo, modos descubiertos y diversidad de
secuencias válidas.

Clases principales:
- EmpiricalDist: conteos de estados terminales con política de ventana
  (cumulative, last-W, fresh-eval)
- ModeSet: modos distintos visitados y sus regiones

Ejemplo de uso:
    dist = EmpiricalDist(env.n_terminal, window='last-W', window_size=1000)
    record_terminal(dist, env, trajectory.terminal)
    l1 = l1_distance(dist.snapshot(), target)
"""

import logging
from collections import Counter, deque
from typing import Dict, Hashable, Iterable, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .environments import bitseq_is_valid, catalan
from .errors import ConfigError, InvalidStateError, ShapeError

logger = logging.getLogger(__name__)

WINDOWS = ('cumulative', 'last-W', 'fresh-eval')


class EmpiricalDist:
    """
    Distribución empírica de estados terminales

    Usa un vector denso cuando se conoce el número de estados terminales y
    un diccionario en caso contrario.

    Atributos:
        window (str): 'cumulative', 'last-W' o 'fresh-eval'
        window_size (int): W para 'last-W'
        total (int): Número de terminales contados
    """

    def __init__(self, n_states: Optional[int] = None, window: str = 'cumulative',
                 window_size: int = 10000):
        if window not in WINDOWS:
            raise ConfigError(f"Ventana desconocida: {window}")
        if window == 'last-W' and window_size < 1:
            raise ConfigError(f"window_size debe ser >= 1: {window_size}")
        self.n_states = n_states
        self.window = window
        self.window_size = window_size
        self.total = 0
        self._dense = np.zeros(n_states, dtype=np.int64) if n_states is not None else None
        self._sparse: Counter = Counter()
        self._recent = deque()

    def _add(self, key, amount: int):
        if self._dense is not None:
            self._dense[key] += amount
        else:
            self._sparse[key] += amount
            if self._sparse[key] == 0:
                del self._sparse[key]
        self.total += amount

    def record(self, key: Hashable):
        if self._dense is not None and not 0 <= key < self.n_states:
            raise ShapeError(f"Índice terminal fuera de rango: {key}")
        self._add(key, 1)
        if self.window == 'last-W':
            self._recent.append(key)
            if len(self._recent) > self.window_size:
                self._add(self._recent.popleft(), -1)

    def reset(self):
        """Vacía los conteos (al inicio de cada evaluación fresca)"""
        if self._dense is not None:
            self._dense[:] = 0
        self._sparse.clear()
        self._recent.clear()
        self.total = 0

    def state_dict(self) -> Dict:
        if self._dense is not None:
            counts = {str(i): int(c) for i, c in enumerate(self._dense.tolist()) if c}
        else:
            counts = {str(k): int(c) for k, c in self._sparse.items()}
        return {'total': self.total, 'counts': counts, 'recent': [int(k) for k in self._recent]}

    def load_state_dict(self, state: Dict):
        self.reset()
        for key, count in state.get('counts', {}).items():
            self._add(int(key), int(count))
        self._recent.extend(int(k) for k in state.get('recent', []))
        if self.total != int(state.get('total', self.total)):
            raise ShapeError("Estado de la distribución empírica inconsistente")

    def counts(self) -> Union[np.ndarray, Dict[Hashable, int]]:
        if self._dense is not None:
            return self._dense.copy()
        return dict(self._sparse)

    def snapshot(self) -> Union[np.ndarray, Dict[Hashable, float]]:
        """
        Copia normalizada de la distribución

        Returns:
            Vector de probabilidades (denso) o diccionario clave -> probabilidad
        """
        if self.total == 0:
            logger.warning("Instantánea de una distribución empírica vacía")
            return np.zeros(self.n_states) if self._dense is not None else {}
        if self._dense is not None:
            return self._dense / self.total
        return {key: count / self.total for key, count in self._sparse.items()}


def record_terminal(empirical: EmpiricalDist, env, state):
    empirical.record(env.terminal_index(state))


def l1_distance(empirical: np.ndarray, target: np.ndarray) -> float:
    """
    Media sobre los estados terminales de |p̂(x) - p*(x)|

    Ejemplo de uso:
        l1_distance(np.array([1, 0, 0, 0]), np.full(4, 0.25))   # 0.375
    """
    p = np.asarray(empirical, dtype=np.float64)
    q = np.asarray(target, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"Soportes distintos en l1_distance: {p.shape} y {q.shape}")
    return float(np.mean(np.abs(p - q)))


class ModeSet:
    """Modos distintos visitados durante una corrida"""

    def __init__(self, modes: Iterable[Hashable] = (), regions: Iterable[int] = ()):
        self.modes: Set[Hashable] = set(modes)
        self.regions: Set[int] = set(regions)

    def add(self, env, state) -> bool:
        """Registra el estado si es un modo; devuelve True si es nuevo"""
        if not env.is_mode(state):
            return False
        key = env.terminal_index(state)
        is_new = key not in self.modes
        self.modes.add(key)
        self.regions.add(env.mode_region(state))
        return is_new

    def __len__(self):
        return len(self.modes)

    def to_dict(self) -> Dict[str, list]:
        return {'modes': sorted(int(m) for m in self.modes), 'regions': sorted(self.regions)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[int]]) -> 'ModeSet':
        return cls(data.get('modes', ()), data.get('regions', ()))


def modes_discovered(mode_set: ModeSet, env=None) -> int:
    """Número de modos distintos visitados (acotado por los modos del entorno)"""
    if env is not None and len(mode_set) > env.n_modes:
        raise InvalidStateError("El conjunto de modos excede los modos del entorno")
    return len(mode_set)


def mode_regions_discovered(mode_set: ModeSet) -> int:
    return len(mode_set.regions)


def diversity(samples: Iterable[Sequence[int]], half_length: int) -> Tuple[int, float]:
    """
    Secuencias distintas, completas y válidas entre las muestras

    Args:
        samples: Secuencias de bits de longitud 2N
        half_length: N

    Returns:
        Tuple[int, float]: Cantidad y fracción respecto a catalan(N)
    """
    valid = set()
    for bits in samples:
        bits = tuple(int(b) for b in bits)
        if len(bits) != 2 * half_length:
            raise InvalidStateError(f"Muestra incompleta de {len(bits)} bits")
        if bitseq_is_valid(bits):
            valid.add(bits)
    count = len(valid)
    return count, count / catalan(half_length)
