"""
Entornos de Muestreo - Módulo de Utilidades
===========================================

Este módulo describe los dos entornos del laboratorio como MDP sobre grafos
dirigidos acíclicos: la HyperGrid de n dimensiones y las secuencias de bits
de paréntesis balanceados.

Funcionalidades principales:
- Recompensa de la HyperGrid con sus tres constantes (R0, R1, R2)
- Máscaras de acciones legales, padres e hijos de cada estado
- Codificación one-hot de estados para la entrada de la red
- Distribución objetivo exacta por enumeración (con límite de tamaño)
- Tabla de transiciones por niveles para la programación dinámica
- Validez de secuencias balanceadas y números de Catalan

Clases principales:
- HyperGridEnv / GridState: grid con acciones de incremento y STOP
- BitSeqEnv / BitSeqState: secuencias construidas agregando un bit por paso

Ejemplo de uso:
    env = HyperGridEnv(ndim=2, height=8, r0=1e-4)
    env.reward(GridState((1, 7)))   # 4.0001
    probs, z = env.target_distribution()

Versión: 1.0.0
"""

import logging
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EnumerationLimitError, InvalidStateError

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10 ** 7
INT64_MAX = 2 ** 63 - 1


class TransitionTable(NamedTuple):
    """
    Tabla densa del DAG de estados no terminales

    Atributos:
        encodings: (S, D) codificación de cada estado
        masks: (S, A) acciones legales
        child_index: (S, A) índice del estado hijo no terminal, -1 si no aplica
        terminal_of: (S, A) índice del terminal alcanzado por la acción, -1 si no aplica
        levels: índices de estados agrupados en orden topológico
    """
    encodings: np.ndarray
    masks: np.ndarray
    child_index: np.ndarray
    terminal_of: np.ndarray
    levels: List[np.ndarray]


def _check_enumerable(size: int, what: str):
    if size > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"{what}: {size} estados excede el límite de enumeración ({ENUMERATION_LIMIT})"
        )


# ---------------------------------------------------------------------------
# HyperGrid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridState:
    """Celda de la grid; ``done`` marca el estado terminal alcanzado con STOP"""
    coords: Tuple[int, ...]
    done: bool = False


class HyperGridEnv:
    """
    HyperGrid de n dimensiones y lado H

    El agente empieza en el origen. La acción i (0 <= i < n) incrementa la
    coordenada i; la acción n (STOP) termina la trayectoria en la celda actual.

    Atributos:
        ndim (int): Número de dimensiones n
        height (int): Lado H (coordenadas 0..H-1)
        r0, r1, r2 (float): Constantes de la recompensa
        coord_norm (str): 'H' divide las coordenadas por H, 'H-1' por H-1
    """

    kind = 'hypergrid'

    def __init__(self, ndim: int = 2, height: int = 8, r0: float = 1e-3, r1: float = 1.0,
                 r2: float = 3.0, coord_norm: str = 'H'):
        if ndim < 1:
            raise ConfigError(f"ndim debe ser >= 1: {ndim}")
        if height < 2:
            raise ConfigError(f"height debe ser >= 2: {height}")
        if min(r0, r1, r2) < 0:
            raise ConfigError("Las constantes de recompensa deben ser no negativas")
        if r0 <= 0:
            raise ConfigError(f"r0 debe ser > 0 (recibido {r0}): con r0 = 0 las celdas fuera de las "
                              f"bandas de recompensa tienen R = 0 y log R = -inf en la pérdida")
        if coord_norm not in ('H', 'H-1'):
            raise ConfigError(f"coord_norm desconocido: {coord_norm}")
        if not (0 < r0 < r1 < r2):
            logger.warning(f"Recompensas fuera del régimen 0 < R0 < R1 < R2: ({r0}, {r1}, {r2})")

        self.ndim = ndim
        self.height = height
        self.r0, self.r1, self.r2 = float(r0), float(r1), float(r2)
        self.coord_norm = coord_norm
        self.n_actions = ndim + 1
        self.stop_action = ndim
        self.input_dim = ndim * height
        self._shape = (height,) * ndim
        logger.info(f"HyperGrid inicializada: n={ndim}, H={height}, R0={r0}, norma={coord_norm}")

    def __repr__(self):
        return f"HyperGridEnv(ndim={self.ndim}, height={self.height}, r0={self.r0})"

    @property
    def n_terminal(self) -> int:
        return self.height ** self.ndim

    def initial_state(self) -> GridState:
        return GridState((0,) * self.ndim)

    def is_terminal(self, state: GridState) -> bool:
        return state.done

    def action_mask(self, state: GridState) -> np.ndarray:
        """
        Acciones legales en un estado no terminal

        Ejemplo de uso:
            env.action_mask(GridState((7, 3)))   # [False, True, True] con H=8
        """
        mask = np.ones(self.n_actions, dtype=bool)
        mask[:self.ndim] = np.asarray(state.coords) < self.height - 1
        return mask

    def step(self, state: GridState, action: int) -> GridState:
        if state.done:
            raise InvalidStateError("No se puede avanzar desde un estado terminal")
        if action == self.stop_action:
            return GridState(state.coords, done=True)
        if not 0 <= action < self.ndim or state.coords[action] >= self.height - 1:
            raise InvalidStateError(f"Acción ilegal {action} en {state.coords}")
        coords = list(state.coords)
        coords[action] += 1
        return GridState(tuple(coords))

    def children(self, state: GridState) -> List[Tuple[GridState, int]]:
        if state.done:
            return []
        return [(self.step(state, a), a) for a in np.flatnonzero(self.action_mask(state)).tolist()]

    def parents(self, state: GridState) -> List[Tuple[GridState, int]]:
        """
        Padres de un estado con la acción que lleva a él

        Raises:
            InvalidStateError: Si el estado es el origen s0
        """
        if state.done:
            return [(GridState(state.coords), self.stop_action)]
        if not any(state.coords):
            raise InvalidStateError("El estado inicial s0 no tiene padres")
        result = []
        for i, x in enumerate(state.coords):
            if x > 0:
                coords = list(state.coords)
                coords[i] -= 1
                result.append((GridState(tuple(coords)), i))
        return result

    def n_parents(self, state: GridState) -> int:
        if state.done:
            return 1
        return sum(1 for x in state.coords if x > 0)

    # -- recompensa ---------------------------------------------------------

    def _scaled_distance(self, coords: np.ndarray) -> np.ndarray:
        divisor = self.height if self.coord_norm == 'H' else self.height - 1
        return np.abs(np.asarray(coords, dtype=np.float64) / divisor - 0.5)

    def reward_coords(self, coords) -> np.ndarray:
        """Recompensa vectorizada sobre un arreglo (..., n) de coordenadas"""
        d = self._scaled_distance(coords)
        outer = np.all(d > 0.25, axis=-1)
        ring = np.all((d > 0.3) & (d < 0.4), axis=-1)
        return self.r0 + self.r1 * outer + self.r2 * ring

    def reward(self, state: GridState) -> float:
        return float(self.reward_coords(state.coords))

    def log_reward(self, state: GridState) -> float:
        return float(np.log(self.reward(state)))

    def is_mode_coords(self, coords) -> np.ndarray:
        d = self._scaled_distance(coords)
        return np.all((d > 0.3) & (d < 0.4), axis=-1)

    def is_mode(self, state: GridState) -> bool:
        return bool(self.is_mode_coords(state.coords))

    def mode_region(self, state: GridState) -> int:
        """Región de esquina (mitad baja/alta por dimensión) codificada como entero"""
        divisor = self.height if self.coord_norm == 'H' else self.height - 1
        high = np.asarray(state.coords, dtype=np.float64) / divisor > 0.5
        return int(sum(1 << i for i, h in enumerate(high) if h))

    def all_modes(self) -> List[Tuple[int, ...]]:
        coords = self.all_coords()
        return [tuple(c) for c in coords[self.is_mode_coords(coords)].tolist()]

    @property
    def n_modes(self) -> int:
        per_dim = int(self.is_mode_coords(np.arange(self.height)[:, None]).sum())
        return per_dim ** self.ndim

    @property
    def n_mode_regions(self) -> int:
        return 2 ** self.ndim if self.n_modes else 0

    # -- enumeración --------------------------------------------------------

    def terminal_index(self, state: GridState) -> int:
        return int(np.ravel_multi_index(state.coords, self._shape))

    def terminal_state(self, index: int) -> GridState:
        coords = np.unravel_index(int(index), self._shape)
        return GridState(tuple(int(c) for c in coords), done=True)

    def all_coords(self) -> np.ndarray:
        _check_enumerable(self.n_terminal, 'HyperGrid')
        return np.stack(np.unravel_index(np.arange(self.n_terminal), self._shape), axis=-1)

    def target_distribution(self) -> Tuple[np.ndarray, float]:
        """
        Distribución objetivo exacta p*(x) = R(x) / Z sobre las H^n celdas

        Returns:
            Tuple[np.ndarray, float]: Probabilidades en orden de terminal_index y Z

        Raises:
            EnumerationLimitError: Si H^n supera 10^7
        """
        rewards = self.reward_coords(self.all_coords())
        z = float(rewards.sum())
        return rewards / z, z

    # -- codificación -------------------------------------------------------

    def encode_coords(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, self.ndim)
        out = np.zeros((coords.shape[0], self.input_dim))
        columns = coords + np.arange(self.ndim) * self.height
        np.put_along_axis(out, columns, 1.0, axis=1)
        return out

    def encode(self, state: GridState) -> np.ndarray:
        return self.encode_coords(state.coords)[0]

    def encode_batch(self, states: Sequence[GridState]) -> np.ndarray:
        return self.encode_coords(np.array([s.coords for s in states], dtype=np.int64))

    def transition_table(self) -> TransitionTable:
        coords = self.all_coords()
        n_states = coords.shape[0]
        masks = np.ones((n_states, self.n_actions), dtype=bool)
        masks[:, :self.ndim] = coords < self.height - 1
        child_index = np.full((n_states, self.n_actions), -1, dtype=np.int64)
        terminal_of = np.full((n_states, self.n_actions), -1, dtype=np.int64)
        strides = np.array([self.height ** (self.ndim - 1 - i) for i in range(self.ndim)], dtype=np.int64)
        index = np.arange(n_states, dtype=np.int64)
        for i in range(self.ndim):
            child_index[:, i] = np.where(masks[:, i], index + strides[i], -1)
        terminal_of[:, self.stop_action] = index
        depth = coords.sum(axis=1)
        order = np.argsort(depth, kind='stable')
        bounds = np.searchsorted(depth[order], np.arange(1, depth.max() + 1))
        return TransitionTable(self.encode_coords(coords), masks, child_index, terminal_of,
                               np.split(order, bounds))


# ---------------------------------------------------------------------------
# Secuencias de bits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BitSeqState:
    """Prefijo binario; 0 abre y 1 cierra un paréntesis"""
    bits: Tuple[int, ...] = field(default_factory=tuple)


def bitseq_is_valid(bits: Sequence[int]) -> bool:
    """
    Indica si la secuencia representa paréntesis balanceados

    Recorre de izquierda a derecha sumando +1 por cada 0 y -1 por cada 1; la
    suma nunca debe ser negativa y debe terminar en 0.

    Ejemplo de uso:
        bitseq_is_valid([0, 1, 0, 1])   # True
        bitseq_is_valid([0, 1, 1, 0])   # False
    """
    depth = 0
    for bit in bits:
        depth += 1 if bit == 0 else -1
        if depth < 0:
            return False
    return depth == 0


def catalan(n: int) -> int:
    """
    N-ésimo número de Catalan por la recurrencia multiplicativa

    Raises:
        ValueError: Si n es negativo
        OverflowError: Si el resultado no cabe en 64 bits
    """
    if n < 0:
        raise ValueError(f"catalan requiere n >= 0: {n}")
    value = 1
    for k in range(n):
        value = value * 2 * (2 * k + 1) // (k + 2)
        if value > INT64_MAX:
            raise OverflowError(f"catalan({n}) excede 64 bits")
    return value


class BitSeqEnv:
    """
    Secuencias binarias de longitud 2N construidas agregando un bit por paso

    Cada estado tiene un único padre, por lo que la política hacia atrás
    uniforme es trivial. La recompensa sustituta asigna ``r_valid`` a las
    secuencias balanceadas y ``r_invalid`` al resto.

    Atributos:
        half_length (int): N
        length (int): 2N
        r_valid, r_invalid (float): Constantes de recompensa
    """

    kind = 'bitseq'

    def __init__(self, half_length: int = 8, r_valid: float = 1.0, r_invalid: float = 1e-3):
        if half_length < 1:
            raise ConfigError(f"seq_halflen debe ser >= 1: {half_length}")
        if not r_valid > r_invalid > 0:
            raise ConfigError(f"Se requiere r_valid > r_invalid > 0: ({r_valid}, {r_invalid})")
        self.half_length = half_length
        self.length = 2 * half_length
        self.r_valid = float(r_valid)
        self.r_invalid = float(r_invalid)
        self.n_actions = 2
        self.stop_action: Optional[int] = None
        self.input_dim = 3 * self.length
        logger.info(f"Entorno de secuencias inicializado: N={half_length}, longitud={self.length}")

    def __repr__(self):
        return f"BitSeqEnv(half_length={self.half_length})"

    @property
    def n_terminal(self) -> int:
        return 2 ** self.length

    @property
    def n_modes(self) -> int:
        return catalan(self.half_length)

    def initial_state(self) -> BitSeqState:
        return BitSeqState(())

    def is_terminal(self, state: BitSeqState) -> bool:
        return len(state.bits) == self.length

    def action_mask(self, state: BitSeqState) -> np.ndarray:
        return np.ones(self.n_actions, dtype=bool)

    def step(self, state: BitSeqState, action: int) -> BitSeqState:
        if self.is_terminal(state):
            raise InvalidStateError("La secuencia ya está completa")
        if action not in (0, 1):
            raise InvalidStateError(f"Acción ilegal {action}")
        return BitSeqState(state.bits + (int(action),))

    def children(self, state: BitSeqState) -> List[Tuple[BitSeqState, int]]:
        if self.is_terminal(state):
            return []
        return [(self.step(state, a), a) for a in (0, 1)]

    def parents(self, state: BitSeqState) -> List[Tuple[BitSeqState, int]]:
        if not state.bits:
            raise InvalidStateError("La secuencia vacía no tiene padres")
        return [(BitSeqState(state.bits[:-1]), state.bits[-1])]

    def n_parents(self, state: BitSeqState) -> int:
        return 1

    def reward(self, state: BitSeqState) -> float:
        """
        Recompensa sustituta de una secuencia completa

        Raises:
            InvalidStateError: Si la secuencia no tiene longitud 2N
        """
        if not self.is_terminal(state):
            raise InvalidStateError(f"Recompensa de una secuencia incompleta ({len(state.bits)} bits)")
        return self.r_valid if bitseq_is_valid(state.bits) else self.r_invalid

    def log_reward(self, state: BitSeqState) -> float:
        return float(np.log(self.reward(state)))

    def is_mode(self, state: BitSeqState) -> bool:
        return self.is_terminal(state) and bitseq_is_valid(state.bits)

    def mode_region(self, state: BitSeqState) -> int:
        return self.terminal_index(state)

    # -- enumeración --------------------------------------------------------

    def terminal_index(self, state: BitSeqState) -> int:
        value = 0
        for bit in state.bits:
            value = (value << 1) | bit
        return value

    def terminal_state(self, index: int) -> BitSeqState:
        return BitSeqState(tuple((int(index) >> (self.length - 1 - p)) & 1 for p in range(self.length)))

    def all_sequences(self) -> np.ndarray:
        _check_enumerable(self.n_terminal, 'Secuencias de bits')
        shifts = np.arange(self.length - 1, -1, -1)
        return (np.arange(self.n_terminal)[:, None] >> shifts) & 1

    def validity(self, sequences: np.ndarray) -> np.ndarray:
        depth = np.cumsum(1 - 2 * np.asarray(sequences), axis=1)
        return (depth.min(axis=1) >= 0) & (depth[:, -1] == 0)

    def target_distribution(self) -> Tuple[np.ndarray, float]:
        rewards = np.where(self.validity(self.all_sequences()), self.r_valid, self.r_invalid)
        z = float(rewards.sum())
        return rewards / z, z

    def iter_valid(self) -> Iterator[Tuple[int, ...]]:
        sequences = self.all_sequences()
        for row in sequences[self.validity(sequences)].tolist():
            yield tuple(row)

    # -- codificación -------------------------------------------------------

    def encode_prefixes(self, bits: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Codifica prefijos dados como (B, 2N) bits y (B,) longitudes"""
        bits = np.asarray(bits, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        channel = np.where(np.arange(self.length) < lengths[:, None], bits + 1, 0)
        columns = channel + 3 * np.arange(self.length)
        out = np.zeros((bits.shape[0], self.input_dim))
        np.put_along_axis(out, columns, 1.0, axis=1)
        return out

    def encode_batch(self, states: Sequence[BitSeqState]) -> np.ndarray:
        bits = np.zeros((len(states), self.length), dtype=np.int64)
        lengths = np.zeros(len(states), dtype=np.int64)
        for row, state in enumerate(states):
            bits[row, :len(state.bits)] = state.bits
            lengths[row] = len(state.bits)
        return self.encode_prefixes(bits, lengths)

    def encode(self, state: BitSeqState) -> np.ndarray:
        return self.encode_batch([state])[0]

    def transition_table(self) -> TransitionTable:
        """
        Tabla de los prefijos de longitud 0..2N-1

        El prefijo de longitud L con valor binario v ocupa el índice 2^L - 1 + v.
        """
        n_states = 2 ** self.length - 1
        _check_enumerable(n_states, 'Prefijos de bits')
        lengths = np.zeros(n_states, dtype=np.int64)
        values = np.zeros(n_states, dtype=np.int64)
        levels = []
        for length in range(self.length):
            start = 2 ** length - 1
            level = np.arange(start, start + 2 ** length)
            lengths[level] = length
            values[level] = np.arange(2 ** length)
            levels.append(level)

        positions = np.arange(self.length)
        shifts = np.maximum(lengths[:, None] - 1 - positions, 0)
        bits = np.where(positions < lengths[:, None], (values[:, None] >> shifts) & 1, 0)

        child_index = np.full((n_states, 2), -1, dtype=np.int64)
        terminal_of = np.full((n_states, 2), -1, dtype=np.int64)
        last = lengths == self.length - 1
        for bit in (0, 1):
            child_value = 2 * values + bit
            child_index[:, bit] = np.where(last, -1, 2 ** (lengths + 1) - 1 + child_value)
            terminal_of[:, bit] = np.where(last, child_value, -1)
        masks = np.ones((n_states, 2), dtype=bool)
        return TransitionTable(self.encode_prefixes(bits, lengths), masks, child_index, terminal_of, levels)


def build_env(env_config):
    """
    Construye el entorno descrito por un bloque ``env`` de configuración

    Args:
        env_config: EnvConfig con ``kind`` igual a 'hypergrid' o 'bitseq'
    """
    if env_config.kind == 'hypergrid':
        return HyperGridEnv(env_config.ndim, env_config.height, env_config.r0, env_config.r1,
                            env_config.r2, env_config.coord_norm)
    if env_config.kind == 'bitseq':
        return BitSeqEnv(env_config.seq_halflen, env_config.r_valid, env_config.r_invalid)
    raise ConfigError(f"Tipo de entorno desconocido: {env_config.kind}")
