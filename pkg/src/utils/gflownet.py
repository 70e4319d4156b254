"""
Núcleo GFlowNet - Módulo de Utilidades
======================================

Muestreo de trayectorias y objetivos de entrenamiento sobre cualquier
entorno y cualquier política del laboratorio.

Funcionalidades principales:
- Muestreo por lotes con acciones ilegales enmascaradas, un contexto de
  muestreo (k, z, J) por trayectoria y un flujo aleatorio por fila
- Modificadores de exploración: temperatura y mezcla ε-uniforme
- Política hacia atrás uniforme
- Pérdidas Trajectory Balance (TB) y Detailed Balance (DB) como nodos del grafo
- Distribución terminal exacta por programación dinámica sobre el DAG

Ejemplo de uso:
    log_z = make_log_z(policy.n_members)
    trajectories = sample_trajectories(env, policy, rngs)
    loss = tb_loss(env, trajectories, policy, log_z)
    grads = backward(loss)
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .autodiff import (ParamTensor, Tensor, concat, gather, log_softmax, matmul, mean, reshape,
                       square, take)
from .errors import GraphError, NonFiniteError
from .policies import ContextBatch, SamplingContext, masked_log_softmax

logger = logging.getLogger(__name__)

DP_CHUNK = 2048


@dataclass
class Trajectory:
    """
    Trayectoria completa s0 -> ... -> sn

    Atributos:
        states: Estados visitados, el último es terminal
        actions: Acciones tomadas (len(states) - 1)
        log_reward: log R del estado terminal
        contexts: Contexto de muestreo usado en cada paso
    """
    states: List
    actions: List[int]
    log_reward: float
    contexts: List[SamplingContext]

    @property
    def context(self) -> SamplingContext:
        return self.contexts[0]

    @property
    def terminal(self):
        return self.states[-1]

    def __len__(self):
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            'states': [repr(s) for s in self.states],
            'actions': list(self.actions),
            'log_reward': self.log_reward,
            'contexts': [c.to_dict() for c in self.contexts],
        }


class TrajectoryRngs(NamedTuple):
    """Flujos independientes de una trayectoria: acciones, miembro e índice epistémico"""
    action: np.random.Generator
    member: np.random.Generator
    index: np.random.Generator


def make_log_z(n_members: int = 1) -> ParamTensor:
    """log Z aprendible, uno por miembro del ensamble, inicializado en 0"""
    return ParamTensor('log_z', np.zeros(n_members))


def sample_trajectories(env, policy, rngs: Sequence[TrajectoryRngs], explore: bool = True,
                        epsilon: float = 0.0, temperature: float = 1.0) -> List[Trajectory]:
    """
    Muestrea un lote de trayectorias desde s0 hasta un estado terminal

    Con ``explore=True`` cada trayectoria usa su propio contexto de muestreo
    (miembro k, índice z, miembro prior J) y se aplican la temperatura y la
    mezcla ε. Con ``explore=False`` se muestrea de la política determinista
    de evaluación.

    Args:
        env: Entorno
        policy: Política
        rngs: Un TrajectoryRngs por trayectoria
        explore: Política exploratoria o de evaluación
        epsilon: Probabilidad de tomar una acción legal uniforme en cada paso
        temperature: Divisor de los logits durante la exploración

    Returns:
        List[Trajectory]: Una trayectoria por elemento de ``rngs``

    Raises:
        GraphError: Si algún estado no tiene acciones legales
    """
    count = len(rngs)
    contexts = [policy.sample_context(r.member, r.index) for r in rngs]
    states = [[env.initial_state()] for _ in range(count)]
    actions: List[List[int]] = [[] for _ in range(count)]
    used_contexts: List[List[SamplingContext]] = [[] for _ in range(count)]
    active = list(range(count))

    while active:
        current = [states[i][-1] for i in active]
        for i in active:
            if actions[i]:
                contexts[i] = policy.step_context(contexts[i], rngs[i].index)
        encodings = env.encode_batch(current)
        masks = np.stack([env.action_mask(s) for s in current])
        if not np.all(masks.any(axis=1)):
            raise GraphError("Estado sin ninguna acción legal durante el muestreo")

        if explore:
            logits = policy.numpy_logits(encodings, ContextBatch.stack([contexts[i] for i in active]))
            logprobs = masked_log_softmax(logits / temperature, masks)
        else:
            logprobs = policy.eval_logits(encodings, masks)
        if not np.all(np.isfinite(logprobs[masks])):
            raise NonFiniteError("Log-probabilidades no finitas durante el muestreo")

        probs = np.exp(logprobs)
        if explore and epsilon > 0:
            uniform = masks / masks.sum(axis=1, keepdims=True)
            probs = (1.0 - epsilon) * probs + epsilon * uniform

        still_active = []
        for row, i in enumerate(active):
            cumulative = np.cumsum(probs[row])
            u = rngs[i].action.random() * cumulative[-1]
            action = int(min(np.searchsorted(cumulative, u, side='right'), env.n_actions - 1))
            while not masks[row, action]:
                action -= 1
            state = env.step(current[row], action)
            states[i].append(state)
            actions[i].append(action)
            used_contexts[i].append(contexts[i])
            if not env.is_terminal(state):
                still_active.append(i)
        active = still_active

    return [Trajectory(states[i], actions[i], env.log_reward(states[i][-1]), used_contexts[i])
            for i in range(count)]


def sample_trajectory(env, policy, rngs: TrajectoryRngs, explore: bool = True, **kwargs) -> Trajectory:
    return sample_trajectories(env, policy, [rngs], explore=explore, **kwargs)[0]


def _transition_backward_logprobs(env, trajectory: Trajectory) -> np.ndarray:
    out = np.zeros(len(trajectory))
    for t, action in enumerate(trajectory.actions):
        if action == env.stop_action:
            continue
        out[t] = -np.log(env.n_parents(trajectory.states[t + 1]))
    return out


def uniform_backward_logprob(env, trajectory: Trajectory) -> float:
    """
    log P_B de la trayectoria bajo la política hacia atrás uniforme

    Suma -log |padres(s_{t+1})| sobre las transiciones no terminales; la
    arista STOP tiene probabilidad hacia atrás 1.

    Ejemplo de uso:
        # (0,0) -> (1,0) -> (1,1) -> STOP
        uniform_backward_logprob(env, trajectory)   # -log 2
    """
    return float(_transition_backward_logprobs(env, trajectory).sum())


def _flatten(env, trajectories: Sequence[Trajectory]):
    rows = [s for traj in trajectories for s in traj.states[:-1]]
    encodings = env.encode_batch(rows)
    masks = np.stack([env.action_mask(s) for s in rows])
    actions = np.array([a for traj in trajectories for a in traj.actions], dtype=np.int64)
    contexts = ContextBatch.stack([c for traj in trajectories for c in traj.contexts])
    lengths = np.array([len(traj) for traj in trajectories], dtype=np.int64)
    owner = np.repeat(np.arange(len(trajectories)), lengths)
    return encodings, masks, actions, contexts, lengths, owner


def _check_loss(loss: Tensor, name: str) -> Tensor:
    if not np.isfinite(loss.value).all():
        raise NonFiniteError(f"Pérdida {name} no finita")
    return loss


def tb_loss(env, trajectories: Sequence[Trajectory], policy, log_z: ParamTensor,
            backward_logprobs: Optional[Sequence[float]] = None) -> Tensor:
    """
    Pérdida Trajectory Balance promediada sobre el lote

    (log Z + Σ log P_F - log R - Σ log P_B)^2 por trayectoria; log Z se toma
    del miembro que generó cada trayectoria.

    Args:
        env: Entorno
        trajectories: Lote de trayectorias
        policy: Política diferenciable
        log_z: ParamTensor de forma (n_members,)
        backward_logprobs: log P_B por trayectoria (uniforme si es None)

    Returns:
        Tensor: Pérdida escalar
    """
    if not trajectories:
        raise GraphError("tb_loss requiere al menos una trayectoria")
    encodings, masks, actions, contexts, lengths, owner = _flatten(env, trajectories)
    logits, _ = policy.logits(encodings, contexts)
    chosen = gather(log_softmax(logits, masks), actions)

    segments = np.zeros((len(trajectories), actions.size))
    segments[owner, np.arange(actions.size)] = 1.0
    forward = reshape(matmul(segments, reshape(chosen, (actions.size, 1))), (len(trajectories),))

    if backward_logprobs is None:
        backward_logprobs = [uniform_backward_logprob(env, traj) for traj in trajectories]
    log_rewards = np.array([traj.log_reward for traj in trajectories])
    members = np.array([traj.context.member for traj in trajectories], dtype=np.int64)

    residual = take(log_z, members) + forward - log_rewards - np.asarray(backward_logprobs, dtype=np.float64)
    return _check_loss(mean(square(residual)), 'TB')


def db_loss(env, trajectories: Sequence[Trajectory], policy) -> Tensor:
    """
    Pérdida Detailed Balance con cabeza de flujo log F(s)

    Por transición: (log F(s_t) + log P_F(s_{t+1}|s_t) - log F(s_{t+1}) - log P_B(s_t|s_{t+1}))^2,
    usando log R(x) como log F del estado terminal. Se promedia sobre las
    transiciones de cada trayectoria y luego sobre el lote.

    Returns:
        Tensor: Pérdida escalar
    """
    if not trajectories:
        raise GraphError("db_loss requiere al menos una trayectoria")
    encodings, masks, actions, contexts, lengths, owner = _flatten(env, trajectories)
    n_rows = actions.size
    logits, features = policy.logits(encodings, contexts)
    chosen = gather(log_softmax(logits, masks), actions)
    flow = policy.flow(features)

    log_rewards = np.array([traj.log_reward for traj in trajectories])
    ends = np.cumsum(lengths) - 1
    next_index = np.arange(1, n_rows + 1)
    next_index[ends] = n_rows + np.arange(len(trajectories))
    next_flow = take(concat([flow, log_rewards], axis=0), next_index)

    backward = np.concatenate([_transition_backward_logprobs(env, traj) for traj in trajectories])
    residual = flow + chosen - next_flow - backward

    weights = np.zeros((len(trajectories), n_rows))
    weights[owner, np.arange(n_rows)] = 1.0 / lengths[owner]
    per_trajectory = matmul(weights, reshape(square(residual), (n_rows, 1)))
    return _check_loss(mean(per_trajectory), 'DB')


def exact_terminal_distribution(env, policy, chunk: int = DP_CHUNK) -> np.ndarray:
    """
    Distribución terminal exacta de la política de evaluación

    Empuja el flujo desde s0 por los niveles del DAG en orden topológico,
    ponderando cada arista con P_F, y acumula la masa que entra en cada
    estado terminal.

    Returns:
        np.ndarray: Probabilidades en orden de ``env.terminal_index``

    Raises:
        EnumerationLimitError: Si el espacio de estados no es enumerable
    """
    table = env.transition_table()
    n_states = table.masks.shape[0]
    logprobs = np.empty(table.masks.shape)
    for start in range(0, n_states, chunk):
        block = slice(start, start + chunk)
        logprobs[block] = policy.eval_logits(table.encodings[block], table.masks[block])
    probs = np.where(table.masks, np.exp(logprobs), 0.0)

    flow = np.zeros(n_states)
    flow[0] = 1.0
    terminal = np.zeros(env.n_terminal)
    for level in table.levels:
        edge_flow = flow[level][:, None] * probs[level]
        children = table.child_index[level]
        internal = children >= 0
        np.add.at(flow, children[internal], edge_flow[internal])
        ends = table.terminal_of[level]
        final = ends >= 0
        np.add.at(terminal, ends[final], edge_flow[final])
    return terminal
