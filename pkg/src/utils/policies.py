"""
Políticas hacia Adelante - Módulo de Utilidades
===============================================

Este módulo implementa las cuatro parametrizaciones de la política hacia
adelante P_F sobre un tronco MLP compartido, más el diagnóstico de
predicción conjunta.

Funcionalidades principales:
- DefaultPolicy: tronco + cabeza lineal
- TSEnsemblePolicy: capa final con K·ℓ salidas, un miembro por trayectoria
- EpinetPolicy: cabeza base + epinet entrenable sobre características con
  stop_gradient + suma ponderada por z de D_z redes prior congeladas
- EpinetEnhancedPolicy: igual que la anterior, pero el término prior usa un
  único miembro J elegido al azar
- eval_logits: política determinista para la programación dinámica
- joint_prediction: probabilidad conjunta integrando sobre el índice epistémico

Cada política ofrece dos caminos de cómputo: el grafo diferenciable
(``logits``) usado por las pérdidas, y un camino numpy (``head_components`` +
``combine``) usado para muestrear y evaluar sin construir grafos.

Ejemplo de uso:
    policy = build_policy(env, run_config, init_rng, eval_rng)
    ctx = policy.sample_context(member_rng, index_rng)
    logits, features = policy.logits(env.encode_batch(states), ContextBatch.stack([ctx] * len(states)))

Versión: 1.0.0
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import (ParamTensor, Tensor, add, as_tensor, gather, matmul, mul, relu,
                       reshape, stop_gradient, sum_)
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

ALGORITHMS = ('default', 'ts', 'enn', 'enn-enhanced')


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax numpy sobre el último eje; las acciones ilegales quedan en -inf"""
    shifted = np.where(mask, logits, -np.inf)
    top = shifted.max(axis=-1, keepdims=True)
    centered = shifted - top
    return centered - np.log(np.exp(centered).sum(axis=-1, keepdims=True))


def log_mean_exp(values: np.ndarray, axis: int = 0) -> np.ndarray:
    top = np.max(values, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide='ignore'):
        out = np.log(np.mean(np.exp(values - top), axis=axis, keepdims=True)) + top
    return np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# Contextos de muestreo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingContext:
    """
    Contexto con el que se muestrea una trayectoria

    Atributos:
        member (int): Miembro del ensamble k (TS-GFN), 0 en las demás políticas
        z (tuple): Índice epistémico (ENN-GFN), None si no aplica
        prior_member (int): Miembro prior J (ENN-GFN-Enhanced), None si no aplica
    """
    member: int = 0
    z: Optional[Tuple[float, ...]] = None
    prior_member: Optional[int] = None

    def to_dict(self) -> Dict:
        return {'member': self.member, 'z': list(self.z) if self.z is not None else None,
                'prior_member': self.prior_member}


@dataclass
class ContextBatch:
    """Contextos apilados, una fila por entrada del lote"""
    member: np.ndarray
    z: Optional[np.ndarray] = None
    prior_member: Optional[np.ndarray] = None

    @classmethod
    def stack(cls, contexts: Sequence[SamplingContext]) -> 'ContextBatch':
        member = np.array([c.member for c in contexts], dtype=np.int64)
        z = None
        if contexts and contexts[0].z is not None:
            z = np.array([c.z for c in contexts], dtype=np.float64)
        prior = None
        if contexts and contexts[0].prior_member is not None:
            prior = np.array([c.prior_member for c in contexts], dtype=np.int64)
        return cls(member, z, prior)

    def __len__(self):
        return len(self.member)


# ---------------------------------------------------------------------------
# Capas
# ---------------------------------------------------------------------------

class Linear:
    """Capa afín con inicialización uniforme escalada por fan-in"""

    def __init__(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                 requires_grad: bool = True):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = ParamTensor(f'{name}.weight', rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad)
        self.bias = ParamTensor(f'{name}.bias', rng.uniform(-bound, bound, (fan_out,)), requires_grad)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def numpy(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.value + self.bias.value

    def parameters(self) -> List[ParamTensor]:
        return [self.weight, self.bias]


class MLP:
    """Perceptrón multicapa con ReLU entre capas (y opcionalmente al final)"""

    def __init__(self, name: str, sizes: Sequence[int], rng: np.random.Generator,
                 requires_grad: bool = True, activate_last: bool = False):
        if len(sizes) < 2:
            raise ConfigError(f"{name}: se requieren al menos dos anchos de capa")
        self.layers = [Linear(f'{name}.{i}', sizes[i], sizes[i + 1], rng, requires_grad)
                       for i in range(len(sizes) - 1)]
        self.activate_last = activate_last

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.activate_last:
                x = relu(x)
        return x

    def numpy(self, x: np.ndarray) -> np.ndarray:
        for i, layer in enumerate(self.layers):
            x = layer.numpy(x)
            if i < len(self.layers) - 1 or self.activate_last:
                x = np.maximum(x, 0.0)
        return x

    def parameters(self) -> List[ParamTensor]:
        return [p for layer in self.layers for p in layer.parameters()]


# ---------------------------------------------------------------------------
# Configuraciones de las cabezas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrunkConfig:
    input_dim: int
    hidden: Tuple[int, ...] = (256, 256)

    def __post_init__(self):
        if not self.hidden:
            raise ConfigError("El tronco requiere al menos una capa oculta")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]


@dataclass(frozen=True)
class TSEnsembleConfig:
    ensemble_size: int
    n_actions: int

    def __post_init__(self):
        if self.ensemble_size < 1 or self.n_actions < 1:
            raise ConfigError("K y ℓ deben ser >= 1")


@dataclass(frozen=True)
class EpinetConfig:
    index_dim: int
    n_actions: int
    prior_scale: float = 1.0
    epinet_hidden: Tuple[int, ...] = (64,)
    prior_hidden: Tuple[int, ...] = (32,)
    resample: str = 'trajectory'

    def __post_init__(self):
        if self.index_dim < 1:
            raise ConfigError(f"index_dim debe ser >= 1: {self.index_dim}")
        if self.prior_scale < 0:
            raise ConfigError(f"prior_scale debe ser >= 0: {self.prior_scale}")
        if self.resample not in ('trajectory', 'step'):
            raise ConfigError(f"enhanced_prior_resample desconocido: {self.resample}")


# ---------------------------------------------------------------------------
# Políticas
# ---------------------------------------------------------------------------

class DefaultPolicy:
    """
    Política base: tronco MLP y cabeza lineal

    Atributos:
        trunk (MLP): Red compartida; su última activación son las características h
        head (Linear): Cabeza de logits
        flow (Linear): Cabeza log F(s), solo cuando la pérdida es DB
    """

    algo = 'default'

    def __init__(self, trunk_config: TrunkConfig, n_actions: int, rng: np.random.Generator,
                 with_flow: bool = False):
        self.trunk_config = trunk_config
        self.n_actions = n_actions
        self.trunk = MLP('trunk', (trunk_config.input_dim, *trunk_config.hidden), rng, activate_last=True)
        self._build_heads(rng)
        self.flow_head = Linear('flow', trunk_config.feature_dim, 1, rng) if with_flow else None
        self.eval_context = ContextBatch(np.zeros(1, dtype=np.int64))

    def _build_heads(self, rng: np.random.Generator):
        self.head = Linear('head', self.trunk_config.feature_dim, self.n_actions, rng)

    @property
    def n_members(self) -> int:
        return 1

    def _modules(self) -> List:
        modules = [self.trunk, self.head]
        if self.flow_head is not None:
            modules.append(self.flow_head)
        return modules

    def parameters(self) -> Dict[str, ParamTensor]:
        """Todos los parámetros (entrenables y congelados) en orden estable"""
        return {p.name: p for module in self._modules() for p in module.parameters()}

    def trainable_parameters(self) -> Dict[str, ParamTensor]:
        return {name: p for name, p in self.parameters().items() if p.requires_grad}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ShapeError(f"Faltan parámetros en el checkpoint: {sorted(missing)}")
        for name, param in params.items():
            param.assign(arrays[name])

    # -- contextos ----------------------------------------------------------

    def sample_context(self, member_rng: np.random.Generator,
                       index_rng: np.random.Generator) -> SamplingContext:
        return SamplingContext()

    def step_context(self, context: SamplingContext, index_rng: np.random.Generator) -> SamplingContext:
        return context

    def sample_contexts(self, rng: np.random.Generator, count: int) -> ContextBatch:
        """Contextos independientes para integrar sobre la incertidumbre epistémica"""
        return ContextBatch(np.zeros(count, dtype=np.int64))

    # -- grafo diferenciable --------------------------------------------------

    def features(self, encodings) -> Tensor:
        return self.trunk(as_tensor(encodings))

    def logits(self, encodings, contexts: ContextBatch) -> Tuple[Tensor, Tensor]:
        """
        Logits diferenciables para un lote de estados codificados

        Args:
            encodings: (B, D) codificaciones de estado
            contexts: Contexto de cada fila

        Returns:
            Tuple[Tensor, Tensor]: Logits (B, A) y características del tronco (B, d_h)
        """
        h = self.features(encodings)
        return self._graph_logits(h, contexts), h

    def _graph_logits(self, h: Tensor, contexts: ContextBatch) -> Tensor:
        return self.head(h)

    def flow(self, h: Tensor) -> Tensor:
        if self.flow_head is None:
            raise ConfigError("La política no tiene cabeza de flujo (solo se crea para la pérdida DB)")
        return reshape(self.flow_head(h), (h.shape[0],))

    # -- camino numpy ---------------------------------------------------------

    def head_components(self, encodings: np.ndarray) -> Dict[str, np.ndarray]:
        h = self.trunk.numpy(np.asarray(encodings, dtype=np.float64))
        return {'features': h, 'base': self.head.numpy(h)}

    def combine(self, components: Dict[str, np.ndarray], contexts: ContextBatch,
                paired: bool = True) -> np.ndarray:
        """
        Logits numpy a partir de los componentes de la cabeza

        Args:
            components: Resultado de head_components para B estados
            contexts: B contextos alineados con las filas (paired=True) o M
                contextos aplicados a todas las filas (paired=False)

        Returns:
            np.ndarray: (B, A) si paired, (M, B, A) en caso contrario
        """
        base = components['base']
        if paired:
            return base
        return np.broadcast_to(base, (len(contexts), *base.shape))

    def numpy_logits(self, encodings: np.ndarray, contexts: ContextBatch) -> np.ndarray:
        return self.combine(self.head_components(encodings), contexts, paired=True)

    def eval_logits(self, encodings: np.ndarray, masks: np.ndarray) -> np.ndarray:
        """
        Log-probabilidades deterministas de la política de evaluación

        Promedia las políticas softmax de los contextos de evaluación fijos
        (un miembro, los K miembros o M_eval índices z) y devuelve el
        logaritmo de la mezcla. Las acciones ilegales quedan en -inf.
        """
        components = self.head_components(encodings)
        per_context = masked_log_softmax(self.combine(components, self.eval_context, paired=False), masks)
        if per_context.shape[0] == 1:
            return per_context[0]
        return log_mean_exp(per_context, axis=0)


class TSEnsemblePolicy(DefaultPolicy):
    """
    Ensamble de cabezas para muestreo de Thompson

    La capa final tiene K·ℓ salidas; el miembro k usa las columnas
    [k·ℓ, (k+1)·ℓ). Todas las capas anteriores se comparten.
    """

    algo = 'ts'

    def __init__(self, trunk_config: TrunkConfig, ensemble: TSEnsembleConfig, rng: np.random.Generator,
                 with_flow: bool = False):
        self.ensemble = ensemble
        super().__init__(trunk_config, ensemble.n_actions, rng, with_flow)
        self.eval_context = ContextBatch(np.arange(ensemble.ensemble_size, dtype=np.int64))

    def _build_heads(self, rng: np.random.Generator):
        width = self.ensemble.ensemble_size * self.ensemble.n_actions
        self.head = Linear('head', self.trunk_config.feature_dim, width, rng)

    @property
    def n_members(self) -> int:
        return self.ensemble.ensemble_size

    def sample_context(self, member_rng, index_rng) -> SamplingContext:
        return SamplingContext(member=int(member_rng.integers(self.n_members)))

    def sample_contexts(self, rng, count) -> ContextBatch:
        return ContextBatch(rng.integers(self.n_members, size=count))

    def _columns(self, member: np.ndarray) -> np.ndarray:
        member = np.asarray(member, dtype=np.int64)
        if member.size and (member.min() < 0 or member.max() >= self.n_members):
            raise ShapeError(f"Miembro fuera de rango 0..{self.n_members - 1}")
        return member[:, None] * self.n_actions + np.arange(self.n_actions)

    def _graph_logits(self, h, contexts):
        return gather(self.head(h), self._columns(contexts.member))

    def head_components(self, encodings):
        h = self.trunk.numpy(np.asarray(encodings, dtype=np.float64))
        members = self.head.numpy(h).reshape(h.shape[0], self.n_members, self.n_actions)
        return {'features': h, 'members': members}

    def combine(self, components, contexts, paired=True):
        members = components['members']
        if paired:
            return members[np.arange(members.shape[0]), contexts.member]
        return np.transpose(members[:, contexts.member], (1, 0, 2))


class EpinetPolicy(DefaultPolicy):
    """
    Política con epinet aditiva

    logits = base(h) + Σ_j T(sg(h))[:, j]·z_j + α·Σ_j p_j(sg(h))·z_j

    donde T es una MLP entrenable que emite una matriz d_out×d_z y p_j son
    D_z redes prior congeladas desde la inicialización.
    """

    algo = 'enn'

    def __init__(self, trunk_config: TrunkConfig, epinet: EpinetConfig, rng: np.random.Generator,
                 eval_rng: np.random.Generator, eval_samples: int = 256, with_flow: bool = False):
        self.epinet_config = epinet
        super().__init__(trunk_config, epinet.n_actions, rng, with_flow)
        if eval_samples < 1:
            raise ConfigError(f"m_eval debe ser >= 1: {eval_samples}")
        self.eval_context = self.sample_contexts(eval_rng, eval_samples)

    def _build_heads(self, rng):
        cfg = self.epinet_config
        d_h = self.trunk_config.feature_dim
        self.head = Linear('head', d_h, self.n_actions, rng)
        self.epinet = MLP('epinet', (d_h, *cfg.epinet_hidden, self.n_actions * cfg.index_dim), rng)
        self.priors = [MLP(f'prior.{j}', (d_h, *cfg.prior_hidden, self.n_actions), rng, requires_grad=False)
                       for j in range(cfg.index_dim)]

    def _modules(self):
        return super()._modules() + [self.epinet, *self.priors]

    @property
    def index_dim(self) -> int:
        return self.epinet_config.index_dim

    @property
    def prior_scale(self) -> float:
        return self.epinet_config.prior_scale

    def sample_context(self, member_rng, index_rng) -> SamplingContext:
        return SamplingContext(z=tuple(index_rng.standard_normal(self.index_dim).tolist()))

    def sample_contexts(self, rng, count) -> ContextBatch:
        return ContextBatch(np.zeros(count, dtype=np.int64), z=rng.standard_normal((count, self.index_dim)))

    def _check_index(self, contexts: ContextBatch):
        if contexts.z is None or contexts.z.shape[-1] != self.index_dim:
            got = None if contexts.z is None else contexts.z.shape
            raise ShapeError(f"Índice epistémico con forma {got}, se esperaba (*, {self.index_dim})")

    def prior_outputs(self, features: np.ndarray) -> np.ndarray:
        """Salidas de las redes prior, forma (B, d_z, d_out)"""
        return np.stack([prior.numpy(features) for prior in self.priors], axis=1)

    def _prior_term(self, priors: np.ndarray, contexts: ContextBatch, paired: bool) -> np.ndarray:
        if paired:
            return self.prior_scale * np.einsum('bja,bj->ba', priors, contexts.z)
        return self.prior_scale * np.einsum('bja,mj->mba', priors, contexts.z)

    def _graph_logits(self, h, contexts):
        self._check_index(contexts)
        rows = h.shape[0]
        detached = stop_gradient(h)
        train = reshape(self.epinet(detached), (rows, self.n_actions, self.index_dim))
        train_term = sum_(mul(train, contexts.z[:, None, :]), axis=-1)
        prior_term = self._prior_term(self.prior_outputs(detached.value), contexts, paired=True)
        return add(add(self.head(h), train_term), prior_term)

    def head_components(self, encodings):
        h = self.trunk.numpy(np.asarray(encodings, dtype=np.float64))
        train = self.epinet.numpy(h).reshape(h.shape[0], self.n_actions, self.index_dim)
        return {'features': h, 'base': self.head.numpy(h), 'train': train,
                'priors': self.prior_outputs(h)}

    def combine(self, components, contexts, paired=True):
        self._check_index(contexts)
        prior_term = self._prior_term(components['priors'], contexts, paired)
        if paired:
            return components['base'] + np.einsum('baj,bj->ba', components['train'], contexts.z) + prior_term
        return components['base'][None] + np.einsum('baj,mj->mba', components['train'], contexts.z) + prior_term


class EpinetEnhancedPolicy(EpinetPolicy):
    """
    Epinet con un único miembro prior aleatorio

    Igual que EpinetPolicy salvo que el término prior es α·p_J(sg(h)) con J
    elegido uniformemente entre los D_z miembros. J se fija por trayectoria
    o se vuelve a muestrear en cada paso según ``resample``.
    """

    algo = 'enn-enhanced'

    def sample_context(self, member_rng, index_rng) -> SamplingContext:
        z = tuple(index_rng.standard_normal(self.index_dim).tolist())
        return SamplingContext(z=z, prior_member=int(index_rng.integers(self.index_dim)))

    def step_context(self, context, index_rng):
        if self.epinet_config.resample == 'step':
            return SamplingContext(context.member, context.z, int(index_rng.integers(self.index_dim)))
        return context

    def sample_contexts(self, rng, count):
        z = rng.standard_normal((count, self.index_dim))
        return ContextBatch(np.zeros(count, dtype=np.int64), z=z,
                            prior_member=rng.integers(self.index_dim, size=count))

    def _check_index(self, contexts):
        super()._check_index(contexts)
        if contexts.prior_member is None:
            raise ShapeError("Falta el miembro prior J en el contexto")
        if contexts.prior_member.size and (contexts.prior_member.min() < 0
                                           or contexts.prior_member.max() >= self.index_dim):
            raise ShapeError(f"Miembro prior fuera de rango 0..{self.index_dim - 1}")

    def _prior_term(self, priors, contexts, paired):
        if paired:
            return self.prior_scale * priors[np.arange(priors.shape[0]), contexts.prior_member]
        return self.prior_scale * np.transpose(priors[:, contexts.prior_member], (1, 0, 2))


def joint_prediction(policy: DefaultPolicy, encodings: np.ndarray, masks: np.ndarray,
                     labels: Sequence[int], n_samples: int, rng: np.random.Generator,
                     return_std: bool = False):
    """
    Probabilidad conjunta de etiquetas sobre varios estados

    Estima (1/M) Σ_m Π_t softmax(logits(x_t, z_m))_{y_t} con M índices
    epistémicos independientes.

    Args:
        policy: Política (las deterministas no dependen del índice)
        encodings: (τ, D) estados codificados
        masks: (τ, A) acciones legales
        labels: τ acciones observadas (legales)
        n_samples: M >= 1
        rng: Generador para los índices
        return_std: Si True devuelve también el error estándar de Monte Carlo

    Returns:
        float o Tuple[float, float]
    """
    if n_samples < 1:
        raise ValueError(f"n_samples debe ser >= 1: {n_samples}")
    labels = np.asarray(labels, dtype=np.int64)
    masks = np.asarray(masks, dtype=bool)
    if labels.shape[0] != np.shape(encodings)[0]:
        raise ShapeError("Se requiere una etiqueta por estado")
    if not np.all(masks[np.arange(labels.size), labels]):
        raise ShapeError("Las etiquetas deben ser acciones legales")

    contexts = policy.sample_contexts(rng, n_samples)
    logprobs = masked_log_softmax(policy.combine(policy.head_components(encodings), contexts, paired=False), masks)
    joint = np.exp(logprobs[:, np.arange(labels.size), labels].sum(axis=1))
    estimate = float(joint.mean())
    if return_std:
        return estimate, float(joint.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return estimate


def build_policy(env, run_config, init_rng: np.random.Generator, eval_rng: np.random.Generator) -> DefaultPolicy:
    """
    Construye la política indicada por ``run_config.algo``

    Args:
        env: Entorno (define el ancho de entrada y el número de acciones)
        run_config: RunConfig con los bloques policy y eval
        init_rng: Flujo de inicialización de pesos
        eval_rng: Flujo de los contextos fijos de evaluación
    """
    cfg = run_config.policy
    trunk = TrunkConfig(env.input_dim, tuple(cfg.hidden))
    with_flow = run_config.loss == 'db'
    algo = run_config.algo

    if algo == 'default':
        policy = DefaultPolicy(trunk, env.n_actions, init_rng, with_flow)
    elif algo == 'ts':
        policy = TSEnsemblePolicy(trunk, TSEnsembleConfig(cfg.ensemble_size, env.n_actions), init_rng, with_flow)
    elif algo in ('enn', 'enn-enhanced'):
        epinet = EpinetConfig(cfg.index_dim, env.n_actions, cfg.prior_scale, tuple(cfg.epinet_hidden),
                              tuple(cfg.prior_hidden), cfg.enhanced_prior_resample)
        cls = EpinetPolicy if algo == 'enn' else EpinetEnhancedPolicy
        policy = cls(trunk, epinet, init_rng, eval_rng, run_config.eval.m_eval, with_flow)
    else:
        raise ConfigError(f"Algoritmo desconocido: {algo}")

    n_params = sum(p.value.size for p in policy.parameters().values())
    logger.info(f"Política {algo} construida: {n_params} parámetros, {policy.n_members} miembro(s)")
    return policy
