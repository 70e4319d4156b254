"""
Configuración de Corridas - Módulo de Utilidades
================================================

Este módulo carga y valida el archivo YAML que describe una corrida de
entrenamiento. Los valores por defecto viven en las dataclasses; el
archivo solo necesita indicar lo que cambia.

Ejemplo de archivo:
    algo: enn-enhanced
    loss: tb
    budget: 16000
    env:
      kind: hypergrid
      ndim: 2
      height: 8
      r0: 0.001
    policy:
      index_dim: 8
      prior_scale: 1.0
    eval:
      interval: 500

Ejemplo de uso:
    config = load_run_config('configs/fig1_8x8.yaml', seed=1)
    config.n_batches   # budget / batch_size
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

ALGOS = ('default', 'ts', 'enn', 'enn-enhanced')
LOSSES = ('tb', 'db')
ENV_KINDS = ('hypergrid', 'bitseq')


@dataclass(frozen=True)
class EnvConfig:
    """Bloque ``env``: campos de la HyperGrid o de las secuencias de bits"""
    kind: str = 'hypergrid'
    ndim: int = 2
    height: int = 8
    r0: float = 1e-3
    r1: float = 1.0
    r2: float = 3.0
    coord_norm: str = 'H'
    seq_halflen: int = 8
    r_valid: float = 1.0
    r_invalid: float = 1e-3

    def label(self) -> str:
        if self.kind == 'hypergrid':
            return f"grid{self.ndim}d-h{self.height}-r0{self.r0:g}"
        return f"bitseq-n{self.seq_halflen}"


@dataclass(frozen=True)
class PolicyConfig:
    """Bloque ``policy``: tronco, ensamble y epinet"""
    hidden: Tuple[int, ...] = (256, 256)
    ensemble_size: int = 4
    index_dim: int = 8
    prior_scale: float = 1.0
    epinet_hidden: Tuple[int, ...] = (64,)
    prior_hidden: Tuple[int, ...] = (32,)
    enhanced_prior_resample: str = 'trajectory'


@dataclass(frozen=True)
class EvalConfig:
    """
    Bloque ``eval``

    Atributos:
        interval: Lotes de entrenamiento entre evaluaciones
        n_eval: Trayectorias de la evaluación fresca
        window: 'fresh-eval', 'cumulative' o 'last-W'
        window_size: W para 'last-W'
        m_eval: Índices epistémicos de la política de evaluación
        eval_seed: Semilla fija de los contextos de evaluación
        exact: Registrar la L1 exacta por programación dinámica cuando sea posible
        diversity_samples: Secuencias muestreadas al final para la diversidad
    """
    interval: int = 500
    n_eval: int = 10000
    window: str = 'fresh-eval'
    window_size: int = 10000
    m_eval: int = 256
    eval_seed: int = 20240601
    exact: bool = True
    diversity_samples: int = 16000


@dataclass(frozen=True)
class ExplorationConfig:
    """Bloque ``exploration``: solo afecta al muestreo exploratorio"""
    temperature: float = 1.0
    epsilon: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    """Configuración completa de una corrida"""
    env: EnvConfig = field(default_factory=EnvConfig)
    algo: str = 'default'
    loss: str = 'tb'
    budget: int = 100000
    batch_size: int = 16
    lr_net: float = 1e-3
    lr_logz: float = 1e-1
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    output_dir: str = 'runs'
    name: Optional[str] = None
    progress: bool = True
    checkpoint_interval: Optional[int] = None

    @property
    def n_batches(self) -> int:
        return self.budget // self.batch_size

    @property
    def run_name(self) -> str:
        return self.name or f"{self.env.label()}-{self.algo}-{self.loss}-s{self.seed}"

    def validate(self) -> 'RunConfig':
        """
        Verifica los invariantes de la configuración

        Raises:
            ConfigError: Con el primer problema encontrado
        """
        env = self.env
        if env.kind not in ENV_KINDS:
            raise ConfigError(f"env.kind debe ser uno de {ENV_KINDS}: {env.kind}")
        if env.kind == 'hypergrid':
            if env.ndim < 1 or env.height < 2:
                raise ConfigError("La HyperGrid requiere ndim >= 1 y height >= 2")
            if env.r1 < 0 or env.r2 < 0:
                raise ConfigError("Se requiere r1, r2 >= 0")
            if env.r0 <= 0:
                raise ConfigError(f"env.r0 debe ser > 0 (recibido {env.r0}): con r0 = 0 las celdas fuera "
                                  f"de las bandas de recompensa tienen R = 0 y log R = -inf en la pérdida")
            if env.coord_norm not in ('H', 'H-1'):
                raise ConfigError(f"coord_norm debe ser 'H' o 'H-1': {env.coord_norm}")
        else:
            if env.seq_halflen < 1:
                raise ConfigError("seq_halflen debe ser >= 1")
            if not env.r_valid > env.r_invalid > 0:
                raise ConfigError("Se requiere r_valid > r_invalid > 0")

        if self.algo not in ALGOS:
            raise ConfigError(f"algo debe ser uno de {ALGOS}: {self.algo}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss debe ser uno de {LOSSES}: {self.loss}")
        if self.batch_size < 1 or self.budget < self.batch_size:
            raise ConfigError(f"budget ({self.budget}) y batch_size ({self.batch_size}) inválidos")
        if self.budget % self.batch_size:
            raise ConfigError(f"budget ({self.budget}) debe ser divisible por batch_size ({self.batch_size})")
        if self.lr_net <= 0 or self.lr_logz <= 0:
            raise ConfigError("Las tasas de aprendizaje deben ser positivas")
        if self.seed < 0:
            raise ConfigError(f"seed debe ser no negativa: {self.seed}")

        policy = self.policy
        if not policy.hidden or min(policy.hidden) < 1:
            raise ConfigError("policy.hidden requiere al menos una capa de ancho positivo")
        if policy.ensemble_size < 1 or policy.index_dim < 1:
            raise ConfigError("ensemble_size e index_dim deben ser >= 1")
        if policy.prior_scale < 0:
            raise ConfigError("prior_scale debe ser >= 0")
        if policy.enhanced_prior_resample not in ('trajectory', 'step'):
            raise ConfigError("enhanced_prior_resample debe ser 'trajectory' o 'step'")

        ev = self.eval
        if ev.interval < 1 or ev.n_eval < 1 or ev.m_eval < 1 or ev.window_size < 1:
            raise ConfigError("interval, n_eval, m_eval y window_size deben ser >= 1")
        if ev.window not in ('fresh-eval', 'cumulative', 'last-W'):
            raise ConfigError(f"eval.window desconocida: {ev.window}")
        if ev.diversity_samples < 0:
            raise ConfigError("diversity_samples debe ser >= 0")

        if self.exploration.temperature <= 0 or not 0 <= self.exploration.epsilon <= 1:
            raise ConfigError("Se requiere temperature > 0 y 0 <= epsilon <= 1")
        if self.checkpoint_interval is not None and self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval debe ser >= 1")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data['policy'] = {k: list(v) if isinstance(v, tuple) else v for k, v in data['policy'].items()}
        return data

    def replace(self, **changes) -> 'RunConfig':
        return dataclasses.replace(self, **changes)


_BLOCKS = {'env': EnvConfig, 'policy': PolicyConfig, 'eval': EvalConfig, 'exploration': ExplorationConfig}


def _coerce(annotation, value, where: str):
    # PyYAML lee '1e-3' como texto; los tipos se fijan con las anotaciones
    try:
        if annotation is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"'{where}' debe ser booleano: {value!r}")
            return value
        if isinstance(value, bool):
            raise ConfigError(f"'{where}' no admite un booleano")
        if annotation is float:
            return float(value)
        if annotation is int:
            number = float(value)
            if not number.is_integer():
                raise ConfigError(f"'{where}' debe ser entero: {value!r}")
            return int(number)
        if annotation is str:
            return str(value)
        if annotation == Optional[int]:
            return None if value is None else _coerce(int, value, where)
        if annotation == Optional[str]:
            return None if value is None else str(value)
        if annotation == Tuple[int, ...]:
            items = value if isinstance(value, (list, tuple)) else [value]
            return tuple(_coerce(int, item, where) for item in items)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Valor inválido para '{where}': {value!r}") from e
    return value


def _build(cls, data: Dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"Se esperaba un bloque clave-valor en '{where}'")
    data = {str(key).replace('-', '_'): value for key, value in data.items()}
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Claves desconocidas en '{where}': {unknown}")
    kwargs = {}
    for key, value in data.items():
        if cls is RunConfig and key in _BLOCKS:
            kwargs[key] = _build(_BLOCKS[key], value or {}, key)
        else:
            kwargs[key] = _coerce(known[key].type, value, f'{where}.{key}')
    return cls(**kwargs)


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Construye y valida un RunConfig desde un diccionario (YAML o config.json)"""
    return _build(RunConfig, data or {}, 'run').validate()


def load_run_config(path: Union[str, Path], seed: Optional[int] = None,
                    output_dir: Optional[str] = None) -> RunConfig:
    """
    Carga un archivo de corrida YAML (o JSON) y aplica las opciones de la línea de comandos

    Args:
        path: Ruta del archivo
        seed: Semilla que reemplaza a la del archivo
        output_dir: Directorio de salida que reemplaza al del archivo

    Returns:
        RunConfig: Configuración validada

    Raises:
        ConfigError: Si el archivo no existe, no es YAML válido o viola algún invariante
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"No se pudo leer la configuración {path}: {str(e)}") from e
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML inválido en {path}: {str(e)}") from e

    config = run_config_from_dict(data)
    changes = {}
    if seed is not None:
        changes['seed'] = int(seed)
    if output_dir is not None:
        changes['output_dir'] = str(output_dir)
    if changes:
        config = config.replace(**changes).validate()
    logger.info(f"Configuración cargada desde {path}: {config.run_name}")
    return config


def write_config_json(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path
