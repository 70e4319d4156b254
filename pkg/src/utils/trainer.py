"""
Entrenamiento - Módulo de Utilidades
====================================

Este módulo contiene el ciclo externo de entrenamiento común a los cuatro
algoritmos: muestrear un lote de trayectorias (un contexto k o (z, J) por
trayectoria), calcular la pérdida TB o DB, dar un paso de Adam y registrar
métricas en cada punto de evaluación.

Funcionalidades principales:
- Entrenamiento determinista: (configuración, semilla) fija cada archivo de salida
- Evaluación periódica: L1 muestreada (ventana configurable), L1 exacta por
  programación dinámica, modos y regiones descubiertos, estimación de log Z
- Checkpoints periódicos con estado de Adam y progreso para reanudar
- Volcado del lote problemático a failed_batch.json ante valores no finitos
- Evaluación posterior de una corrida terminada (eval.json)

Clases principales:
- Trainer: Estado completo de una corrida
- RunRecord: Fila de métricas

Ejemplo de uso:
    config = load_run_config('configs/fig56_8x8.yaml')
    run_dir = train(config)

Versión: 1.0.0
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from .autodiff import backward
from .checkpoint import load_checkpoint, save_checkpoint
from .environments import ENUMERATION_LIMIT, build_env
from .errors import EnumerationLimitError, NonFiniteError
from .gflownet import (TrajectoryRngs, db_loss, exact_terminal_distribution, make_log_z,
                       sample_trajectories, tb_loss)
from .metrics import (EmpiricalDist, ModeSet, diversity, l1_distance, mode_regions_discovered,
                      modes_discovered, record_terminal)
from .optimizer import AdamState, adam_update
from .policies import build_policy
from .report_generator import ReportGenerator
from .run_config import RunConfig, run_config_from_dict, write_config_json
from .run_manager import RunManager
from .seeding import RngStreams

logger = logging.getLogger(__name__)

EVAL_CHUNK = 512
CHECKPOINT_NAME = 'checkpoint.bin'


@dataclass
class RunRecord:
    """Fila de métricas de un punto de evaluación"""
    trajectories_seen: int
    batch_loss: float
    logZ_estimate: float
    l1_sampled: Optional[float]
    l1_exact: Optional[float]
    modes_found: int
    mode_regions_found: int
    wall_ms: float = 0.0

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        del row['wall_ms']
        return row

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class Trainer:
    """
    Estado de una corrida de entrenamiento

    Atributos:
        config (RunConfig): Configuración validada
        env: Entorno
        policy: Política hacia adelante
        log_z (ParamTensor): log Z por miembro (solo TB)
        batch_index (int): Lotes de entrenamiento completados
        records (list): Filas de métricas registradas
    """

    def __init__(self, config: RunConfig, run_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.streams = RngStreams(config.seed)
        self.env = build_env(config.env)
        eval_rng = RngStreams(config.eval.eval_seed).generator('evaluation')
        self.policy = build_policy(self.env, config, self.streams.generator('initialization'), eval_rng)
        self.log_z = make_log_z(self.policy.n_members) if config.loss == 'tb' else None
        self.net_state = AdamState(lr=config.lr_net)
        self.logz_state = AdamState(lr=config.lr_logz)

        self.batch_index = 0
        self.last_loss = math.nan
        self.last_batch = []
        self.records: List[RunRecord] = []
        self.mode_set = ModeSet()
        self._elapsed_ms = 0.0
        self._exact_available = config.eval.exact

        enumerable = self.env.n_terminal <= ENUMERATION_LIMIT
        self.empirical = EmpiricalDist(self.env.n_terminal if enumerable else None,
                                       config.eval.window, config.eval.window_size)
        self.target = self.env.target_distribution()[0] if enumerable else None
        self.report = ReportGenerator()
        logger.info(f"Trainer inicializado: {config.run_name} ({config.n_batches} lotes de {config.batch_size})")

    @classmethod
    def from_run_dir(cls, run_dir: Union[str, Path]) -> 'Trainer':
        """Reconstruye una corrida desde config.json y su checkpoint"""
        run_dir = Path(run_dir)
        data = json.loads((run_dir / 'config.json').read_text(encoding='utf-8'))
        trainer = cls(run_config_from_dict(data), run_dir)
        if (run_dir / CHECKPOINT_NAME).exists():
            trainer.load(run_dir / CHECKPOINT_NAME)
        return trainer

    # -- entrenamiento --------------------------------------------------------

    def trajectory_rngs(self, batch: int, count: int) -> List[TrajectoryRngs]:
        return [TrajectoryRngs(self.streams.generator('sampling', batch, row),
                               self.streams.generator('member', batch, row),
                               self.streams.generator('epistemic_index', batch, row))
                for row in range(count)]

    def train_step(self) -> float:
        """
        Un paso de entrenamiento sobre un lote de trayectorias

        Returns:
            float: Pérdida del lote
        """
        exploration = self.config.exploration
        rngs = self.trajectory_rngs(self.batch_index, self.config.batch_size)
        self.last_batch = sample_trajectories(self.env, self.policy, rngs, explore=True,
                                              epsilon=exploration.epsilon,
                                              temperature=exploration.temperature)
        for trajectory in self.last_batch:
            self.mode_set.add(self.env, trajectory.terminal)
            if self.config.eval.window != 'fresh-eval' and self.target is not None:
                record_terminal(self.empirical, self.env, trajectory.terminal)

        if self.log_z is not None:
            loss = tb_loss(self.env, self.last_batch, self.policy, self.log_z)
        else:
            loss = db_loss(self.env, self.last_batch, self.policy)
        grads = backward(loss)
        adam_update(self.policy.trainable_parameters(), grads, self.net_state)
        if self.log_z is not None:
            adam_update({'log_z': self.log_z}, grads, self.logz_state)

        self.batch_index += 1
        self.last_loss = loss.item()
        return self.last_loss

    def logz_estimate(self) -> float:
        if self.log_z is not None:
            return float(np.mean(self.log_z.value))
        encoding = self.env.encode(self.env.initial_state())[None]
        return float(self.policy.flow_head.numpy(self.policy.trunk.numpy(encoding))[0, 0])

    # -- evaluación -----------------------------------------------------------

    def sample_terminals(self, count: int, explore: bool, key: int, stream: str = 'evaluation') -> List:
        """Estados terminales de ``count`` trayectorias con flujos propios de evaluación"""
        terminals = []
        exploration = self.config.exploration
        for start in range(0, count, EVAL_CHUNK):
            rows = range(start, min(count, start + EVAL_CHUNK))
            rngs = [TrajectoryRngs(self.streams.generator(stream, key, row, 0),
                                   self.streams.generator(stream, key, row, 1),
                                   self.streams.generator(stream, key, row, 2)) for row in rows]
            trajectories = sample_trajectories(self.env, self.policy, rngs, explore=explore,
                                               epsilon=exploration.epsilon if explore else 0.0,
                                               temperature=exploration.temperature if explore else 1.0)
            terminals.extend(t.terminal for t in trajectories)
        return terminals

    def fresh_distribution(self, n_eval: int, key: int) -> EmpiricalDist:
        dist = EmpiricalDist(self.env.n_terminal, 'fresh-eval')
        for terminal in self.sample_terminals(n_eval, explore=False, key=key):
            record_terminal(dist, self.env, terminal)
        return dist

    def exact_l1(self) -> Optional[float]:
        if not self._exact_available or self.target is None:
            return None
        try:
            return l1_distance(exact_terminal_distribution(self.env, self.policy), self.target)
        except EnumerationLimitError as e:
            logger.warning(f"L1 exacta deshabilitada: {str(e)}")
            self._exact_available = False
            return None

    def sampled_l1(self, n_eval: Optional[int] = None) -> Optional[float]:
        if self.target is None:
            return None
        if self.config.eval.window == 'fresh-eval' or n_eval is not None:
            dist = self.fresh_distribution(n_eval or self.config.eval.n_eval, self.batch_index)
        else:
            dist = self.empirical
        if dist.total == 0:
            logger.warning("Ventana de evaluación vacía, L1 muestreada omitida")
            return None
        return l1_distance(dist.snapshot(), self.target)

    def evaluate(self, wall_ms: float = 0.0) -> RunRecord:
        record = RunRecord(
            trajectories_seen=self.batch_index * self.config.batch_size,
            batch_loss=self.last_loss,
            logZ_estimate=self.logz_estimate(),
            l1_sampled=self.sampled_l1(),
            l1_exact=self.exact_l1(),
            modes_found=modes_discovered(self.mode_set, self.env),
            mode_regions_found=mode_regions_discovered(self.mode_set),
            wall_ms=round(wall_ms, 3),
        )
        self.records.append(record)
        logger.info(
            f"Evaluación: trayectorias={record.trajectories_seen}, pérdida={record.batch_loss:.4g}, "
            f"logZ={record.logZ_estimate:.4f}, L1={record.l1_sampled}, L1 exacta={record.l1_exact}, "
            f"modos={record.modes_found}/{self.env.n_modes}"
        )
        return record

    def summary(self, n_eval: Optional[int] = None) -> Dict[str, Any]:
        """
        Resumen final de la corrida (contenido de eval.json)

        Args:
            n_eval: Trayectorias de una evaluación fresca adicional; None usa
                el último registro de entrenamiento
        """
        last = self.records[-1] if self.records else None
        result: Dict[str, Any] = {
            'run_name': self.config.run_name,
            'algo': self.config.algo,
            'loss': self.config.loss,
            'seed': self.config.seed,
            'trajectories_seen': self.batch_index * self.config.batch_size,
            'logZ_estimate': self.logz_estimate(),
            'modes_found': len(self.mode_set),
            'mode_regions_found': mode_regions_discovered(self.mode_set),
            'n_modes': self.env.n_modes,
        }
        if n_eval is not None:
            result['l1_sampled'] = self.sampled_l1(n_eval)
            result['l1_exact'] = self.exact_l1()
        else:
            result['l1_sampled'] = last.l1_sampled if last else None
            result['l1_exact'] = last.l1_exact if last else self.exact_l1()

        if self.env.kind == 'bitseq':
            count = n_eval if n_eval is not None else self.config.eval.diversity_samples
            if count:
                samples = self.sample_terminals(count, explore=True, key=0, stream='diversity')
                distinct, fraction = diversity((s.bits for s in samples), self.env.half_length)
                result.update({'diversity_samples': count, 'diversity_count': distinct,
                               'diversity_fraction': fraction, 'catalan': self.env.n_modes})
        return result

    # -- checkpoints ----------------------------------------------------------

    def save(self, path: Union[str, Path]) -> Path:
        arrays = {name: p.value for name, p in self.policy.parameters().items()}
        if self.log_z is not None:
            arrays['log_z'] = self.log_z.value
        adam = {}
        for group, state in (('net', self.net_state), ('logz', self.logz_state)):
            for name in sorted(state.m):
                arrays[f'adam.{group}.m.{name}'] = state.m[name]
                arrays[f'adam.{group}.v.{name}'] = state.v[name]
            adam[group] = {'step': state.step, 'lr': state.lr}
        extra = {
            'run_name': self.config.run_name,
            'batch_index': self.batch_index,
            'last_loss': self.last_loss,
            'adam': adam,
            'mode_set': self.mode_set.to_dict(),
            'records': [r.to_row() for r in self.records],
            'empirical': self.empirical.state_dict(),
        }
        return save_checkpoint(path, arrays, extra)

    def load(self, path: Union[str, Path]):
        """
        Restaura parámetros, estado de Adam y progreso desde un checkpoint

        Raises:
            CheckpointFormatError: Si el archivo es inválido
        """
        arrays, extra = load_checkpoint(path)
        self.policy.load_arrays({k: v for k, v in arrays.items() if not k.startswith('adam.') and k != 'log_z'})
        if self.log_z is not None:
            self.log_z.assign(arrays['log_z'])
        for group, state in (('net', self.net_state), ('logz', self.logz_state)):
            prefix_m, prefix_v = f'adam.{group}.m.', f'adam.{group}.v.'
            state.m = {k[len(prefix_m):]: v for k, v in arrays.items() if k.startswith(prefix_m)}
            state.v = {k[len(prefix_v):]: v for k, v in arrays.items() if k.startswith(prefix_v)}
            state.step = int(extra['adam'][group]['step'])
        self.batch_index = int(extra['batch_index'])
        self.last_loss = float(extra['last_loss'])
        self.mode_set = ModeSet.from_dict(extra['mode_set'])
        self.records = [RunRecord(**r) for r in extra['records']]
        self._restore_wall_times(Path(path).with_name('timing.csv'))
        self.empirical.load_state_dict(extra['empirical'])
        logger.info(f"Corrida reanudada en el lote {self.batch_index}")

    def _restore_wall_times(self, timing_path: Path):
        """Recupera wall_ms desde timing.csv; el checkpoint no guarda tiempos de pared"""
        wall = self.report.read_timing(timing_path) if timing_path.exists() else {}
        for record in self.records:
            record.wall_ms = wall.get(record.trajectories_seen, 0.0)
        self._elapsed_ms = self.records[-1].wall_ms if self.records else 0.0

    # -- artefactos -----------------------------------------------------------

    def _write_tables(self):
        self.report.write_metrics(self.records, self.run_dir / 'metrics.csv')
        self.report.write_timing(({'trajectories_seen': r.trajectories_seen, 'wall_ms': r.wall_ms}
                                  for r in self.records), self.run_dir / 'timing.csv')

    def _dump_failed_batch(self, error: Exception):
        path = self.run_dir / 'failed_batch.json'
        payload = {
            'batch_index': self.batch_index,
            'error': str(error),
            'trajectories': [t.to_dict() for t in self.last_batch],
        }
        path.write_text(json.dumps(payload, indent=2), encoding='utf-8')
        logger.error(f"Valor no finito en el lote {self.batch_index}; lote volcado en {path}")

    def run(self, resume: bool = False) -> Path:
        """
        Ejecuta la corrida completa y escribe sus artefactos

        Args:
            resume: Continuar desde checkpoint.bin si existe

        Returns:
            Path: Directorio de la corrida
        """
        if self.run_dir is None:
            raise ValueError("Trainer.run requiere un directorio de corrida")
        checkpoint_path = self.run_dir / CHECKPOINT_NAME
        if resume and checkpoint_path.exists():
            self.load(checkpoint_path)
        write_config_json(self.config, self.run_dir / 'config.json')

        interval = self.config.eval.interval
        checkpoint_interval = self.config.checkpoint_interval or interval
        n_batches = self.config.n_batches
        started = time.perf_counter() - self._elapsed_ms / 1000.0

        with tqdm(total=n_batches, initial=self.batch_index, desc=self.config.run_name,
                  disable=not self.config.progress) as progress:
            while self.batch_index < n_batches:
                try:
                    self.train_step()
                except NonFiniteError as e:
                    self._dump_failed_batch(e)
                    raise
                progress.update(1)
                finished = self.batch_index == n_batches
                self._elapsed_ms = (time.perf_counter() - started) * 1000.0
                if self.batch_index % interval == 0 or finished:
                    self.evaluate(self._elapsed_ms)
                    self._write_tables()
                if self.batch_index % checkpoint_interval == 0 or finished:
                    self.save(checkpoint_path)

        if not self.records:
            self.evaluate(self._elapsed_ms)
            self._write_tables()
        summary = self.summary()
        (self.run_dir / 'eval.json').write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n',
                                                encoding='utf-8')
        logger.info(f"Corrida terminada: {self.run_dir}")
        return self.run_dir


def train(config: RunConfig, run_dir: Optional[Union[str, Path]] = None, resume: bool = False) -> Path:
    """
    Entrena una corrida y gestiona su directorio y estado

    Args:
        config: Configuración validada
        run_dir: Directorio de la corrida (por defecto output_dir/run_name)
        resume: Continuar desde el último checkpoint

    Returns:
        Path: Directorio de la corrida

    Raises:
        NonFiniteError: Si aparece NaN/Inf (el lote queda en failed_batch.json)
    """
    manager = RunManager(config.output_dir)
    run_dir = manager.create_run_dir(run_dir if run_dir is not None else config.run_name, resume=resume)
    try:
        Trainer(config, run_dir).run(resume=resume)
    except Exception as e:
        manager.mark(run_dir, 'failed', str(e))
        logger.error(f"Error en la corrida {run_dir}: {str(e)}")
        raise
    manager.mark(run_dir, 'complete')
    return run_dir


def evaluate_run(run_dir: Union[str, Path], n_eval: int) -> Dict[str, Any]:
    """
    Evalúa una corrida terminada con una muestra fresca y reescribe eval.json

    Returns:
        Dict[str, Any]: Contenido escrito en eval.json
    """
    trainer = Trainer.from_run_dir(run_dir)
    result = trainer.summary(n_eval=n_eval)
    path = Path(run_dir) / 'eval.json'
    path.write_text(json.dumps(result, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"Evaluación escrita: {path}")
    return result
