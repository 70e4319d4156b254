"""
Experimentos - Módulo de Utilidades
===================================

Este módulo define las matrices de reproducción (entorno × algoritmo ×
semilla), las ejecuta en paralelo con un proceso por corrida y resume los
resultados en tablas CSV/Excel con la misma disposición que las tablas de
resultados publicadas.

Funcionalidades principales:
- Matrices: fig1-8x8, fig56-budget, fig3-4d, fig3-r0-sweep, table2-sparse,
  table1-bitseq
- Ejecución paralela con ProcessPoolExecutor (--jobs)
- Reanudación: las corridas completas se reutilizan, las interrumpidas
  continúan desde su checkpoint
- Resúmenes por corrida y tablas pivote (L1 ×10⁻⁵, diversidad por longitud)

Ejemplo de uso:
    matrix_dir = reproduce('fig1-8x8', jobs=4)
    # matrix_dir/summary.csv, matrix_dir/summary.xlsx

Versión: 1.0.0
"""

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
from tqdm import tqdm

from .errors import ConfigError
from .report_generator import ReportGenerator
from .run_config import ALGOS, RunConfig, run_config_from_dict
from .run_manager import RunManager
from .trainer import train

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2)
DB_ALGOS = ('default', 'enn', 'enn-enhanced')

ALGO_LABELS = {
    'default': 'Default-GFN',
    'ts': 'TS-GFN',
    'enn': 'ENN-GFN',
    'enn-enhanced': 'ENN-GFN-Enhanced',
}


def _grid(ndim: int, height: int, r0: float) -> Dict[str, Any]:
    return {'kind': 'hypergrid', 'ndim': ndim, 'height': height, 'r0': r0}


# grupo -> (ajustes de la corrida, algoritmos)
MATRICES: Dict[str, List[Tuple[str, Dict[str, Any], Sequence[str]]]] = {
    'fig1-8x8': [
        ('8x8', {'env': _grid(2, 8, 1e-4), 'budget': 100000}, ALGOS),
    ],
    'fig56-budget': [
        ('8x8-16k', {'env': _grid(2, 8, 1e-3), 'budget': 16000}, ALGOS),
        ('16x16-32k', {'env': _grid(2, 16, 1e-3), 'budget': 32000}, ALGOS),
    ],
    'fig3-4d': [
        ('4d-h16-r0_1e-3', {'env': _grid(4, 16, 1e-3), 'budget': 100000}, ALGOS),
        ('4d-h8-r0_1e-4', {'env': _grid(4, 8, 1e-4), 'budget': 100000}, ALGOS),
    ],
    'fig3-r0-sweep': [
        (f'4d-h8-r0_{r0:g}', {'env': _grid(4, 8, r0), 'budget': 100000}, ALGOS)
        for r0 in (1e-1, 1e-2, 1e-3)
    ],
    'table2-sparse': [
        ('64', {'env': _grid(2, 64, 1e-5), 'loss': 'db', 'budget': 200000}, DB_ALGOS),
        ('128', {'env': _grid(2, 128, 1e-5), 'loss': 'db', 'budget': 200000}, DB_ALGOS),
    ],
    'table1-bitseq': [
        (str(2 * n), {'env': {'kind': 'bitseq', 'seq_halflen': n}, 'budget': 100000,
                      'eval': {'diversity_samples': 16000}}, ('default', 'enn'))
        for n in (8, 12, 16)
    ],
}

SUMMARY_COLUMNS = [
    'group', 'algorithm', 'algo', 'loss', 'seed', 'status', 'trajectories_seen', 'l1_exact',
    'l1_sampled', 'modes_found', 'n_modes', 'mode_regions_found', 'logZ_estimate',
    'diversity_count', 'diversity_fraction', 'run_dir',
]


@dataclass(frozen=True)
class MatrixJob:
    """Una corrida dentro de una matriz"""
    matrix: str
    group: str
    config: RunConfig

    @property
    def label(self) -> str:
        if self.config.loss == 'db' and self.config.algo == 'default':
            return 'DB-GFN'
        return ALGO_LABELS[self.config.algo]


def _merge(base: Dict[str, Any], changes: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in changes.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def matrix_jobs(name: str, seeds: Sequence[int] = DEFAULT_SEEDS, output_dir: Union[str, Path] = 'runs',
                overrides: Optional[Mapping[str, Any]] = None) -> List[MatrixJob]:
    """
    Corridas de una matriz en orden estable (grupo, algoritmo, semilla)

    Args:
        name: Nombre de la matriz
        seeds: Semillas de cada combinación
        output_dir: Directorio base; las corridas quedan en output_dir/name/
        overrides: Ajustes aplicados a todas las corridas (por ejemplo presupuestos reducidos)

    Raises:
        ConfigError: Si la matriz no existe o algún ajuste es inválido
    """
    if name not in MATRICES:
        raise ConfigError(f"Matriz desconocida: {name}. Disponibles: {sorted(MATRICES)}")
    matrix_dir = Path(output_dir) / name
    jobs = []
    for group, settings, algos in MATRICES[name]:
        for algo in algos:
            for seed in seeds:
                data = _merge(settings, {'algo': algo, 'seed': int(seed), 'output_dir': str(matrix_dir),
                                          'progress': False})
                if overrides:
                    data = _merge(data, overrides)
                data['name'] = f"{group}-{algo}-{data.get('loss', 'tb')}-s{seed}"
                jobs.append(MatrixJob(name, group, run_config_from_dict(data)))
    return jobs


def _run_job(job: MatrixJob) -> Dict[str, Any]:
    """Ejecuta (o reutiliza) una corrida; se llama dentro de un proceso del pool"""
    manager = RunManager(job.config.output_dir)
    run_dir = Path(job.config.output_dir) / job.config.run_name
    if manager.status(run_dir) != 'complete':
        train(job.config, resume=True)
    else:
        logger.info(f"Corrida completa reutilizada: {run_dir}")
    result = json.loads((run_dir / 'eval.json').read_text(encoding='utf-8'))
    result.update({'run_dir': str(run_dir), 'status': 'complete'})
    return result


def summary_row(job: MatrixJob, result: Mapping[str, Any]) -> Dict[str, Any]:
    row = {column: result.get(column) for column in SUMMARY_COLUMNS}
    row.update({'group': job.group, 'algorithm': job.label, 'algo': job.config.algo,
                'loss': job.config.loss, 'seed': job.config.seed})
    return row


def pivot_table2(runs: pd.DataFrame) -> pd.DataFrame:
    """L1 exacta final ×10⁻⁵: filas por semilla más la mediana, columnas algoritmo × tamaño"""
    values = runs.assign(l1_x1e5=pd.to_numeric(runs['l1_exact'], errors='coerce') * 1e5)
    table = values.set_index(['seed', 'algorithm', 'group'])['l1_x1e5'].unstack(['algorithm', 'group'])
    order = [('DB-GFN' if algo == 'default' else ALGO_LABELS[algo], group)
             for algo in DB_ALGOS for group in ('64', '128')]
    table = table.reindex(columns=pd.MultiIndex.from_tuples(order, names=['algorithm', 'group']))
    table.loc['median'] = table.median(axis=0)
    table.columns = [f"{algorithm} {group}x{group}" for algorithm, group in table.columns]
    table.index.name = 'seed'
    return table.reset_index()


def pivot_table1(runs: pd.DataFrame) -> pd.DataFrame:
    """Secuencias distintas y válidas (mediana sobre semillas) por modelo y longitud"""
    values = runs.assign(model=runs['algo'].map({'enn': 'with-epinet', 'default': 'without-epinet'}),
                         length=runs['group'].astype(int),
                         diversity_count=pd.to_numeric(runs['diversity_count'], errors='coerce'),
                         diversity_fraction=pd.to_numeric(runs['diversity_fraction'], errors='coerce'))
    grouped = values.groupby(['model', 'length'], sort=False)
    table = grouped.agg(diversity_count=('diversity_count', 'median'),
                        diversity_fraction=('diversity_fraction', 'median'),
                        seeds=('seed', 'count')).reset_index()
    index = pd.MultiIndex.from_product([('with-epinet', 'without-epinet'), (16, 24, 32)],
                                       names=['model', 'length'])
    return table.set_index(['model', 'length']).reindex(index).reset_index()


def summarize(name: str, runs: pd.DataFrame) -> pd.DataFrame:
    """Tabla de resumen de una matriz a partir de sus filas por corrida"""
    if name == 'table2-sparse':
        return pivot_table2(runs)
    if name == 'table1-bitseq':
        return pivot_table1(runs)
    return runs


def reproduce(name: str, jobs: int = 1, seeds: Sequence[int] = DEFAULT_SEEDS,
              output_dir: Union[str, Path] = 'runs', overrides: Optional[Mapping[str, Any]] = None,
              progress: bool = True) -> Path:
    """
    Ejecuta una matriz de reproducción completa

    Args:
        name: Nombre de la matriz
        jobs: Procesos en paralelo (1 = secuencial en este proceso)
        seeds: Semillas
        output_dir: Directorio base
        overrides: Ajustes comunes a todas las corridas
        progress: Barra de progreso sobre las corridas de la matriz

    Returns:
        Path: Directorio de la matriz con summary.csv, summary.xlsx y runs.csv

    Raises:
        La primera excepción de una corrida fallida, después de escribir el resumen
    """
    if jobs < 1:
        raise ConfigError(f"jobs debe ser >= 1: {jobs}")
    planned = matrix_jobs(name, seeds, output_dir, overrides)
    manager = RunManager(output_dir)
    matrix_dir = manager.create_run_dir(name, resume=True)
    logger.info(f"Matriz {name}: {len(planned)} corridas con {jobs} proceso(s)")

    results: Dict[int, Dict[str, Any]] = {}
    failures: List[Exception] = []

    def collect(i: int, outcome):
        try:
            results[i] = outcome()
        except Exception as e:
            logger.error(f"Error en la corrida {planned[i].config.run_name}: {str(e)}")
            failures.append(e)
            results[i] = {'status': 'failed'}

    with tqdm(total=len(planned), desc=name, disable=not progress) as bar:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                futures = {executor.submit(_run_job, job): i for i, job in enumerate(planned)}
                for future in as_completed(futures):
                    collect(futures[future], future.result)
                    bar.update(1)
        else:
            for i, job in enumerate(planned):
                collect(i, lambda job=job: _run_job(job))
                bar.update(1)

    runs = pd.DataFrame([summary_row(job, results[i]) for i, job in enumerate(planned)],
                        columns=SUMMARY_COLUMNS)
    report = ReportGenerator()
    report.write_runs(runs, matrix_dir / 'runs.csv')
    report.write_summary(summarize(name, runs), matrix_dir)

    if failures:
        manager.mark(matrix_dir, 'failed', f"{len(failures)} corrida(s) fallida(s)")
        raise failures[0]
    manager.mark(matrix_dir, 'complete')
    logger.info(f"Matriz {name} completa: {matrix_dir}")
    return matrix_dir
