"""
Mapas de Calor - Módulo de Utilidades
=====================================

Este módulo dibuja la distribución terminal aprendida sobre una HyperGrid
bidimensional: la guarda como tabla H×H (dist.csv) y como imagen en escala
de grises, donde la celda más probable es blanca.

Funcionalidades principales:
- Distribución exacta por programación dinámica (o muestreada si el
  entorno no es enumerable) a partir de una corrida terminada
- Lectura de un dist.csv existente para regenerar las imágenes
- Imagen PGM binaria (P5) y SVG construido con lxml

Ejemplo de uso:
    paths = emit_heatmap('runs/grid2d-h8-r00.0001-enn-tb-s0')
    paths['pgm']   # runs/.../heatmap.pgm

Versión: 1.0.0
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
from lxml import etree

from .errors import ConfigError, EnumerationLimitError, ShapeError
from .gflownet import exact_terminal_distribution
from .trainer import Trainer

logger = logging.getLogger(__name__)

SVG_NS = 'http://www.w3.org/2000/svg'
CELL_PX = 24


def grid_distribution(trainer, n_eval: Optional[int] = None) -> np.ndarray:
    """
    Distribución terminal de una corrida 2D como matriz H×H (fila = coordenada 0)

    Args:
        trainer: Trainer restaurado de la corrida
        n_eval: Trayectorias para la estimación muestreada cuando no hay DP

    Raises:
        ConfigError: Si la corrida no es una HyperGrid bidimensional
    """
    env = trainer.env
    if env.kind != 'hypergrid' or env.ndim != 2:
        raise ConfigError(f"El mapa de calor requiere una HyperGrid 2D, no {env!r}")
    try:
        probs = exact_terminal_distribution(env, trainer.policy)
    except EnumerationLimitError:
        logger.warning("Espacio no enumerable, se usa la distribución muestreada")
        probs = trainer.fresh_distribution(n_eval or trainer.config.eval.n_eval, trainer.batch_index).snapshot()
    return np.asarray(probs, dtype=np.float64).reshape(env.height, env.height)


def write_dist_csv(grid: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    pd.DataFrame(grid).to_csv(path, header=False, index=False, float_format='%.17g', lineterminator='\n')
    return path


def read_dist_csv(path: Union[str, Path]) -> np.ndarray:
    grid = pd.read_csv(path, header=None).to_numpy(dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise ShapeError(f"dist.csv debe ser una matriz cuadrada: {grid.shape}")
    if np.any(grid < 0) or not np.isfinite(grid).all():
        raise ShapeError("dist.csv contiene valores negativos o no finitos")
    return grid


def to_gray(grid: np.ndarray) -> np.ndarray:
    """Niveles 0..255 normalizados por el máximo (la celda más probable queda en 255)"""
    peak = float(np.max(grid)) if grid.size else 0.0
    if peak <= 0:
        return np.zeros(grid.shape, dtype=np.uint8)
    return np.rint(grid / peak * 255.0).astype(np.uint8)


def write_pgm(gray: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    rows, cols = gray.shape
    header = f"P5\n{cols} {rows}\n255\n".encode('ascii')
    path.write_bytes(header + np.ascontiguousarray(gray, dtype=np.uint8).tobytes())
    return path


def build_svg(grid: np.ndarray, gray: np.ndarray, cell: int = CELL_PX) -> etree._Element:
    rows, cols = gray.shape
    root = etree.Element(f'{{{SVG_NS}}}svg', nsmap={None: SVG_NS},
                         width=str(cols * cell), height=str(rows * cell),
                         viewBox=f"0 0 {cols * cell} {rows * cell}")
    for i in range(rows):
        for j in range(cols):
            level = int(gray[i, j])
            rect = etree.SubElement(root, f'{{{SVG_NS}}}rect', x=str(j * cell), y=str(i * cell),
                                    width=str(cell), height=str(cell),
                                    fill=f"rgb({level},{level},{level})")
            title = etree.SubElement(rect, f'{{{SVG_NS}}}title')
            title.text = f"({i}, {j}): {grid[i, j]:.6g}"
    return root


def write_heatmap_images(grid: np.ndarray, directory: Union[str, Path]) -> Dict[str, Path]:
    directory = Path(directory)
    gray = to_gray(grid)
    pgm = write_pgm(gray, directory / 'heatmap.pgm')
    svg = directory / 'heatmap.svg'
    svg.write_bytes(etree.tostring(build_svg(grid, gray), pretty_print=True,
                                   xml_declaration=True, encoding='utf-8'))
    return {'pgm': pgm, 'svg': svg}


def emit_heatmap(source: Union[str, Path], n_eval: Optional[int] = None) -> Dict[str, Path]:
    """
    Escribe dist.csv, heatmap.pgm y heatmap.svg

    Args:
        source: Directorio de una corrida (se restaura su checkpoint) o un dist.csv
        n_eval: Trayectorias para la estimación muestreada si no hay DP exacta

    Returns:
        Dict[str, Path]: Rutas escritas ('dist', 'pgm', 'svg')
    """
    source = Path(source)
    try:
        if source.is_dir():
            grid = grid_distribution(Trainer.from_run_dir(source), n_eval)
            directory = source
            dist_path = write_dist_csv(grid, directory / 'dist.csv')
        else:
            grid = read_dist_csv(source)
            directory = source.parent
            dist_path = source
        total = float(grid.sum())
        if total <= 0:
            raise ShapeError("La distribución no tiene masa")
        if abs(total - 1.0) > 1e-9:
            logger.warning(f"La distribución suma {total:.12g}; se normaliza")
            grid = grid / total
            dist_path = write_dist_csv(grid, dist_path)
        paths = {'dist': dist_path, **write_heatmap_images(grid, directory)}
    except Exception as e:
        logger.error(f"Error generando el mapa de calor desde {source}: {str(e)}")
        raise
    logger.info(f"Mapa de calor escrito en {directory} ({grid.shape[0]}x{grid.shape[1]})")
    return paths
