"""
Gestor de Corridas - Módulo de Utilidades
=========================================

Este módulo gestiona los directorios de salida de las corridas: creación,
estado, listado, validación de artefactos y limpieza de corridas que no
terminaron.

Funcionalidades principales:
- Creación de directorios de corrida con archivo de estado (status.json)
- Registro del estado: running, complete, failed
- Listado de corridas y de sus artefactos
- Validación de nombres de artefactos y de rutas (sin salir del directorio base)
- Limpieza de corridas fallidas o abandonadas

Clases principales:
- RunManager: Clase principal para gestión de corridas

Ejemplo de uso:
    manager = RunManager('runs')
    run_dir = manager.create_run_dir('grid2d-h8-default-tb-s0')
    manager.mark(run_dir, 'complete')
    path = manager.artifact_path('grid2d-h8-default-tb-s0', 'metrics.csv')

Versión: 1.0.0
"""

import json
import logging
import shutil
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

logger = logging.getLogger(__name__)

ARTIFACTS = (
    'config.json',
    'metrics.csv',
    'timing.csv',
    'dist.csv',
    'heatmap.pgm',
    'heatmap.svg',
    'checkpoint.bin',
    'eval.json',
    'failed_batch.json',
    'summary.csv',
    'runs.csv',
    'summary.xlsx',
)

STATUS_FILE = 'status.json'
STATUSES = ('running', 'complete', 'failed')


class RunManager:
    """
    Gestor de directorios de corrida

    Atributos:
        base_dir (Path): Directorio raíz de las corridas
        max_run_age (timedelta): Antigüedad tras la cual una corrida 'running'
            se considera abandonada
    """

    def __init__(self, base_dir: Union[str, Path] = 'runs', max_run_age: timedelta = timedelta(hours=24)):
        self.base_dir = Path(base_dir)
        self.max_run_age = max_run_age
        self.base_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"RunManager inicializado con directorio base: {self.base_dir}")

    def create_run_dir(self, name: Union[str, Path], resume: bool = False) -> Path:
        """
        Crea (o reabre para reanudar) el directorio de una corrida

        Args:
            name: Nombre relativo al directorio base, o ruta absoluta
            resume: Permite reutilizar un directorio existente

        Returns:
            Path: Directorio de la corrida

        Raises:
            FileExistsError: Si la corrida ya terminó y no se pide reanudar
        """
        run_dir = Path(name) if Path(name).is_absolute() else self.base_dir / name
        if run_dir.exists() and not resume and self.status(run_dir) == 'complete':
            raise FileExistsError(f"La corrida ya existe y está completa: {run_dir}")
        run_dir.mkdir(parents=True, exist_ok=True)
        self.mark(run_dir, 'running')
        logger.info(f"Directorio de corrida listo: {run_dir}")
        return run_dir

    def mark(self, run_dir: Union[str, Path], status: str, message: str = '') -> None:
        if status not in STATUSES:
            raise ValueError(f"Estado desconocido: {status}")
        payload = {'status': status, 'updated': datetime.now().isoformat(timespec='seconds')}
        if message:
            payload['message'] = message
        (Path(run_dir) / STATUS_FILE).write_text(json.dumps(payload, indent=2) + '\n', encoding='utf-8')

    def status(self, run_dir: Union[str, Path]) -> Optional[str]:
        try:
            return json.loads((Path(run_dir) / STATUS_FILE).read_text(encoding='utf-8')).get('status')
        except (OSError, ValueError):
            return None

    def _run_dirs(self) -> List[Path]:
        return sorted(p.parent for p in self.base_dir.rglob(STATUS_FILE))

    def run_id(self, run_dir: Path) -> str:
        return Path(run_dir).resolve().relative_to(self.base_dir.resolve()).as_posix()

    def resolve_run(self, run_id: str) -> Optional[Path]:
        """
        Ruta de una corrida por su identificador, sin salir del directorio base

        Returns:
            Optional[Path]: Directorio si existe y es válido, None en caso contrario
        """
        base = self.base_dir.resolve()
        candidate = (base / run_id).resolve()
        if candidate != base and base not in candidate.parents:
            logger.warning(f"Identificador de corrida fuera del directorio base: {run_id}")
            return None
        if not (candidate / STATUS_FILE).exists():
            return None
        return candidate

    def artifact_path(self, run_id: str, artifact: str) -> Optional[Path]:
        if artifact not in ARTIFACTS:
            logger.warning(f"Artefacto no permitido: {artifact}")
            return None
        run_dir = self.resolve_run(run_id)
        if run_dir is None:
            return None
        path = run_dir / artifact
        return path if path.exists() else None

    def get_run_info(self, run_id: str) -> Optional[Dict[str, Any]]:
        run_dir = self.resolve_run(run_id)
        if run_dir is None:
            return None
        artifacts = [name for name in ARTIFACTS if (run_dir / name).exists()]
        return {
            'run_id': run_id,
            'status': self.status(run_dir),
            'artifacts': artifacts,
            'size_bytes': sum((run_dir / name).stat().st_size for name in artifacts),
        }

    def list_runs(self) -> List[Dict[str, Any]]:
        runs = []
        for run_dir in self._run_dirs():
            info = self.get_run_info(self.run_id(run_dir))
            if info is not None:
                runs.append(info)
        return runs

    def cleanup_incomplete(self, max_age: Optional[timedelta] = None) -> int:
        """
        Elimina corridas fallidas y corridas 'running' abandonadas

        Args:
            max_age: Antigüedad mínima de una corrida 'running' para eliminarla
                (por defecto max_run_age)

        Returns:
            int: Número de directorios eliminados
        """
        max_age = self.max_run_age if max_age is None else max_age
        now = datetime.now()
        removed = 0
        for run_dir in self._run_dirs():
            status = self.status(run_dir)
            if status == 'complete':
                continue
            age = now - datetime.fromtimestamp((run_dir / STATUS_FILE).stat().st_mtime)
            if status == 'running' and age < max_age:
                continue
            try:
                shutil.rmtree(run_dir)
                removed += 1
                logger.info(f"Corrida incompleta eliminada: {run_dir}")
            except OSError as e:
                logger.error(f"Error eliminando {run_dir}: {str(e)}")
        return removed

    def get_system_status(self) -> Dict[str, Any]:
        runs = self.list_runs()
        counts = {status: sum(1 for r in runs if r['status'] == status) for status in STATUSES}
        return {
            'base_dir': str(self.base_dir),
            'run_count': len(runs),
            'by_status': counts,
            'total_size_mb': round(sum(r['size_bytes'] for r in runs) / (1024 * 1024), 2),
            'max_run_age_hours': self.max_run_age.total_seconds() / 3600,
        }
