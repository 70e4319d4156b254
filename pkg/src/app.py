"""
Laboratorio de Exploración GFlowNet - Navegador de Artefactos
=============================================================

Este módulo contiene la aplicación Flask que expone, en modo de solo
lectura, las corridas terminadas y sus artefactos.

Funcionalidades principales:
- Listado de corridas con su estado y artefactos
- Detalle de una corrida: configuración, filas de métricas y evaluación final
- Descarga de artefactos (CSV, imágenes, checkpoint, resúmenes Excel)
- Limpieza de corridas fallidas o abandonadas
- Verificación de salud del sistema

Ejemplo de uso:
    python run.py serve
    # Acceder a http://localhost:5051

Versión: 1.0.0
"""

import json
import logging
from datetime import datetime

import pandas as pd
from flask import Flask, jsonify, send_file

from config import get_config
from utils.run_manager import RunManager

logger = logging.getLogger(__name__)

VERSION = '1.0.0'

MIMETYPES = {
    '.csv': 'text/csv',
    '.json': 'application/json',
    '.pgm': 'image/x-portable-graymap',
    '.svg': 'image/svg+xml',
    '.bin': 'application/octet-stream',
    '.xlsx': 'application/vnd.openxmlformats-officedocument.spreadsheetml.sheet',
}


def create_app(settings=None) -> Flask:
    """
    Construye la aplicación Flask

    Args:
        settings: Clase de configuración (por defecto la de LAB_ENV)

    Returns:
        Flask: Aplicación con las rutas registradas
    """
    settings = settings or get_config()
    app = Flask(__name__)
    app.config.from_object(settings)
    run_manager = RunManager(settings.OUTPUT_DIR, max_run_age=settings.MAX_RUN_AGE)
    app.extensions['run_manager'] = run_manager

    @app.route('/')
    def index():
        """
        Listado de corridas

        Ejemplo de respuesta:
            {
                "success": true,
                "runs": [{"run_id": "fig1-8x8/8x8-enn-tb-s0", "status": "complete", ...}]
            }
        """
        try:
            return jsonify({'success': True, 'runs': run_manager.list_runs()})
        except Exception as e:
            logger.error(f"Error listando corridas: {str(e)}")
            return jsonify({'success': False, 'message': f'Error interno del servidor: {str(e)}'}), 500

    @app.route('/runs/<path:run_id>')
    def run_detail(run_id):
        """Configuración, filas de metrics.csv y eval.json de una corrida"""
        try:
            info = run_manager.get_run_info(run_id)
            if info is None:
                return jsonify({'success': False, 'message': 'Corrida no encontrada'}), 404
            run_dir = run_manager.resolve_run(run_id)
            detail = dict(info)
            for name in ('config.json', 'eval.json'):
                if (run_dir / name).exists():
                    detail[name.split('.')[0]] = json.loads((run_dir / name).read_text(encoding='utf-8'))
            if (run_dir / 'metrics.csv').exists():
                metrics = pd.read_csv(run_dir / 'metrics.csv')
                detail['metrics'] = json.loads(metrics.to_json(orient='records'))
            return jsonify({'success': True, **detail})
        except Exception as e:
            logger.error(f"Error leyendo la corrida {run_id}: {str(e)}")
            return jsonify({'success': False, 'message': f'Error interno del servidor: {str(e)}'}), 500

    @app.route('/download/<path:run_id>/<artifact>')
    def download_artifact(run_id, artifact):
        """
        Descarga un artefacto de una corrida

        Ejemplo de uso:
            GET /download/fig1-8x8/8x8-enn-tb-s0/metrics.csv
        """
        try:
            path = run_manager.artifact_path(run_id, artifact)
            if path is None:
                return jsonify({'success': False, 'message': 'Archivo no encontrado'}), 404
            return send_file(
                path.resolve(),
                as_attachment=True,
                download_name=artifact,
                mimetype=MIMETYPES.get(path.suffix, 'application/octet-stream')
            )
        except Exception as e:
            logger.error(f"Error en la descarga {run_id}/{artifact}: {str(e)}")
            return jsonify({'success': False, 'message': 'Error interno del servidor'}), 500

    @app.route('/cleanup', methods=['POST'])
    def cleanup_runs():
        """Elimina corridas fallidas y corridas 'running' abandonadas"""
        try:
            removed = run_manager.cleanup_incomplete()
            return jsonify({'success': True, 'message': 'Limpieza completada', 'runs_removed': removed})
        except Exception as e:
            logger.error(f"Error en limpieza: {str(e)}")
            return jsonify({'success': False, 'message': f'Error en limpieza: {str(e)}', 'runs_removed': 0}), 500

    @app.route('/health')
    def health_check():
        try:
            return jsonify({
                'status': 'healthy',
                'version': VERSION,
                **run_manager.get_system_status(),
                'timestamp': datetime.now().isoformat()
            })
        except Exception as e:
            return jsonify({
                'status': 'unhealthy',
                'error': str(e),
                'timestamp': datetime.now().isoformat()
            }), 500

    return app
