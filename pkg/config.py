"""
Configuración del Laboratorio de Exploración GFlowNet
=====================================================

Este archivo contiene la configuración de la aplicación: directorio de
corridas, paralelismo de las matrices, logging y servidor de artefactos.

Los hiperparámetros de cada corrida no viven aquí: tienen sus valores por
defecto en src/utils/run_config.py y se ajustan con el archivo YAML de la
corrida.
"""

import os
from datetime import timedelta


class Config:
    """Configuración base de la aplicación"""

    # Configuración del servidor de artefactos
    SECRET_KEY = os.environ.get('SECRET_KEY', 'gflownet-lab-dev-key')
    DEBUG = os.environ.get('DEBUG', 'False').lower() == 'true'
    PORT = int(os.environ.get('PORT', 5051))
    HOST = os.environ.get('HOST', '127.0.0.1')
    TESTING = False

    # Corridas
    OUTPUT_DIR = os.environ.get('OUTPUT_DIR', 'runs')
    JOBS = int(os.environ.get('JOBS', 1))
    MAX_RUN_AGE = timedelta(hours=24)  # corridas 'running' más antiguas se consideran abandonadas

    # Configuración de logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class DevelopmentConfig(Config):
    """Configuración para desarrollo"""
    DEBUG = True
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Configuración para producción"""
    DEBUG = False
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'WARNING')
    SECRET_KEY = os.environ.get('SECRET_KEY')  # Debe estar definida en producción


class TestingConfig(Config):
    """Configuración para pruebas"""
    DEBUG = True
    TESTING = True
    MAX_RUN_AGE = timedelta(seconds=0)


# Diccionario de configuraciones
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config(config_name=None):
    """Obtiene la configuración según el entorno (variable LAB_ENV)"""
    if config_name is None:
        config_name = os.environ.get('LAB_ENV', 'default')

    return config.get(config_name, config['default'])
