"""
Configuración común de las pruebas
==================================

Agrega la raíz del repositorio y src/ al path (como run.py) y registra la
marca ``slow`` para las reproducciones largas, que solo corren con
``pytest -m slow``.
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))
sys.path.insert(0, str(ROOT / 'src'))

from utils.run_config import run_config_from_dict  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: reproducciones completas de varios minutos')


def pytest_collection_modifyitems(config, items):
    if 'slow' in (config.getoption('markexpr') or ''):
        return
    skip_slow = pytest.mark.skip(reason='reproducción larga; usar -m slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def tiny_config(tmp_path=None, **changes):
    """Corrida pequeña sobre una grilla 4x4 que termina en segundos"""
    data = {
        'algo': 'default',
        'loss': 'tb',
        'budget': 64,
        'batch_size': 8,
        'progress': False,
        'env': {'kind': 'hypergrid', 'ndim': 2, 'height': 4},
        'policy': {'hidden': [16, 16], 'ensemble_size': 3, 'index_dim': 3,
                   'epinet_hidden': [8], 'prior_hidden': [4]},
        'eval': {'interval': 4, 'n_eval': 64, 'm_eval': 8, 'diversity_samples': 32},
    }
    if tmp_path is not None:
        data['output_dir'] = str(tmp_path / 'runs')
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return run_config_from_dict(data)


@pytest.fixture
def make_config(tmp_path):
    def factory(**changes):
        return tiny_config(tmp_path, **changes)
    return factory
