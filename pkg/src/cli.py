"""
Laboratorio de Exploración GFlowNet - Línea de Comandos
=======================================================

Este módulo expone las operaciones del laboratorio como comandos click.

Comandos:
- train: Entrena una corrida desde un archivo YAML
- reproduce: Ejecuta una matriz de experimentos completa
- heatmap: Dibuja la distribución aprendida de una corrida 2D
- eval: Reevalúa una corrida terminada con una muestra fresca
- serve: Levanta el navegador de artefactos (Flask)

Códigos de salida:
    0 éxito, 1 error de configuración o de invocación, 2 falla numérica (NaN/Inf)

Ejemplo de uso:
    python run.py train --config configs/fig56_8x8.yaml --seed 1 --out runs
    python run.py reproduce fig56-budget --jobs 4

Versión: 1.0.0
"""

import functools
import json
import logging

import click

from app import create_app
from config import get_config
from utils.errors import LabError, NonFiniteError
from utils.experiments import DEFAULT_SEEDS, MATRICES, reproduce
from utils.heatmap import emit_heatmap
from utils.run_config import load_run_config
from utils.trainer import evaluate_run, train

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 1
EXIT_NUMERICAL_FAILURE = 2


def exit_codes(command):
    """Traduce las excepciones del laboratorio a códigos de salida"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except NonFiniteError as e:
            click.echo(f"Falla numérica: {e}", err=True)
            raise SystemExit(EXIT_NUMERICAL_FAILURE)
        except (LabError, FileExistsError) as e:
            click.echo(f"Error de configuración: {e}", err=True)
            raise SystemExit(EXIT_CONFIG_ERROR)
    return wrapper


class LabGroup(click.Group):
    """
    Grupo de comandos que reporta los errores de uso de click con código 1

    click usa el código 2 para opciones faltantes o valores inválidos, y en
    el laboratorio 2 queda reservado para las fallas numéricas.
    """

    def main(self, *args, **kwargs):
        kwargs['standalone_mode'] = False
        try:
            return super().main(*args, **kwargs)
        except click.ClickException as e:
            e.show()
            raise SystemExit(EXIT_CONFIG_ERROR)
        except click.Abort:
            click.echo("Abortado", err=True)
            raise SystemExit(EXIT_CONFIG_ERROR)


def _parse_seeds(ctx, param, value):
    if value is None:
        return DEFAULT_SEEDS
    try:
        return tuple(int(s) for s in value.split(',') if s.strip())
    except ValueError:
        raise click.BadParameter("las semillas se escriben separadas por comas, por ejemplo 0,1,2")


@click.group(cls=LabGroup)
@click.option('--log-level', default=None, help='Nivel de logging (por defecto el de config.py)')
@click.pass_context
def cli(ctx, log_level):
    """Laboratorio de exploración para GFlowNets"""
    settings = get_config()
    logging.basicConfig(level=(log_level or settings.LOG_LEVEL).upper(), format=settings.LOG_FORMAT)
    ctx.obj = settings


@cli.command('train')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='Archivo YAML de la corrida')
@click.option('--seed', type=int, default=None, help='Reemplaza la semilla del archivo')
@click.option('--out', 'output_dir', default=None, help='Directorio base de salida')
@click.option('--resume', is_flag=True, help='Continuar desde el último checkpoint')
@exit_codes
def train_command(config_path, seed, output_dir, resume):
    """Entrena una corrida y escribe sus artefactos"""
    config = load_run_config(config_path, seed=seed, output_dir=output_dir)
    run_dir = train(config, resume=resume)
    click.echo(str(run_dir))


@cli.command('reproduce')
@click.argument('matrix', type=click.Choice(sorted(MATRICES)))
@click.option('--jobs', type=click.IntRange(min=1), default=None, help='Corridas en paralelo')
@click.option('--seeds', callback=_parse_seeds, default=None, help='Semillas separadas por comas')
@click.option('--out', 'output_dir', default=None, help='Directorio base de salida')
@click.pass_obj
@exit_codes
def reproduce_command(settings, matrix, jobs, seeds, output_dir):
    """Ejecuta todas las corridas de una matriz y escribe su resumen"""
    matrix_dir = reproduce(matrix, jobs=jobs or settings.JOBS, seeds=seeds,
                           output_dir=output_dir or settings.OUTPUT_DIR)
    click.echo(str(matrix_dir))


@cli.command('heatmap')
@click.argument('source', type=click.Path(exists=True))
@click.option('--n-eval', type=click.IntRange(min=1), default=None,
              help='Trayectorias si la distribución exacta no es enumerable')
@exit_codes
def heatmap_command(source, n_eval):
    """Escribe dist.csv, heatmap.pgm y heatmap.svg para una corrida 2D (o un dist.csv)"""
    paths = emit_heatmap(source, n_eval=n_eval)
    for path in paths.values():
        click.echo(str(path))


@cli.command('eval')
@click.argument('run_dir', type=click.Path(exists=True, file_okay=False))
@click.option('--n-eval', type=click.IntRange(min=1), required=True, help='Trayectorias de evaluación')
@exit_codes
def eval_command(run_dir, n_eval):
    """Reevalúa una corrida terminada y escribe eval.json"""
    result = evaluate_run(run_dir, n_eval)
    click.echo(json.dumps(result, indent=2, sort_keys=True))


@cli.command('serve')
@click.option('--host', default=None)
@click.option('--port', type=int, default=None)
@click.pass_obj
def serve_command(settings, host, port):
    """Navegador de artefactos de solo lectura"""
    app = create_app(settings)
    host = host or settings.HOST
    port = port or settings.PORT
    logger.info(f"Sirviendo {settings.OUTPUT_DIR} en http://{host}:{port}")
    app.run(debug=settings.DEBUG, port=port, host=host)


def main():
    cli(prog_name='gflownet-lab')


if __name__ == '__main__':
    main()
