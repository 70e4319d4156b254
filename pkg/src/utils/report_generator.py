"""
Generador de Reportes - Módulo de Utilidades
============================================

Este módulo escribe las tablas de resultados del laboratorio: las métricas
de cada corrida en CSV y los resúmenes de las matrices de reproducción en
CSV y en Excel con formato.

Funcionalidades principales:
- metrics.csv con esquema fijo y versionado (encabezado, comillas RFC-4180,
  separador decimal '.')
- timing.csv con los tiempos de pared, separado para que metrics.csv sea
  idéntico byte a byte entre ejecuciones
- summary.csv y summary.xlsx para las matrices de experimentos
- Estilos de encabezado, bordes, paneles congelados y anchos de columna

Clases principales:
- ReportGenerator: Clase principal para generación de reportes

Ejemplo de uso:
    generator = ReportGenerator()
    generator.write_metrics(records, run_dir / 'metrics.csv')
    generator.write_summary(summary_df, matrix_dir)

Versión: 1.0.0
"""

import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1

METRICS_COLUMNS = [
    'schema_version',
    'trajectories_seen',
    'batch_loss',
    'logZ_estimate',
    'l1_sampled',
    'l1_exact',
    'modes_found',
    'mode_regions_found',
]

TIMING_COLUMNS = ['trajectories_seen', 'wall_ms']


class ReportGenerator:
    """
    Generador de tablas CSV y Excel

    Atributos:
        float_format (str): Formato de los flotantes en CSV (ida y vuelta exacta)
        styles (dict): Estilos de openpyxl para la hoja de resumen
    """

    def __init__(self):
        self.float_format = '%.17g'
        self.styles = {
            'header_font': Font(name='Arial', size=11, bold=True, color='FFFFFF'),
            'header_fill': PatternFill(start_color='366092', end_color='366092', fill_type='solid'),
            'header_alignment': Alignment(horizontal='center', vertical='center'),
            'data_font': Font(name='Arial', size=10),
            'number_format': '0.000000E+00',
            'border': Border(
                left=Side(style='thin'),
                right=Side(style='thin'),
                top=Side(style='thin'),
                bottom=Side(style='thin')
            )
        }

    def _write_csv(self, df: pd.DataFrame, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            df.to_csv(path, index=False, float_format=self.float_format, quoting=csv.QUOTE_MINIMAL,
                      lineterminator='\n', na_rep='')
        except Exception as e:
            logger.error(f"Error escribiendo {path}: {str(e)}")
            raise
        return path

    def metrics_frame(self, records: Iterable[Any]) -> pd.DataFrame:
        rows = []
        for record in records:
            row = record.to_row() if hasattr(record, 'to_row') else dict(record)
            row['schema_version'] = METRICS_SCHEMA_VERSION
            rows.append(row)
        df = pd.DataFrame(rows, columns=METRICS_COLUMNS)
        return df.astype({'schema_version': 'int64', 'trajectories_seen': 'int64',
                          'modes_found': 'int64', 'mode_regions_found': 'int64'})

    def write_metrics(self, records: Iterable[Any], path: Union[str, Path]) -> Path:
        """
        Escribe metrics.csv con una fila por evaluación

        Args:
            records: RunRecord (o diccionarios con las mismas claves)
            path: Ruta destino

        Returns:
            Path: Ruta escrita
        """
        df = self.metrics_frame(records)
        path = self._write_csv(df, path)
        logger.info(f"Métricas escritas: {path} ({len(df)} filas)")
        return path

    def write_timing(self, rows: Iterable[Dict[str, Any]], path: Union[str, Path]) -> Path:
        return self._write_csv(pd.DataFrame(list(rows), columns=TIMING_COLUMNS), path)

    def read_timing(self, path: Union[str, Path]) -> Dict[int, float]:
        """wall_ms por trajectories_seen desde timing.csv"""
        df = pd.read_csv(path)
        return {int(seen): float(wall) for seen, wall in zip(df['trajectories_seen'], df['wall_ms'])}

    def read_metrics(self, path: Union[str, Path]) -> pd.DataFrame:
        df = pd.read_csv(path)
        version = int(df['schema_version'].iloc[0]) if len(df) else METRICS_SCHEMA_VERSION
        if version != METRICS_SCHEMA_VERSION:
            raise ValueError(f"Versión de esquema de métricas no soportada: {version}")
        return df

    def write_runs(self, df: pd.DataFrame, path: Union[str, Path]) -> Path:
        """Una fila por corrida de una matriz (runs.csv)"""
        path = self._write_csv(df, path)
        logger.info(f"Corridas de la matriz escritas: {path} ({len(df)} filas)")
        return path

    # -- resúmenes ----------------------------------------------------------

    def write_summary(self, df: pd.DataFrame, directory: Union[str, Path]) -> List[Path]:
        """
        Escribe summary.csv y summary.xlsx en el directorio de la matriz

        Args:
            df: Tabla de resumen (una fila por corrida o una tabla pivote)
            directory: Directorio de la matriz

        Returns:
            List[Path]: Rutas escritas
        """
        directory = Path(directory)
        csv_path = self._write_csv(df, directory / 'summary.csv')
        xlsx_path = directory / 'summary.xlsx'
        try:
            xlsx_path.write_bytes(self.generate_summary_workbook(df).getvalue())
        except Exception as e:
            logger.error(f"Error generando {xlsx_path}: {str(e)}")
            raise
        logger.info(f"Resumen escrito: {csv_path} y {xlsx_path} ({len(df)} filas)")
        return [csv_path, xlsx_path]

    def generate_summary_workbook(self, df: pd.DataFrame, title: str = 'Resumen') -> io.BytesIO:
        """
        Genera un libro Excel con la tabla de resumen formateada

        Returns:
            io.BytesIO: Archivo Excel en memoria
        """
        output = io.BytesIO()
        workbook = Workbook()
        worksheet = workbook.active
        worksheet.title = title

        columns = [str(c) for c in df.columns]
        for col_num, column in enumerate(columns, 1):
            cell = worksheet.cell(row=1, column=col_num, value=column)
            cell.font = self.styles['header_font']
            cell.fill = self.styles['header_fill']
            cell.alignment = self.styles['header_alignment']
            cell.border = self.styles['border']

        for row_num, values in enumerate(df.itertuples(index=False), 2):
            for col_num, value in enumerate(values, 1):
                if pd.isna(value):
                    value = None
                elif hasattr(value, 'item'):
                    value = value.item()
                cell = worksheet.cell(row=row_num, column=col_num, value=value)
                cell.font = self.styles['data_font']
                cell.border = self.styles['border']
                if isinstance(value, float):
                    cell.number_format = self.styles['number_format']

        for col_num, column in enumerate(columns, 1):
            letter = worksheet.cell(row=1, column=col_num).column_letter
            worksheet.column_dimensions[letter].width = min(max(12, len(column) + 4), 40)
        worksheet.row_dimensions[1].height = 25
        worksheet.freeze_panes = 'A2'
        worksheet.sheet_properties.tabColor = '366092'

        workbook.save(output)
        output.seek(0)
        return output
