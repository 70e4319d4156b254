"""
Checkpoints - Módulo de Utilidades
==================================

Formato binario compartido con el arnés de experimentos:

    [8 bytes]  longitud del encabezado (uint64 little-endian)
    [N bytes]  encabezado JSON UTF-8:
               {"format_version": 1,
                "params": [{"name", "shape", "offset"}, ...],
                "blob_bytes": int,
                "extra": {...}}
    [resto]    blob de float64 little-endian con todos los parámetros
               concatenados en el orden del encabezado

La carga valida el archivo completo antes de devolver nada: un encabezado
corrupto nunca produce una carga parcial.
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import CheckpointFormatError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LENGTH = struct.Struct('<Q')
_LE_F64 = np.dtype('<f8')


def save_checkpoint(path: Union[str, Path], params: Mapping[str, np.ndarray],
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Guarda parámetros y metadatos en el formato de checkpoint

    La escritura es atómica: se escribe un archivo temporal y se renombra.

    Args:
        path: Ruta destino
        params: Arreglos por nombre, en el orden en que se serializan
        extra: Metadatos JSON-serializables (progreso, estado del optimizador, etc.)

    Returns:
        Path: Ruta escrita
    """
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, array in params.items():
        data = np.ascontiguousarray(array, dtype=_LE_F64)
        entries.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        blobs.append(data.tobytes(order='C'))
        offset += data.nbytes

    header = json.dumps({
        'format_version': FORMAT_VERSION,
        'params': entries,
        'blob_bytes': offset,
        'extra': extra or {},
    }, sort_keys=True).encode('utf-8')

    tmp_path = path.with_name(path.name + '.tmp')
    try:
        with open(tmp_path, 'wb') as f:
            f.write(_LENGTH.pack(len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp_path, path)
    except Exception as e:
        logger.error(f"Error guardando checkpoint {path}: {str(e)}")
        if tmp_path.exists():
            tmp_path.unlink()
        raise

    logger.info(f"Checkpoint guardado: {path} ({len(entries)} parámetros, {offset} bytes)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Carga un checkpoint completo

    Returns:
        Tuple[Dict[str, np.ndarray], Dict[str, Any]]: Parámetros por nombre y metadatos

    Raises:
        CheckpointFormatError: Si el encabezado o el blob son inválidos
    """
    raw = Path(path).read_bytes()
    if len(raw) < _LENGTH.size:
        raise CheckpointFormatError(f"Checkpoint truncado: {path}")
    (header_len,) = _LENGTH.unpack_from(raw, 0)
    header_end = _LENGTH.size + header_len
    if header_end > len(raw):
        raise CheckpointFormatError(f"Longitud de encabezado inválida en {path}")

    try:
        header = json.loads(raw[_LENGTH.size:header_end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"Encabezado JSON corrupto en {path}: {str(e)}") from e

    if not isinstance(header, dict) or header.get('format_version') != FORMAT_VERSION:
        raise CheckpointFormatError(f"Versión de formato no soportada en {path}")

    blob = raw[header_end:]
    if header.get('blob_bytes') != len(blob):
        raise CheckpointFormatError(
            f"Tamaño de blob {len(blob)} distinto al declarado {header.get('blob_bytes')}"
        )

    params: Dict[str, np.ndarray] = {}
    expected_offset = 0
    try:
        for entry in header['params']:
            name, shape, offset = entry['name'], tuple(int(d) for d in entry['shape']), int(entry['offset'])
            count = int(np.prod(shape, dtype=np.int64))
            if offset != expected_offset or name in params:
                raise CheckpointFormatError(f"Entrada fuera de orden o duplicada: {name}")
            end = offset + count * _LE_F64.itemsize
            if end > len(blob):
                raise CheckpointFormatError(f"Parámetro {name} excede el blob")
            params[name] = np.frombuffer(blob[offset:end], dtype=_LE_F64).astype(np.float64).reshape(shape)
            expected_offset = end
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"Entrada de parámetro inválida en {path}: {str(e)}") from e

    if expected_offset != len(blob):
        raise CheckpointFormatError(f"Bytes sobrantes en el blob de {path}")

    extra = header.get('extra') or {}
    logger.info(f"Checkpoint cargado: {path} ({len(params)} parámetros)")
    return params, extra
