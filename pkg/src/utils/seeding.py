"""
Flujos de Números Aleatorios - Módulo de Utilidades
===================================================

Una semilla raíz deriva flujos independientes con nombre. Cada flujo se
identifica por su nombre y por claves enteras adicionales (lote,
trayectoria), de modo que agregar evaluaciones o reanudar desde un
checkpoint nunca altera los números que consume el entrenamiento.

Flujos usados por el laboratorio:
- initialization: pesos iniciales de las redes
- sampling: acciones durante el muestreo de trayectorias
- member: miembro del ensamble (TS-GFN)
- epistemic_index: índice z y miembro J del prior (ENN-GFN)
- evaluation: muestreo fresco de evaluación y contextos de eval_logits
- diversity: secuencias exploratorias para la métrica de diversidad

Ejemplo de uso:
    streams = RngStreams(0)
    rng = streams.generator('sampling', batch, row)
"""

import zlib

import numpy as np

STREAMS = ('initialization', 'sampling', 'member', 'epistemic_index', 'evaluation', 'diversity')


def stream_id(name: str) -> int:
    """Identificador estable de un flujo (independiente de PYTHONHASHSEED)"""
    return zlib.crc32(name.encode('utf-8'))


class RngStreams:
    """
    Generador de flujos aleatorios deterministas

    Atributos:
        seed (int): Semilla raíz de la corrida
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"La semilla debe ser no negativa: {seed}")
        self.seed = int(seed)

    def sequence(self, name: str, *keys: int) -> np.random.SeedSequence:
        if name not in STREAMS:
            raise ValueError(f"Flujo aleatorio desconocido: {name}")
        return np.random.SeedSequence(entropy=self.seed,
                                      spawn_key=(stream_id(name), *(int(k) for k in keys)))

    def generator(self, name: str, *keys: int) -> np.random.Generator:
        """
        Crea un generador nuevo para (nombre, claves)

        Llamadas repetidas con los mismos argumentos devuelven generadores
        en el mismo estado inicial.
        """
        return np.random.Generator(np.random.PCG64(self.sequence(name, *keys)))

