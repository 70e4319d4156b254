"""
Errores del Laboratorio GFlowNet
================================

Jerarquía de excepciones compartida por todos los módulos. Las clases
heredan además de la excepción estándar equivalente para que el código
que captura ``ValueError`` o ``FloatingPointError`` siga funcionando.
"""


class LabError(Exception):
    """Error base del laboratorio"""


class ConfigError(LabError, ValueError):
    """Configuración de corrida inválida (código de salida 1)"""


class ShapeError(LabError, ValueError):
    """Dimensiones incompatibles entre tensores"""


class NonFiniteError(LabError, FloatingPointError):
    """Aparición de NaN/Inf en un paso hacia adelante o hacia atrás (código de salida 2)"""


class GraphError(LabError, RuntimeError):
    """Uso inválido del grafo de cómputo (pérdida no escalar, grafo mutado)"""


class EnumerationLimitError(LabError, ValueError):
    """El espacio de estados excede el límite de enumeración"""


class CheckpointFormatError(LabError, ValueError):
    """Archivo de checkpoint corrupto o con versión desconocida"""


class InvalidStateError(LabError, ValueError):
    """Consulta ilegal a un entorno (padres de s0, recompensa de una secuencia incompleta)"""
