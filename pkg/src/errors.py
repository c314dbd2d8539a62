"""
Errores del motor de flujos.

Todas las excepciones heredan de HybridFlowError para que los agentes y la CLI
puedan capturarlas en un solo lugar y traducirlas a códigos de salida.
"""

from typing import Any, List, Optional


class HybridFlowError(Exception):
    """Error base del paquete."""


class DomainError(HybridFlowError):
    """Operación fuera de su dominio (log de no positivos, división por cero)."""

    def __init__(self, op: str, node_id: Optional[int], detail: str = ""):
        self.op = op
        self.node_id = node_id
        where = f"nodo {node_id}" if node_id is not None else "sin cinta"
        super().__init__(f"[Tape] {op} fuera de dominio ({where}) {detail}".strip())


class TapeError(HybridFlowError):
    """Uso incorrecto de la cinta (pérdida ajena o no escalar)."""


class BijectorError(HybridFlowError):
    """Parámetros inválidos o transformación no monótona."""


class RootFindingError(HybridFlowError):
    """El buscador de raíces no encontró un intervalo o no convergió."""

    def __init__(self, message: str, dimension: Optional[int] = None):
        self.dimension = dimension
        if dimension is not None:
            message = f"{message} (dimensión {dimension})"
        super().__init__(message)


class ConditionerError(HybridFlowError):
    """Red condicionadora mal construida o con dimensiones incompatibles."""


class ConfigurationError(HybridFlowError):
    """Especificación inconsistente; lista los campos culpables."""

    def __init__(self, message: str, fields: Optional[List[str]] = None):
        self.fields = list(fields or [])
        if self.fields:
            message = f"{message}: {', '.join(self.fields)}"
        super().__init__(message)


class FlowError(HybridFlowError):
    """Valor no finito dentro de una etapa del flujo."""

    def __init__(self, message: str, stage: Optional[int] = None):
        self.stage = stage
        if stage is not None:
            message = f"{message} (etapa {stage})"
        super().__init__(message)


class DataError(HybridFlowError):
    """Datos de entrada inválidos, con coordenadas de fila/columna."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        coords = []
        if row is not None:
            coords.append(f"fila {row}")
        if column is not None:
            coords.append(f"columna '{column}'")
        if coords:
            message = f"{message} ({', '.join(coords)})"
        super().__init__(message)


class TrainingError(HybridFlowError):
    """Entrenamiento abortado; conserva el reporte parcial."""

    def __init__(self, message: str, row: Optional[int] = None, report: Any = None):
        self.row = row
        self.report = report
        if row is not None:
            message = f"{message} (fila {row})"
        super().__init__(message)


class EvaluationError(HybridFlowError):
    """Diagnóstico no aplicable al modelo o a la entrada."""
