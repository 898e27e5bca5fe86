"""
Jerarquía de excepciones del sistema de delighting.
"""
from pathlib import Path
from typing import List, Optional


class DelightError(Exception):
    """Error base del sistema."""

    exit_code = 1


class ContractViolation(DelightError, ValueError):
    """Precondición incumplida por el llamador."""


class MissingArtifactError(DelightError, FileNotFoundError):
    """Falta un archivo requerido (checkpoint, manifiesto, imagen)."""

    exit_code = 2


class BadInputError(DelightError):
    """Entrada ilegible o malformada."""

    exit_code = 3


class ConfigError(BadInputError):
    """Configuración inválida (claves desconocidas, tipos erróneos)."""


class InvariantViolation(DelightError):
    """Un invariante de dominio no se cumple."""

    exit_code = 4


class CheckpointError(DelightError):
    """Checkpoint corrupto o con digest inconsistente."""

    exit_code = 2


class SynthesisError(DelightError):
    """Fallo en una etapa de la síntesis de muestras."""

    def __init__(self, stage: str, capture_id: str, cause: Exception):
        self.stage = stage
        self.capture_id = capture_id
        self.cause = cause
        super().__init__(f"[{stage}] captura '{capture_id}': {cause}")
        # las violaciones de invariantes conservan su código
        if isinstance(cause, DelightError):
            self.exit_code = cause.exit_code


class TrainingDivergedError(DelightError):
    """Pérdida no finita durante el entrenamiento."""

    exit_code = 4

    def __init__(self, step: int, sample_ids: List[str], dump_path: Optional[Path] = None):
        self.step = step
        self.sample_ids = list(sample_ids)
        self.dump_path = dump_path
        super().__init__(
            f"Pérdida no finita en el paso {step} (muestras: {', '.join(self.sample_ids)}); "
            f"diagnóstico: {dump_path}"
        )
