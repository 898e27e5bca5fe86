"""
Validador unificado de manifiestos, capturas y muestras.
"""
import json
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class DatasetValidator:
    """Valida los contratos del dataset; cada método devuelve (es_válido, errores)."""

    CAPTURE_KEYS = ("id", "flash_paths", "room_path", "foreground_path", "nose_path", "mouth_path")
    SAMPLE_FILES = ("src.png", "dlt.png", "off.rawf", "soft.png", "soft_off.rawf", "w.png", "fg.png", "meta.json")
    ALLOWED_SPLITS = {"train", "val", "test"}

    @staticmethod
    def validate_manifest(manifest_path: Path, check_files: bool = True) -> Tuple[bool, List[str]]:
        """
        Validación de un manifiesto de capturas.

        Args:
            manifest_path: Ruta al JSON
            check_files: Si True, verifica que existan las imágenes referenciadas

        Returns:
            Tupla (es_válido, lista_de_errores)
        """
        errors = []
        if not manifest_path.exists():
            return False, [f"El manifiesto no existe: {manifest_path}"]

        try:
            data = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            return False, [f"JSON inválido: {e}"]

        captures = data.get("captures") if isinstance(data, dict) else None
        if not isinstance(captures, list) or not captures:
            return False, ["El manifiesto no contiene una lista 'captures' no vacía"]

        base = manifest_path.parent
        seen = set()
        for i, record in enumerate(captures):
            missing = [k for k in DatasetValidator.CAPTURE_KEYS if k not in record]
            if missing:
                errors.append(f"Captura #{i}: faltan claves {missing}")
                continue
            if record["id"] in seen:
                errors.append(f"Captura #{i}: id duplicado '{record['id']}'")
            seen.add(record["id"])
            split = record.get("split", "train")
            if split not in DatasetValidator.ALLOWED_SPLITS:
                errors.append(f"Captura '{record['id']}': split desconocido '{split}'")
            if not isinstance(record["flash_paths"], list) or len(record["flash_paths"]) < 2:
                errors.append(f"Captura '{record['id']}': se requieren al menos 2 imágenes de flash")
                continue
            if check_files:
                paths = list(record["flash_paths"]) + [record[k] for k in DatasetValidator.CAPTURE_KEYS[2:]]
                for rel in paths:
                    if not (base / rel).exists():
                        errors.append(f"Captura '{record['id']}': no existe {rel}")

        is_valid = not errors
        if is_valid:
            logger.debug(f"Manifiesto válido: {manifest_path.name} ({len(captures)} capturas)")
        else:
            logger.warning(f"Manifiesto inválido {manifest_path.name}: {errors[:5]}")
        return is_valid, errors

    @staticmethod
    def validate_capture(capture) -> Tuple[bool, List[str]]:
        """Tamaños coherentes, número de flashes, máscaras binarias y disjuntas."""
        errors = []
        shape = capture.room_image.shape[:2]
        count = len(capture.flash_images)
        if count < 1:
            errors.append("La captura no tiene imágenes de flash")
        if capture.expected_flash_count and count != capture.expected_flash_count:
            errors.append(f"Se esperaban {capture.expected_flash_count} flashes, hay {count}")
        for i, flash in enumerate(capture.flash_images):
            if flash.shape[:2] != shape:
                errors.append(f"Flash #{i} con tamaño {flash.shape[:2]} != {shape}")
        for name in ("foreground", "nose", "mouth"):
            mask = getattr(capture, name)
            if mask.shape[:2] != shape:
                errors.append(f"Máscara {name} con tamaño {mask.shape[:2]} != {shape}")
            elif not mask.is_binary():
                errors.append(f"La máscara {name} no es binaria")
        if not errors:
            nose, mouth, fg = capture.nose.pixels, capture.mouth.pixels, capture.foreground.pixels
            if np.any((nose > 0) & (mouth > 0)):
                errors.append("Las máscaras de nariz y boca se solapan")
            if np.any(((nose > 0) | (mouth > 0)) & (fg == 0)):
                errors.append("Nariz/boca fuera del primer plano")
            if capture.foreground.count() == 0:
                errors.append("Primer plano vacío")
        return not errors, errors

    @staticmethod
    def validate_sample(sample, tolerance: float = 1e-6) -> Tuple[bool, List[str]]:
        """Invariantes de TrainingSample (identidades, fondo, conteo M)."""
        errors = []
        fg = sample.foreground.pixels > 0.5
        bg = ~fg[..., 0]
        planes = sample.planes()
        shape = planes["src"].shape[:2]
        for name, arr in planes.items():
            if arr.shape[:2] != shape:
                errors.append(f"Plano {name} con tamaño {arr.shape[:2]} != {shape}")
        if errors:
            return False, errors

        off_err = np.abs(planes["off"] - (planes["src"] - planes["dlt"]))[fg[..., 0]]
        if off_err.size and off_err.max() > tolerance:
            errors.append(f"off != src − dlt (error máx {off_err.max():.2e})")
        soft_err = np.abs(planes["soft_off"] - (planes["soft"] - planes["dlt"]))[fg[..., 0]]
        if soft_err.size and soft_err.max() > tolerance:
            errors.append(f"soft_off != soft − dlt (error máx {soft_err.max():.2e})")
        for name in ("src", "dlt", "soft", "off", "soft_off", "hf_mask"):
            background = planes[name][bg]
            if background.size and np.abs(background).max() > tolerance:
                errors.append(f"El fondo de {name} no es el valor de relleno")
        if sample.fg_count != int(fg.sum()):
            errors.append(f"fg_count={sample.fg_count} != píxeles de primer plano {int(fg.sum())}")
        if sample.fg_count <= 0:
            errors.append("Muestra sin primer plano")
        w = planes["hf_mask"]
        if w.min() < 0 or w.max() > 1:
            errors.append("W fuera de [0,1]")
        return not errors, errors

    @staticmethod
    def describe_errors(errors: List[str], limit: int = 5) -> str:
        shown = "; ".join(errors[:limit])
        extra = f" (+{len(errors) - limit} más)" if len(errors) > limit else ""
        return shown + extra
