"""
Gestor de artefactos: muestras sintetizadas, índices, registros de ejecución e informes.
"""
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from models.capture import TrainingSample
from models.errors import DelightError
from utils.image_io import write_png, write_rawf

logger = logging.getLogger(__name__)

PACKAGE_VERSION = "0.3.0"
INDEX_FILENAME = "samples.json"
RUN_RECORD_FILENAME = "run.json"


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    return str(value)


class ResultManager:
    """Escribe los artefactos del pipeline en un directorio base."""

    SAMPLE_LAYOUT = {
        "src": ("src.png", 16),
        "dlt": ("dlt.png", 16),
        "soft": ("soft.png", 16),
        "hf_mask": ("w.png", 16),
        "foreground": ("fg.png", 8),
    }
    RAW_LAYOUT = {"off": "off.rawf", "soft_off": "soft_off.rawf"}

    def __init__(self, base_dir: Path):
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)

    # ========== ESCRITURA BÁSICA ==========

    def _safe_write_json(self, file_path: Path, data: Dict[str, Any]) -> bool:
        """Escritura atómica de JSON (archivo temporal + rename)."""
        tmp_path = file_path.with_suffix(file_path.suffix + ".tmp")
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp_path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True, default=_to_jsonable)
                f.write("\n")
            tmp_path.replace(file_path)
            logger.debug(f"JSON guardado: {file_path.name}")
            return True
        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Error escribiendo JSON {file_path.name}: {e}")
            tmp_path.unlink(missing_ok=True)
            return False

    def write_json(self, relative: str, data: Dict[str, Any]) -> Path:
        """Escribe un JSON obligatorio; un fallo es un error."""
        path = self.base_dir / relative
        if not self._safe_write_json(path, data):
            raise DelightError(f"No se pudo escribir {path}")
        return path

    # ========== MUESTRAS ==========

    def save_sample(self, sample: TrainingSample, relative_dir: Optional[str] = None) -> Path:
        """Guarda una muestra con el layout src/dlt/soft/w/fg PNG + off/soft_off rawf + meta.json."""
        sample_dir = self.base_dir / (relative_dir or sample.sample_id)
        sample_dir.mkdir(parents=True, exist_ok=True)
        planes = sample.planes()
        for plane, (filename, depth) in self.SAMPLE_LAYOUT.items():
            write_png(sample_dir / filename, planes[plane], bit_depth=depth)
        for plane, filename in self.RAW_LAYOUT.items():
            write_rawf(sample_dir / filename, planes[plane])

        meta = dict(sample.meta)
        meta.update({"sample_id": sample.sample_id, "fg_count": sample.fg_count,
                     "height": sample.shape[0], "width": sample.shape[1]})
        if not self._safe_write_json(sample_dir / "meta.json", meta):
            raise DelightError(f"No se pudo escribir meta.json de {sample.sample_id}")
        logger.debug(f"Muestra guardada: {sample_dir}")
        return sample_dir

    def write_samples_index(self, entries: List[Dict[str, Any]], extra: Dict[str, Any]) -> Path:
        index = {"version": 1, "samples": entries}
        index.update(extra)
        path = self.write_json(INDEX_FILENAME, index)
        logger.info(f"Índice de muestras: {len(entries)} entradas → {path}")
        return path

    # ========== AUDITORÍA ==========

    def write_run_record(self, command: str, argv: Sequence[str], config: Dict[str, Any],
                         outcome: Optional[Dict[str, Any]] = None) -> Path:
        """``run.json``: subcomando, argv, configuración efectiva, versión y marca de tiempo."""
        record = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "version": PACKAGE_VERSION,
            "python": sys.version.split()[0],
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if outcome is not None:
            record["outcome"] = outcome
        return self.write_json(RUN_RECORD_FILENAME, record)

    # ========== MÉTRICAS ==========

    def write_metrics_csv(self, rows: Iterable[Dict[str, Any]], filename: str = "metrics.csv") -> Path:
        frame = pd.DataFrame(list(rows))
        path = self.base_dir / filename
        frame.to_csv(path, index=False, float_format="%.8f")
        logger.debug(f"CSV guardado: {path.name} ({len(frame)} filas)")
        return path

    def append_jsonl(self, filename: str, record: str) -> Path:
        path = self.base_dir / filename
        with open(path, "a", encoding="utf-8") as f:
            f.write(record.rstrip("\n") + "\n")
        return path
