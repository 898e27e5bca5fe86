"""
Acceso al dataset: manifiestos de capturas, índices de muestras y particiones.
"""
import json
import logging
import zlib
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from models.capture import OlatCapture, TrainingSample
from models.errors import BadInputError, InvariantViolation, MissingArtifactError
from models.raster import MaskImage, RasterImage
from models.validator import DatasetValidator
from utils.image_io import read_png, read_rawf

logger = logging.getLogger(__name__)

# Error de cuantización admitido entre el volcado rawf y los PNG de 16 bits
RAWF_CONSISTENCY_TOLERANCE = 1e-3


def load_manifest(manifest_path: Path, check_files: bool = True) -> Dict:
    """Lee y valida un manifiesto de capturas."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingArtifactError(f"No existe el manifiesto: {manifest_path}")
    is_valid, errors = DatasetValidator.validate_manifest(manifest_path, check_files=check_files)
    if not is_valid:
        raise BadInputError(f"Manifiesto inválido: {DatasetValidator.describe_errors(errors)}")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


def _read_mask(path: Path) -> MaskImage:
    pixels = read_png(path)
    if pixels.shape[2] == 3:
        pixels = pixels.max(axis=2, keepdims=True)
    return MaskImage((pixels > 0.5).astype(np.float64))


def load_capture(record: Dict, base_dir: Path, expected_count: Optional[int] = None) -> OlatCapture:
    """Construye un OlatCapture a partir de una entrada del manifiesto."""
    base_dir = Path(base_dir)
    flashes = [RasterImage(read_png(base_dir / rel)) for rel in record["flash_paths"]]
    capture = OlatCapture(
        capture_id=record["id"],
        flash_images=flashes,
        room_image=RasterImage(read_png(base_dir / record["room_path"])),
        foreground=_read_mask(base_dir / record["foreground_path"]),
        nose=_read_mask(base_dir / record["nose_path"]),
        mouth=_read_mask(base_dir / record["mouth_path"]),
        expected_flash_count=expected_count or len(flashes),
    )
    logger.debug(f"Captura cargada: {capture.capture_id} ({len(flashes)} flashes)")
    return capture


def split_of(sample_id: str, val_fraction: float = 0.1) -> str:
    """Partición estable por hash del id: 'val' para ~``val_fraction`` de las muestras."""
    bucket = zlib.crc32(sample_id.encode("utf-8")) % 1000
    return "val" if bucket < int(round(val_fraction * 1000)) else "train"


def load_samples_index(index_path: Path) -> Dict:
    index_path = Path(index_path)
    if index_path.is_dir():
        index_path = index_path / "samples.json"
    if not index_path.exists():
        raise MissingArtifactError(f"No existe el índice de muestras: {index_path}")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise BadInputError(f"Índice de muestras inválido {index_path}: {e}") from e
    if not isinstance(index, dict) or not isinstance(index.get("samples"), list):
        raise BadInputError(f"El índice {index_path} no contiene 'samples'")
    index["_base_dir"] = str(index_path.parent)
    return index


def load_sample(sample_dir: Path) -> TrainingSample:
    """Lee una muestra guardada.

    off y soft_off se recalculan a partir de los PNG decodificados para que
    las identidades se cumplan exactamente; el volcado rawf se contrasta.
    """
    sample_dir = Path(sample_dir)
    meta_path = sample_dir / "meta.json"
    if not meta_path.exists():
        raise MissingArtifactError(f"Muestra incompleta (sin meta.json): {sample_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))

    fg = _read_mask(sample_dir / "fg.png")
    inside = fg.pixels > 0.5
    src = read_png(sample_dir / "src.png") * inside
    dlt = read_png(sample_dir / "dlt.png") * inside
    soft = read_png(sample_dir / "soft.png") * inside
    hf_mask = read_png(sample_dir / "w.png")[..., :1] * inside
    off = src - dlt
    soft_off = soft - dlt

    for name, recomputed in (("off", off), ("soft_off", soft_off)):
        stored = read_rawf(sample_dir / f"{name}.rawf")
        if stored.shape != recomputed.shape:
            raise InvariantViolation(f"{sample_dir.name}/{name}.rawf con forma {stored.shape} != {recomputed.shape}")
        drift = float(np.max(np.abs(stored - recomputed)))
        if drift > RAWF_CONSISTENCY_TOLERANCE:
            raise InvariantViolation(f"{sample_dir.name}/{name}.rawf no coincide con los PNG (desvío {drift:.2e})")

    meta.pop("height", None)
    meta.pop("width", None)
    sample_id = meta.pop("sample_id", sample_dir.name)
    meta.pop("fg_count", None)
    return TrainingSample(
        sample_id=sample_id,
        src=RasterImage(src),
        dlt=RasterImage(dlt),
        off=RasterImage(off, "signed"),
        soft=RasterImage(soft),
        soft_off=RasterImage(soft_off, "signed"),
        hf_mask=MaskImage(hf_mask),
        foreground=fg,
        fg_count=fg.count(),
        meta=meta,
    )


def resolve_sample_dirs(index: Dict, split: Optional[str] = None) -> List[Path]:
    base = Path(index["_base_dir"])
    entries = index["samples"]
    if split is not None:
        entries = [e for e in entries if e.get("split", "train") == split]
    return [base / e["dir"] for e in entries]
