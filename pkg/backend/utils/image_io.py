"""
Lectura y escritura de imágenes: PNG sRGB de 8/16 bits y volcado ``.rawf``.

Formato ``.rawf``: cabecera little-endian con H, W, C como tres u32 seguida
del payload float32 little-endian en orden fila-mayor (H, W, C).
"""
import logging
import struct
from pathlib import Path
from typing import Union

import cv2
import numpy as np

from models.errors import BadInputError, ContractViolation, MissingArtifactError
from models.raster import pixels_of

logger = logging.getLogger(__name__)

RAWF_HEADER = struct.Struct("<III")
PathLike = Union[str, Path]


def read_png(path: PathLike, keep_alpha: bool = False) -> np.ndarray:
    """Lee un PNG de 8 o 16 bits y devuelve un arreglo HxWxC en [0,1]."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"No existe la imagen: {path}")
    # imdecode sobre bytes para admitir rutas UTF-8 en cualquier plataforma
    buffer = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    image = cv2.imdecode(buffer, cv2.IMREAD_UNCHANGED) if buffer.size else None
    if image is None:
        raise BadInputError(f"No se pudo decodificar la imagen: {path}")

    if image.dtype == np.uint8:
        scale = 255.0
    elif image.dtype == np.uint16:
        scale = 65535.0
    else:
        raise BadInputError(f"Profundidad de bits no soportada ({image.dtype}): {path}")

    if image.ndim == 2:
        image = image[:, :, None]
    elif image.shape[2] == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    elif image.shape[2] == 4:
        image = cv2.cvtColor(image, cv2.COLOR_BGRA2RGBA)
        if not keep_alpha:
            image = image[:, :, :3]
    out = image.astype(np.float64) / scale
    logger.debug(f"PNG leído {path.name}: {out.shape}, {image.dtype}")
    return out


def write_png(path: PathLike, img, bit_depth: int = 8) -> Path:
    """Escribe una imagen en [0,1] como PNG de 8 o 16 bits."""
    if bit_depth not in (8, 16):
        raise ContractViolation(f"bit_depth debe ser 8 o 16, recibido {bit_depth}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    arr = np.clip(pixels_of(img), 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(arr * 255.0).astype(np.uint8)
    else:
        data = np.round(arr * 65535.0).astype(np.uint16)
    if data.shape[2] == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    elif data.shape[2] == 1:
        data = data[:, :, 0]

    ok, encoded = cv2.imencode(".png", data)
    if not ok:
        raise BadInputError(f"No se pudo codificar el PNG: {path}")
    path.write_bytes(encoded.tobytes())
    logger.debug(f"PNG guardado {path.name} ({bit_depth} bits)")
    return path


def write_rawf(path: PathLike, img) -> Path:
    """Escribe el volcado float32 sin pérdidas."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(pixels_of(img), dtype="<f4")
    h, w, c = arr.shape
    path.write_bytes(RAWF_HEADER.pack(h, w, c) + arr.tobytes(order="C"))
    return path


def read_rawf(path: PathLike) -> np.ndarray:
    """Lee un volcado ``.rawf`` como arreglo float64 HxWxC."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"No existe el volcado: {path}")
    blob = path.read_bytes()
    if len(blob) < RAWF_HEADER.size:
        raise BadInputError(f"Volcado truncado: {path}")
    h, w, c = RAWF_HEADER.unpack_from(blob)
    expected = RAWF_HEADER.size + h * w * c * 4
    if len(blob) != expected:
        raise BadInputError(f"Tamaño de volcado inconsistente en {path}: {len(blob)} != {expected}")
    payload = np.frombuffer(blob, dtype="<f4", offset=RAWF_HEADER.size)
    return payload.reshape(h, w, c).astype(np.float64)
