"""
Tipos de imagen: RasterImage y MaskImage.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from models.errors import ContractViolation

logger = logging.getLogger(__name__)

RANGE_BOUNDS = {
    "unit": (0.0, 1.0),
    "signed": (-1.0, 1.0),
    "offset": (-1.0, 1.0),
}


def _as_hwc(pixels) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ContractViolation(f"Se esperaba una imagen HxWxC, recibido shape {arr.shape}")
    return arr


@dataclass
class RasterImage:
    """Imagen HxWxC en punto flotante con rango declarado.

    Los valores se recortan al rango de ``range_tag`` en la construcción.
    """

    pixels: np.ndarray
    range_tag: str = "unit"

    def __post_init__(self):
        if self.range_tag not in RANGE_BOUNDS:
            raise ContractViolation(f"range_tag desconocido: {self.range_tag}")
        arr = _as_hwc(self.pixels)
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ContractViolation(f"Imagen vacía: {arr.shape}")
        if c not in (1, 3):
            raise ContractViolation(f"Número de canales no soportado: {c}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("La imagen contiene valores no finitos")
        lo, hi = RANGE_BOUNDS[self.range_tag]
        self.pixels = np.clip(arr, lo, hi)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape

    def to_signed(self) -> "RasterImage":
        """Convierte [0,1] → [-1,1] (normalización de entrenamiento)."""
        if self.range_tag != "unit":
            return RasterImage(self.pixels.copy(), self.range_tag)
        return RasterImage(self.pixels * 2.0 - 1.0, "signed")

    def to_unit(self) -> "RasterImage":
        """Convierte [-1,1] → [0,1]."""
        if self.range_tag == "unit":
            return RasterImage(self.pixels.copy(), "unit")
        return RasterImage((self.pixels + 1.0) * 0.5, "unit")


@dataclass
class MaskImage:
    """Máscara HxWx1 con valores en [0,1]."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _as_hwc(self.pixels)
        if arr.shape[2] != 1:
            raise ContractViolation(f"Una máscara debe tener un canal, recibido {arr.shape[2]}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("La máscara contiene valores no finitos")
        self.pixels = np.clip(arr, 0.0, 1.0)

    @property
    def shape(self):
        return self.pixels.shape

    def is_binary(self) -> bool:
        return bool(np.all((self.pixels == 0.0) | (self.pixels == 1.0)))

    def count(self) -> int:
        """Número de píxeles no nulos."""
        return int(np.count_nonzero(self.pixels))

    def binarized(self, threshold: float = 0.5) -> "MaskImage":
        return MaskImage((self.pixels > threshold).astype(np.float64))


def pixels_of(img) -> np.ndarray:
    """Devuelve el arreglo HxWxC de un RasterImage, MaskImage o ndarray."""
    if isinstance(img, (RasterImage, MaskImage)):
        return img.pixels
    return _as_hwc(img)
