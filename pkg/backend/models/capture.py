"""
Tipos de datos de captura y de muestra de entrenamiento.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from models.errors import ContractViolation
from models.raster import MaskImage, RasterImage

logger = logging.getLogger(__name__)

DEFAULT_OLAT_COUNT = 18
SAMPLE_PLANES = ("src", "dlt", "off", "soft", "soft_off", "hf_mask", "foreground")


@dataclass
class OlatCapture:
    """Un sujeto/pose: imágenes de flash, imagen de luces de sala y máscaras."""

    capture_id: str
    flash_images: List[RasterImage]
    room_image: RasterImage
    foreground: MaskImage
    nose: MaskImage
    mouth: MaskImage
    expected_flash_count: int = DEFAULT_OLAT_COUNT

    @property
    def height(self) -> int:
        return self.room_image.height

    @property
    def width(self) -> int:
        return self.room_image.width

    @property
    def other(self) -> MaskImage:
        """M_other = foreground − nose − mouth."""
        rest = self.foreground.pixels - self.nose.pixels - self.mouth.pixels
        return MaskImage(np.clip(rest, 0.0, 1.0))


@dataclass
class TrainingSample:
    """Tupla supervisada (I_src, I_dlt, I_off, I_soft, I_soft-off, W, máscara).

    src, dlt y soft están en [0,1] con fondo 0; off y soft_off en [-1,1].
    """

    sample_id: str
    src: RasterImage
    dlt: RasterImage
    off: RasterImage
    soft: RasterImage
    soft_off: RasterImage
    hf_mask: MaskImage
    foreground: MaskImage
    fg_count: int
    meta: Dict = field(default_factory=dict)

    def planes(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name).pixels for name in SAMPLE_PLANES}

    @property
    def shape(self) -> Tuple[int, int]:
        return self.src.height, self.src.width

    def with_planes(self, planes: Dict[str, np.ndarray]) -> "TrainingSample":
        """Nueva muestra con los planos dados; la máscara se rebinariza y M se recalcula."""
        foreground = MaskImage((np.asarray(planes["foreground"]) > 0.5).astype(np.float64))
        return replace(
            self,
            src=RasterImage(planes["src"], "unit"),
            dlt=RasterImage(planes["dlt"], "unit"),
            off=RasterImage(planes["off"], "signed"),
            soft=RasterImage(planes["soft"], "unit"),
            soft_off=RasterImage(planes["soft_off"], "signed"),
            hf_mask=MaskImage(planes["hf_mask"]),
            foreground=foreground,
            fg_count=foreground.count(),
            meta=dict(self.meta),
        )


@dataclass(frozen=True)
class SynthConfig:
    """Parámetros de síntesis de muestras."""

    epsilon_radius: int = 7
    kappa_range: Tuple[int, int] = (7, 35)
    tint_temperature_range: Tuple[float, float] = (2500.0, 10000.0)
    intensity_boost_range: Tuple[float, float] = (1.2, 1.8)
    boost_probability: float = 0.25
    blend_weight_range: Tuple[float, float] = (0.2, 0.8)
    # probabilidades de las variantes de entrada: par de OLATs, de-lit coloreado, solo sala
    variant_weights: Tuple[Tuple[str, float], ...] = (("pair", 0.85), ("delit", 0.10), ("room", 0.05))
    samples_per_capture: int = 1
    rng_seed: int = 0
    gf_regularizer: float = 1e-4
    hf_radius: int = 15
    hf_median_size: int = 5
    hf_sigma: float = 3.0
    delit_luminance_gain: float = 6.0
    specular_threshold: float = 0.5
    min_olat_count: int = 2

    def __post_init__(self):
        kappa_lo, kappa_hi = self.kappa_range
        if self.epsilon_radius < 1:
            raise ContractViolation(f"ε debe ser >= 1, recibido {self.epsilon_radius}")
        if kappa_lo > kappa_hi:
            raise ContractViolation(f"Rango de κ invertido: {self.kappa_range}")
        if self.epsilon_radius > kappa_lo:
            raise ContractViolation(f"Se requiere ε <= κ: ε={self.epsilon_radius}, κ_lo={kappa_lo}")
        t_lo, t_hi = self.tint_temperature_range
        if not 0 < t_lo <= t_hi:
            raise ContractViolation(f"Rango de temperatura inválido: {self.tint_temperature_range}")
        if self.samples_per_capture < 1:
            raise ContractViolation("samples_per_capture debe ser >= 1")
        if self.min_olat_count < 2:
            raise ContractViolation("min_olat_count debe ser >= 2")
        kinds = dict(self.variant_weights)
        unknown = set(kinds) - {"pair", "delit", "room"}
        if unknown or sum(kinds.values()) <= 0 or min(kinds.values()) < 0:
            raise ContractViolation(f"Pesos de variantes inválidos: {self.variant_weights}")
