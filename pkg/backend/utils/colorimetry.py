"""
Colorimetría: luminancia CIE Lab (D65) y tintes de temperatura de color.
"""
import logging
import warnings

import numpy as np
from skimage import color

from models.errors import ContractViolation
from models.raster import pixels_of

logger = logging.getLogger(__name__)

# Pesos Rec.709 de luminancia relativa
REC709_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


def _require_rgb(img) -> np.ndarray:
    arr = pixels_of(img)
    if arr.shape[2] != 3:
        raise ContractViolation(f"Se requieren 3 canales, recibido {arr.shape[2]}")
    return np.clip(arr, 0.0, 1.0)


def luminance_lab(img) -> np.ndarray:
    """Canal L de CIE Lab (blanco D65) reescalado a [0,1] (L/100).

    Returns:
        Arreglo HxWx1.
    """
    rgb = _require_rgb(img)
    lab = color.rgb2lab(rgb, illuminant="D65")
    return np.clip(lab[..., :1] / 100.0, 0.0, 1.0)


def replace_luminance(img, lightness: np.ndarray) -> np.ndarray:
    """Sustituye el canal L de Lab por ``lightness`` (en [0,1]) y vuelve a RGB.

    El resultado se recorta a [0,1].
    """
    rgb = _require_rgb(img)
    target = np.asarray(lightness, dtype=np.float64)
    if target.ndim == 2:
        target = target[:, :, None]
    if target.shape[:2] != rgb.shape[:2]:
        raise ContractViolation(f"Tamaño de luminancia {target.shape} != imagen {rgb.shape}")
    lab = color.rgb2lab(rgb, illuminant="D65")
    lab[..., 0] = np.clip(target[..., 0], 0.0, 1.0) * 100.0
    with warnings.catch_warnings():
        # lab2rgb avisa cuando recorta colores fuera de gama
        warnings.simplefilter("ignore")
        out = color.lab2rgb(lab, illuminant="D65")
    return np.clip(out, 0.0, 1.0)


def luma_rec709(img) -> np.ndarray:
    """Luma Rec.709 (HxW) de una imagen RGB; imágenes de un canal pasan tal cual."""
    arr = pixels_of(img)
    if arr.shape[2] == 1:
        return arr[..., 0].copy()
    return arr @ REC709_WEIGHTS


def kelvin_to_rgb_gains(temperature: float) -> np.ndarray:
    """Ganancias RGB de un cuerpo negro a ``temperature`` Kelvin.

    Aproximación de Tanner Helland, normalizada para que la luminancia
    relativa Rec.709 de la ganancia sea 1 (el tinte cambia croma, no exposición).
    """
    if temperature <= 0:
        raise ContractViolation(f"Temperatura inválida: {temperature}")
    t = temperature / 100.0

    if t <= 66:
        r = 255.0
        g = 99.4708025861 * np.log(t) - 161.1195681661
    else:
        r = 329.698727446 * (t - 60) ** -0.1332047592
        g = 288.1221695283 * (t - 60) ** -0.0755148492

    if t >= 66:
        b = 255.0
    elif t <= 19:
        b = 0.0
    else:
        b = 138.5177312231 * np.log(t - 10) - 305.0447927307

    gains = np.clip(np.array([r, g, b], dtype=np.float64), 0.0, 255.0) / 255.0
    gains = gains / float(gains @ REC709_WEIGHTS)
    logger.debug(f"Tinte {temperature:.0f}K → ganancias {np.round(gains, 4).tolist()}")
    return gains
