"""
Primitivas de imagen puras y deterministas.

Todas las funciones aceptan RasterImage, MaskImage o arreglos HxWxC / HxW
y devuelven arreglos float64 HxWxC. No hay estado compartido.
"""
import logging
from typing import Tuple

import cv2
import numpy as np
from scipy import ndimage

from models.errors import ContractViolation
from models.raster import pixels_of

logger = logging.getLogger(__name__)

# Regularizador del guided filter sobre imágenes en [0,1]
DEFAULT_GF_REGULARIZER = 1e-4
INPAINT_MAX_ITERATIONS = 500
INPAINT_TOLERANCE = 1e-5


def _same_size(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape[:2] != b.shape[:2]:
        raise ContractViolation(f"{what}: tamaños distintos {a.shape[:2]} vs {b.shape[:2]}")


def grad_sum(img) -> np.ndarray:
    """|∂x| + |∂y| por píxel con diferencias hacia adelante, sumado sobre canales.

    Más allá del borde el gradiente es cero.
    """
    arr = pixels_of(img)
    dx = np.zeros_like(arr)
    dy = np.zeros_like(arr)
    dx[:, :-1] = arr[:, 1:] - arr[:, :-1]
    dy[:-1, :] = arr[1:, :] - arr[:-1, :]
    return (np.abs(dx) + np.abs(dy)).sum(axis=2, keepdims=True)


def _box_mean(channel: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.uniform_filter(channel, size=2 * radius + 1, mode="reflect")


def guided_filter(guide_input, edge_ref, radius: int,
                  regularizer: float = DEFAULT_GF_REGULARIZER) -> np.ndarray:
    """Guided filter: suaviza ``guide_input`` preservando los bordes de ``edge_ref``.

    Guía por canal: el canal c de la entrada se filtra con el canal c de la
    referencia (o con su único canal si es monocromática). Ventana (2r+1)².

    Args:
        guide_input: imagen a filtrar (p)
        edge_ref: imagen guía (I)
        radius: radio de la ventana, >= 1
        regularizer: épsilon propio del filtro

    Returns:
        Arreglo con la forma de ``guide_input``.
    """
    p = pixels_of(guide_input)
    guide = pixels_of(edge_ref)
    _same_size(p, guide, "guided_filter")
    if int(radius) != radius or radius < 1:
        raise ContractViolation(f"Radio inválido: {radius}")
    if regularizer <= 0:
        raise ContractViolation(f"Regularizador inválido: {regularizer}")
    radius = int(radius)

    out = np.empty_like(p)
    for c in range(p.shape[2]):
        I = guide[..., c if guide.shape[2] > 1 else 0]
        pc = p[..., c]
        mean_I = _box_mean(I, radius)
        mean_p = _box_mean(pc, radius)
        cov_Ip = _box_mean(I * pc, radius) - mean_I * mean_p
        var_I = _box_mean(I * I, radius) - mean_I * mean_I

        a = cov_Ip / (var_I + regularizer)
        b = mean_p - a * mean_I
        out[..., c] = _box_mean(a, radius) * I + _box_mean(b, radius)
    return out


def median_filter(img, k: int) -> np.ndarray:
    """Mediana espacial kxk por canal con bordes replicados."""
    arr = pixels_of(img)
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ContractViolation(f"El tamaño de la mediana debe ser impar >= 1, recibido {k}")
    if k == 1:
        return arr.copy()
    return ndimage.median_filter(arr, size=(int(k), int(k), 1), mode="nearest")


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Gaussiana separable truncada a 3σ, kernel normalizado, bordes replicados."""
    arr = pixels_of(img)
    if sigma <= 0:
        raise ContractViolation(f"sigma debe ser > 0, recibido {sigma}")
    return ndimage.gaussian_filter(arr, sigma=(sigma, sigma, 0), mode="nearest", truncate=3.0)


def _neighbour_mean(u: np.ndarray) -> np.ndarray:
    padded = np.pad(u, ((1, 1), (1, 1), (0, 0)), mode="edge")
    return 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:])


def inpaint_diffusion(img, hole, max_iterations: int = INPAINT_MAX_ITERATIONS,
                      tolerance: float = INPAINT_TOLERANCE) -> np.ndarray:
    """Relleno armónico (difusión de Laplace) de los píxeles marcados en ``hole``.

    Los píxeles fuera del hueco quedan idénticos bit a bit. Itera Jacobi hasta
    ``max_iterations`` o hasta que el cambio máximo sea menor que ``tolerance``.
    """
    arr = pixels_of(img)
    mask = pixels_of(hole)[..., 0]
    _same_size(arr, mask[..., None], "inpaint_diffusion")
    inside = mask > 0.5
    if not inside.any():
        return arr.copy()
    if inside.all():
        raise ContractViolation("El hueco cubre toda la imagen: no hay datos de borde")

    out = arr.copy()
    known_mean = arr[~inside].mean(axis=0)
    out[inside] = known_mean

    iterations = 0
    for iterations in range(1, max_iterations + 1):
        updated = _neighbour_mean(out)[inside]
        change = float(np.max(np.abs(updated - out[inside])))
        out[inside] = updated
        if change < tolerance:
            break
    logger.debug(f"Inpainting: {int(inside.sum())} píxeles, {iterations} iteraciones")
    return out


def resize(img, new_h: int, new_w: int) -> np.ndarray:
    """Redimensionado bilineal."""
    arr = pixels_of(img)
    if new_h < 1 or new_w < 1:
        raise ContractViolation(f"Tamaño de destino inválido: {new_h}x{new_w}")
    if arr.shape[:2] == (new_h, new_w):
        return arr.copy()
    out = cv2.resize(np.ascontiguousarray(arr), (int(new_w), int(new_h)), interpolation=cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[:, :, None]
    return out


def flip_horizontal(img) -> np.ndarray:
    """Espejo respecto al eje vertical."""
    return pixels_of(img)[:, ::-1].copy()


def crop(img, window: Tuple[int, int, int, int]) -> np.ndarray:
    """Recorte exacto; ``window`` = (top, left, alto, ancho)."""
    arr = pixels_of(img)
    top, left, h, w = (int(v) for v in window)
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > arr.shape[0] or left + w > arr.shape[1]:
        raise ContractViolation(f"Ventana {window} fuera de la imagen {arr.shape[:2]}")
    return arr[top:top + h, left:left + w].copy()


def apply_mask(img, mask, fill: float = 0.0) -> np.ndarray:
    """Pone ``fill`` fuera de la máscara binaria."""
    arr = pixels_of(img)
    m = pixels_of(mask)
    _same_size(arr, m, "apply_mask")
    return np.where(m > 0.5, arr, fill)
