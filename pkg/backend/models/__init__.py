"""
Modelos del sistema de eliminación de iluminación.
"""

from .errors import DelightError
from .raster import MaskImage, RasterImage
from .capture import OlatCapture, SynthConfig, TrainingSample

__all__ = ['DelightError', 'MaskImage', 'RasterImage', 'OlatCapture', 'SynthConfig', 'TrainingSample']
