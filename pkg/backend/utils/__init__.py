"""
Utilidades de imagen, colorimetría, E/S y logging.
"""
