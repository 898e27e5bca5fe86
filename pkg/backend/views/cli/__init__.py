"""
Módulo CLI del sistema de eliminación de iluminación.
"""
