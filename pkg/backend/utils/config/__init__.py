"""
Configuraciones del sistema.
"""
