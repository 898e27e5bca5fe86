"""
Configuración de logging: los módulos usan ``logging.getLogger(__name__)``
y loguru gestiona los destinos (stderr y archivo rotativo opcional).
"""
import inspect
import logging
import sys
from pathlib import Path
from typing import Optional

from loguru import logger as loguru_logger

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan> - <level>{message}</level>"
)


class InterceptHandler(logging.Handler):
    """Reenvía los registros de ``logging`` a loguru."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            level = loguru_logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        frame, depth = inspect.currentframe(), 0
        while frame and (depth == 0 or frame.f_code.co_filename == logging.__file__):
            frame = frame.f_back
            depth += 1

        loguru_logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def setup_logging(level: str = "INFO", log_file: Optional[Path] = None) -> None:
    """Instala los destinos de loguru e intercepta el logging estándar.

    Args:
        level: Nivel mínimo (DEBUG, INFO, WARNING, ERROR)
        log_file: Archivo opcional con rotación a 10 MB
    """
    level = level.upper()
    loguru_logger.remove()
    loguru_logger.add(sys.stderr, level=level, format=LOG_FORMAT, colorize=sys.stderr.isatty())
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        loguru_logger.add(str(log_file), level=level, rotation="10 MB", encoding="utf-8", enqueue=True)

    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)
    # bibliotecas ruidosas
    for name in ("PIL", "matplotlib", "urllib3"):
        logging.getLogger(name).setLevel(logging.WARNING)
    logging.getLogger(__name__).debug(f"Logging configurado: nivel {level}, archivo {log_file}")
