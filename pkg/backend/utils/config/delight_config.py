"""
Configuración del sistema de delighting.

Precedencia: flags > variables de entorno ``DELIGHT_<CLAVE>`` > archivo TOML > valores por defecto.
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dotenv import load_dotenv

from models.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DELIGHT_"

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "log_level": "INFO",
    "resolution": 256,
    "epochs": 4,
    "learning_rate": 2e-4,
    "batch_size": 8,
    "workers": 1,
    "epsilon_radius": 7,
    "kappa_low": 7,
    "kappa_high": 35,
    "samples_per_capture": 1,
    "olat_count": 18,
    "fixture_resolution": 480,
    "fixture_captures": 8,
    "model_depth": 5,
    "model_widths": (32, 64, 128, 256, 512),
    "d2_skips": True,
    "extractor": "vgg16",
    "flip_prob": 0.5,
    "crop_low": 280,
    "crop_high": 480,
    "soft_alternate": False,
    "max_steps": 0,
}

_TRUE = {"1", "true", "yes", "on", "si", "sí"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, value: Any) -> Any:
    """Convierte ``value`` al tipo del valor por defecto de ``key``."""
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(f"booleano no reconocido '{value}'")
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"se esperaba entero, recibido {value}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.replace(";", ",").split(",") if v.strip()]
            return tuple(int(v) for v in value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Valor inválido para '{key}': {value!r} ({e})") from e


@dataclass
class ConfigSource:
    """Origen de cada valor efectivo, para auditoría."""

    key: str
    value: Any
    origin: str


class DelightConfig:
    """Vista combinada de flags, entorno, archivo TOML y valores por defecto."""

    def __init__(self, config_file: Optional[Path] = None, load_env_file: bool = True):
        if load_env_file:
            load_dotenv(override=False)
        self.config_file = Path(config_file) if config_file else None
        self._values: Dict[str, Any] = dict(DEFAULTS)
        self._origins: Dict[str, str] = {k: "default" for k in DEFAULTS}
        self.reload()

    def reload(self, flags: Optional[Mapping[str, Any]] = None,
               environ: Optional[Mapping[str, str]] = None) -> "DelightConfig":
        """Recalcula los valores efectivos aplicando la precedencia completa."""
        values = dict(DEFAULTS)
        origins = {k: "default" for k in DEFAULTS}

        for key, value in self._read_file().items():
            values[key] = _coerce(key, value)
            origins[key] = "file"

        environ = os.environ if environ is None else environ
        for key in DEFAULTS:
            raw = environ.get(ENV_PREFIX + key.upper())
            if raw is not None and raw != "":
                values[key] = _coerce(key, raw)
                origins[key] = "env"

        for key, value in (flags or {}).items():
            if value is None:
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"Opción desconocida: '{key}'")
            values[key] = _coerce(key, value)
            origins[key] = "flag"

        self._check(values)
        self._values, self._origins = values, origins
        logger.debug(f"Configuración efectiva: {values}")
        return self

    def _read_file(self) -> Dict[str, Any]:
        if self.config_file is None:
            return {}
        if not self.config_file.exists():
            raise ConfigError(f"No existe el archivo de configuración: {self.config_file}")
        try:
            data = tomllib.loads(self.config_file.read_text(encoding="utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
            raise ConfigError(f"TOML inválido en {self.config_file}: {e}") from e
        # se admite una tabla [delight] o claves en la raíz
        data = data.get("delight", data)
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"Claves desconocidas en {self.config_file.name}: {unknown}")
        return data

    @staticmethod
    def _check(values: Dict[str, Any]) -> None:
        if values["kappa_low"] > values["kappa_high"]:
            raise ConfigError(f"kappa_low > kappa_high: {values['kappa_low']} > {values['kappa_high']}")
        if values["crop_low"] > values["crop_high"]:
            raise ConfigError("crop_low > crop_high")
        if not 0.0 <= values["flip_prob"] <= 1.0:
            raise ConfigError(f"flip_prob fuera de [0,1]: {values['flip_prob']}")
        for key in ("epochs", "batch_size", "resolution", "workers", "model_depth", "olat_count"):
            if values[key] < 1:
                raise ConfigError(f"'{key}' debe ser >= 1")
        if values["log_level"].upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ConfigError(f"Nivel de log desconocido: {values['log_level']}")
        if values["extractor"] not in {"vgg16", "miniature"}:
            raise ConfigError(f"Extractor desconocido: {values['extractor']}")

    def get(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigError(f"Clave desconocida: '{key}'")
        return self._values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def as_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self._values.items()}

    def sources(self) -> Dict[str, ConfigSource]:
        return {k: ConfigSource(k, self._values[k], self._origins[k]) for k in self._values}

    def kappa_range(self) -> Tuple[int, int]:
        return self._values["kappa_low"], self._values["kappa_high"]

    def crop_range(self) -> Tuple[int, int]:
        return self._values["crop_low"], self._values["crop_high"]


delight_config = DelightConfig(load_env_file=False)
