"""
Red de delighting: codificador compartido y dos decodificadores.

D1 produce la imagen de-lit y D2 el offset de sombreado (solo en entrenamiento).
Todos los bloques son conv 3×3 → InstanceNorm → PReLU; cada decodificador
termina en conv 3×3 + tanh.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from models.errors import CheckpointError, ContractViolation, MissingArtifactError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
SIDECAR_NAME = "config.json"


@dataclass(frozen=True)
class ModelConfig:
    """Profundidad, anchos por nivel y cableado de skips de D2."""

    depth: int = 5
    widths: Tuple[int, ...] = (32, 64, 128, 256, 512)
    d2_skips: bool = True
    seed: int = 0
    in_channels: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ContractViolation(f"depth debe ser >= 1, recibido {self.depth}")
        if not self.widths or min(self.widths) < 1:
            raise ContractViolation(f"Anchos inválidos: {self.widths}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def width(self, level: int) -> int:
        """Ancho del nivel ``level`` (0 = resolución completa); se repite el último."""
        return self.widths[min(level, len(self.widths) - 1)]

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["widths"] = list(self.widths)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        known = {k: data[k] for k in ("depth", "widths", "d2_skips", "seed", "in_channels") if k in data}
        if "widths" in known:
            known["widths"] = tuple(known["widths"])
        return cls(**known)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


class ConvBlock(nn.Sequential):
    """conv 3×3 → InstanceNorm (afín) → PReLU."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1),
            nn.InstanceNorm2d(out_channels, affine=True),
            nn.PReLU(out_channels),
        )


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.stem = ConvBlock(config.in_channels, config.width(0))
        self.downs = nn.ModuleList(
            nn.Sequential(
                ConvBlock(config.width(k - 1), config.width(k), stride=2),
                ConvBlock(config.width(k), config.width(k)),
            )
            for k in range(1, config.depth + 1)
        )

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        features = [self.stem(x)]
        for down in self.downs:
            features.append(down(features[-1]))
        return features


class Decoder(nn.Module):
    """Subida nearest + conv, concatenación opcional con el skip del nivel, salida tanh."""

    def __init__(self, config: ModelConfig, use_skips: bool = True, out_channels: int = 3):
        super().__init__()
        self.use_skips = use_skips
        self.ups = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for k in range(config.depth, 0, -1):
            self.ups.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                ConvBlock(config.width(k), config.width(k - 1)),
            ))
            fused_in = 2 * config.width(k - 1) if use_skips else config.width(k - 1)
            self.fuse.append(ConvBlock(fused_in, config.width(k - 1)))
        self.head = nn.Sequential(
            nn.Conv2d(config.width(0), out_channels, kernel_size=3, padding=1),
            nn.Tanh(),
        )

    def forward(self, features: List[torch.Tensor]) -> torch.Tensor:
        x = features[-1]
        for i, (up, fuse) in enumerate(zip(self.ups, self.fuse)):
            x = up(x)
            if self.use_skips:
                x = torch.cat([x, features[-2 - i]], dim=1)
            x = fuse(x)
        return self.head(x)


class DelightNet(nn.Module):
    """Codificador compartido con decodificadores D1 (de-lit) y D2 (offset)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder_d1 = Decoder(config, use_skips=True)
        self.decoder_d2 = Decoder(config, use_skips=config.d2_skips)

    @property
    def size_multiple(self) -> int:
        return 2 ** self.config.depth

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ContractViolation(f"Se esperaba un tensor N×{self.config.in_channels}×H×W, recibido {tuple(x.shape)}")
        h, w = x.shape[-2:]
        m = self.size_multiple
        if h % m or w % m:
            raise ContractViolation(f"El tamaño {h}×{w} no es divisible por 2^depth = {m}")
        if min(h, w) // m < 2:
            raise ContractViolation(f"El cuello de botella sería menor que 2×2 para {h}×{w}")

    def forward(self, x: torch.Tensor, want_offset: bool = False) -> Dict[str, torch.Tensor]:
        """Devuelve ``{"dlt": D1(x)}`` y, si se pide, ``"off": D2(x)``."""
        self.check_input(x)
        features = self.encoder(x)
        outputs = {"dlt": self.decoder_d1(features)}
        if want_offset:
            outputs["off"] = self.decoder_d2(features)
        return outputs


def build_model(config: Optional[ModelConfig] = None) -> DelightNet:
    """Construye la red con pesos iniciales determinados por ``config.seed``."""
    config = config or ModelConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = DelightNet(config)
    logger.debug(f"Modelo construido: depth={config.depth}, widths={config.widths}, "
                 f"{parameter_count(model)} parámetros")
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_digest(state_dict: Dict[str, torch.Tensor]) -> str:
    """SHA-256 de nombres, formas y bytes de los tensores en orden de nombre."""
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        tensor = state_dict[name].detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tuple(tensor.shape)).encode("utf-8"))
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


# ========== CHECKPOINTS ==========

@dataclass
class Checkpoint:
    """Contenido de un checkpoint cargado."""

    model: DelightNet
    config: ModelConfig
    step: int = 0
    epoch: int = 0
    optimizer_state: Optional[Dict] = None
    extra: Dict = field(default_factory=dict)
    config_hash: str = ""
    digest: str = ""


def save_checkpoint(path: Path, model: DelightNet, optimizer: Optional[torch.optim.Optimizer] = None,
                    step: int = 0, epoch: int = 0, extra: Optional[Dict] = None) -> Path:
    """Guarda parámetros, optimizador y contadores; escribe ``config.json`` al lado."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state_dict = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "parameters": state_dict,
        "param_digest": parameter_digest(state_dict),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": int(step),
        "epoch": int(epoch),
        "extra": extra or {},
    }
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp_path)
    tmp_path.replace(path)

    sidecar = {
        "model": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "normalization": {"input": "2x-1", "dlt": "2x-1", "offset": "identity"},
    }
    (path.parent / SIDECAR_NAME).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Checkpoint guardado: {path.name} (paso {step}, época {epoch})")
    return path


def load_checkpoint(path: Path, map_location: str = "cpu") -> Checkpoint:
    """Carga y verifica un checkpoint; el digest de parámetros debe coincidir."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"No existe el checkpoint: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Checkpoint ilegible {path}: {e}") from e

    required = ("format", "model_config", "parameters", "param_digest", "step")
    if not isinstance(payload, dict) or any(k not in payload for k in required):
        raise CheckpointError(f"Checkpoint sin las claves requeridas: {path}")
    if payload["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"Formato de checkpoint no soportado: {payload['format']}")
    digest = parameter_digest(payload["parameters"])
    if digest != payload["param_digest"]:
        raise CheckpointError(f"Digest de parámetros inconsistente en {path.name}")

    config = ModelConfig.from_dict(payload["model_config"])
    model = DelightNet(config)
    try:
        model.load_state_dict(payload["parameters"])
    except RuntimeError as e:
        raise CheckpointError(f"Parámetros incompatibles con la configuración: {e}") from e
    model.eval()
    return Checkpoint(
        model=model,
        config=config,
        step=int(payload["step"]),
        epoch=int(payload.get("epoch", 0)),
        optimizer_state=payload.get("optimizer"),
        extra=dict(payload.get("extra") or {}),
        config_hash=payload.get("config_hash", ""),
        digest=digest,
    )


# ========== COMPROBACIÓN DE GRADIENTES ==========

@dataclass
class GradientCheckReport:
    passed: bool
    checked: int
    max_relative_error: float
    tolerance: float
    worst: Dict = field(default_factory=dict)


def gradient_check(model: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor],
                   samples: int = 64, step: float = 1e-6, tolerance: float = 1e-2,
                   seed: int = 0) -> GradientCheckReport:
    """
    Compara gradientes analíticos con diferencias centrales en float64.

    ``loss_fn`` recibe el modelo y devuelve un escalar; el modelo se pasa a
    float64 y se restaura al final.

    Returns:
        GradientCheckReport con el peor parámetro si falla
    """
    original_dtype = next(model.parameters()).dtype
    model.double()
    try:
        params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
        model.zero_grad(set_to_none=True)
        loss = loss_fn(model)
        loss.backward()
        analytic_all = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                        for name, p in params}

        sizes = np.array([p.numel() for _, p in params])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offsets[-1])
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(total, size=min(samples, total), replace=False))

        rows = []
        with torch.no_grad():
            for flat in picks:
                k = int(np.searchsorted(offsets, flat, side="right") - 1)
                name, p = params[k]
                idx = int(flat - offsets[k])
                view = p.view(-1)
                original = view[idx].item()
                view[idx] = original + step
                plus = float(loss_fn(model))
                view[idx] = original - step
                minus = float(loss_fn(model))
                view[idx] = original
                numeric = (plus - minus) / (2.0 * step)
                analytic = float(analytic_all[name].view(-1)[idx])
                rows.append((name, idx, analytic, numeric))

        scale = max((abs(a) for _, _, a, _ in rows), default=0.0)
        floor = max(1e-3 * scale, 1e-12)
        worst, max_err = {}, 0.0
        for name, idx, analytic, numeric in rows:
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            if err >= max_err:
                max_err = err
                worst = {"parameter": name, "index": idx, "analytic": analytic, "numeric": numeric}
    finally:
        model.to(original_dtype)
        model.zero_grad(set_to_none=True)

    report = GradientCheckReport(max_err <= tolerance, len(rows), max_err, tolerance, worst)
    log = logger.info if report.passed else logger.warning
    log(f"Gradient check: {report.checked} parámetros, error relativo máx {max_err:.2e}")
    return report
