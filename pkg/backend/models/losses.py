"""
Pérdidas de entrenamiento: perceptual por etapas, offset, sombra suave y máscara HF.

Todas las funciones trabajan con lotes N×C×H×W en rango con signo [-1,1] y
devuelven la media sobre el lote salvo ``reduction="none"``.
"""
import json
import logging
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.errors import ContractViolation

logger = logging.getLogger(__name__)

PIXEL_WEIGHT = 0.2
SOFT_WEIGHT = 0.6
MASKED_STAGES = 3
MASK_SUM_FLOOR = 1e-6
# cortes de vgg16.features: activaciones antes de cada uno de los cinco max-pool
VGG16_STAGE_BOUNDS = ((0, 4), (4, 9), (9, 16), (16, 23), (23, 30))
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
MINIATURE_WIDTHS = (8, 16, 16, 32, 32)

Count = Union[int, float, torch.Tensor]


class FeatureExtractor(nn.Module):
    """Extractor congelado de cinco etapas; cada etapa reduce a la mitad la resolución."""

    def __init__(self, stages: Sequence[nn.Module], name: str):
        super().__init__()
        self.stages = nn.ModuleList(stages)
        self.name = name
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True) -> "FeatureExtractor":
        # siempre en modo evaluación
        return super().train(False)

    @classmethod
    def pretrained(cls) -> "FeatureExtractor":
        """VGG-16 preentrenada en ImageNet (torchvision)."""
        from torchvision.models import VGG16_Weights, vgg16

        features = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        stages = [nn.Sequential(*features[lo:hi]) for lo, hi in VGG16_STAGE_BOUNDS]
        logger.info("Extractor VGG-16 preentrenado cargado")
        return cls(stages, "vgg16")

    @classmethod
    def miniature(cls, seed: int = 0, widths: Sequence[int] = MINIATURE_WIDTHS) -> "FeatureExtractor":
        """Extractor aleatorio de semilla fija con el mismo contrato de etapas."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stages, in_ch = [], 3
            for i, width in enumerate(widths):
                layers = [] if i == 0 else [nn.MaxPool2d(2)]
                layers += [nn.Conv2d(in_ch, width, 3, padding=1), nn.ReLU()]
                stages.append(nn.Sequential(*layers))
                in_ch = width
        return cls(stages, f"miniature-{seed}")

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        """[-1,1] → [0,1] → estadísticas de ImageNet."""
        return ((x + 1.0) * 0.5 - self.mean.to(x.dtype)) / self.std.to(x.dtype)

    def forward(self, x: torch.Tensor, stages: int = 5) -> List[torch.Tensor]:
        out, h = [], self.normalize(x)
        for stage in self.stages[:stages]:
            h = stage(h)
            out.append(h)
        return out


def _fg_tensor(fg_count: Count, batch: int, like: torch.Tensor) -> torch.Tensor:
    m = torch.as_tensor(fg_count, dtype=like.dtype, device=like.device).reshape(-1)
    if m.numel() == 1 and batch > 1:
        m = m.expand(batch)
    if m.numel() != batch:
        raise ContractViolation(f"fg_count con {m.numel()} valores para un lote de {batch}")
    if torch.any(m <= 0):
        raise ContractViolation("M (píxeles de primer plano) debe ser > 0")
    return m


def _reduce(per_sample: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "none":
        return per_sample
    if reduction == "mean":
        return per_sample.mean()
    raise ContractViolation(f"reduction desconocida: {reduction}")


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"Formas distintas: {tuple(a.shape)} vs {tuple(b.shape)}")


def _l1_per_sample(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().flatten(1).sum(dim=1)


def feature_distance(feats_a: Sequence[torch.Tensor], feats_b: Sequence[torch.Tensor]) -> torch.Tensor:
    """Σ_i (1/N_i)·||F_i(A) − F_i(B)||₁ por muestra, con N_i = C·H·W de la etapa."""
    total = 0.0
    for fa, fb in zip(feats_a, feats_b):
        total = total + (fa - fb).abs().flatten(1).mean(dim=1)
    return total


def perceptual_loss(a: torch.Tensor, b: torch.Tensor, fg_count: Count, extractor: FeatureExtractor,
                    reduction: str = "mean",
                    features: Optional[Tuple[List[torch.Tensor], List[torch.Tensor]]] = None) -> torch.Tensor:
    """Distancia de features de cinco etapas más (0.2/M)·||A − B||₁."""
    _same_shape(a, b)
    m = _fg_tensor(fg_count, a.shape[0], a)
    feats_a, feats_b = features if features is not None else (extractor(a), extractor(b))
    per_sample = feature_distance(feats_a, feats_b) + PIXEL_WEIGHT / m * _l1_per_sample(a, b)
    return _reduce(per_sample, reduction)


def delit_loss(dlt_gt: torch.Tensor, d1_out: torch.Tensor, fg_count: Count,
               extractor: FeatureExtractor, reduction: str = "mean") -> torch.Tensor:
    return perceptual_loss(dlt_gt, d1_out, fg_count, extractor, reduction)


def offset_loss(off_gt: torch.Tensor, d2_out: torch.Tensor, fg_count: Count,
                extractor: FeatureExtractor, reduction: str = "mean") -> torch.Tensor:
    """Los offsets viven en [-1,1] con signo y pasan por la misma normalización."""
    return perceptual_loss(off_gt, d2_out, fg_count, extractor, reduction)


def soft_losses(dlt_gt: torch.Tensor, soft_off_gt: torch.Tensor, d1_soft: torch.Tensor,
                d2_soft: torch.Tensor, fg_count: Count,
                reduction: str = "mean") -> Tuple[torch.Tensor, torch.Tensor]:
    """((0.6/M)·||I_dlt − D1(I_soft)||₁, (0.6/M)·||I_soft-off − D2(I_soft)||₁)."""
    _same_shape(dlt_gt, d1_soft)
    _same_shape(soft_off_gt, d2_soft)
    m = _fg_tensor(fg_count, dlt_gt.shape[0], dlt_gt)
    l_dlt = SOFT_WEIGHT / m * _l1_per_sample(dlt_gt, d1_soft)
    l_off = SOFT_WEIGHT / m * _l1_per_sample(soft_off_gt, d2_soft)
    return _reduce(l_dlt, reduction), _reduce(l_off, reduction)


def resize_mask(mask: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    if tuple(mask.shape[-2:]) == tuple(size):
        return mask
    return F.interpolate(mask, size=size, mode="bilinear", align_corners=False)


def masked_loss(dlt_gt: torch.Tensor, d1_out: torch.Tensor, mask: torch.Tensor,
                extractor: FeatureExtractor, reduction: str = "mean",
                features: Optional[Tuple[List[torch.Tensor], List[torch.Tensor]]] = None,
                normalizers: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
    """
    Σ_{i=1..3} (1/S_i)·||W_i ⊙ (F_i(dlt) − F_i(D1))||₁.

    W_i es W redimensionada bilinealmente al tamaño de la etapa i y S_i su
    suma por muestra; una etapa con S_i < 1e-6 aporta cero. ``normalizers``
    fija los S_i (lista de tensores N) en lugar de calcularlos.
    """
    _same_shape(dlt_gt, d1_out)
    if mask.dim() != 4 or mask.shape[1] != 1 or mask.shape[-2:] != dlt_gt.shape[-2:]:
        raise ContractViolation(f"La máscara debe ser N×1×H×W del tamaño de la imagen, recibido {tuple(mask.shape)}")
    if features is not None:
        feats_gt, feats_out = features
    else:
        feats_gt, feats_out = extractor(dlt_gt, MASKED_STAGES), extractor(d1_out, MASKED_STAGES)

    total = torch.zeros(dlt_gt.shape[0], dtype=dlt_gt.dtype, device=dlt_gt.device)
    for i in range(MASKED_STAGES):
        fg, fo = feats_gt[i], feats_out[i]
        w = resize_mask(mask.to(fg.dtype), tuple(fg.shape[-2:]))
        s = w.flatten(1).sum(dim=1) if normalizers is None else torch.as_tensor(normalizers[i], dtype=fg.dtype)
        weighted = (w * (fg - fo)).abs().flatten(1).sum(dim=1)
        valid = s >= MASK_SUM_FLOOR
        total = total + torch.where(valid, weighted / torch.where(valid, s, torch.ones_like(s)), torch.zeros_like(s))
    return _reduce(total, reduction)


@dataclass
class LossSwitches:
    """Términos activos de la pérdida (filas de ablación A–D)."""

    off: bool = True
    soft: bool = True
    msk: bool = True

    ROWS = {"A": (False, False, False), "B": (True, False, False),
            "C": (True, True, False), "D": (True, True, True)}

    @classmethod
    def from_row(cls, row: str) -> "LossSwitches":
        key = row.strip().upper()
        if key not in cls.ROWS:
            raise ContractViolation(f"Fila de ablación desconocida: {row}")
        return cls(*cls.ROWS[key])

    @classmethod
    def from_ablate(cls, terms: Optional[str]) -> "LossSwitches":
        """``"off,soft"`` desactiva esos términos."""
        switches = cls()
        for term in (t.strip() for t in (terms or "").split(",") if t.strip()):
            if term not in ("off", "soft", "msk"):
                raise ContractViolation(f"Término de ablación desconocido: {term}")
            setattr(switches, term, False)
        return switches

    def needs_offset(self) -> bool:
        return self.off or self.soft


@dataclass
class LossBreakdown:
    l_dlt: torch.Tensor
    l_off: torch.Tensor
    l_soft_dlt: torch.Tensor
    l_soft_off: torch.Tensor
    l_msk: torch.Tensor
    total: torch.Tensor

    TERMS = ("l_dlt", "l_off", "l_soft_dlt", "l_soft_off", "l_msk")

    @classmethod
    def from_terms(cls, **terms: torch.Tensor) -> "LossBreakdown":
        values = [terms[name] for name in cls.TERMS]
        total = values[0]
        for v in values[1:]:
            total = total + v
        return cls(*values, total=total)

    def to_floats(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def to_json_line(self, step: int) -> str:
        record = {"step": int(step)}
        record.update(self.to_floats())
        return json.dumps(record, sort_keys=False)


class DelightLoss(nn.Module):
    """Suma de los cinco términos respetando los interruptores de ablación.

    Las features de la etapa 1–3 del objetivo de-lit se calculan una vez y se
    reutilizan para la pérdida enmascarada.
    """

    def __init__(self, extractor: FeatureExtractor, switches: Optional[LossSwitches] = None):
        super().__init__()
        self.extractor = extractor
        self.switches = switches or LossSwitches()

    def forward(self, batch: Dict[str, torch.Tensor], src_out: Optional[Dict[str, torch.Tensor]],
                soft_out: Optional[Dict[str, torch.Tensor]] = None) -> LossBreakdown:
        """
        Args:
            batch: tensores 'dlt', 'off', 'soft_off', 'hf_mask', 'fg', 'fg_count'
            src_out: salidas de la red para I_src (None si el paso solo usa I_soft)
            soft_out: salidas para I_soft (None si la pérdida suave está desactivada)
        """
        ref = batch["dlt"]
        zero = ref.new_zeros(())
        m = batch["fg_count"]
        fg = batch["fg"]
        terms = {name: zero for name in LossBreakdown.TERMS}

        if src_out is not None:
            d1 = masked_output(src_out["dlt"], fg, -1.0)
            feats_gt, feats_d1 = self.extractor(ref), self.extractor(d1)
            terms["l_dlt"] = perceptual_loss(ref, d1, m, self.extractor, features=(feats_gt, feats_d1))
            if self.switches.msk:
                terms["l_msk"] = masked_loss(ref, d1, batch["hf_mask"], self.extractor,
                                             features=(feats_gt[:MASKED_STAGES], feats_d1[:MASKED_STAGES]))
            if self.switches.off:
                d2 = masked_output(src_out["off"], fg, 0.0)
                terms["l_off"] = offset_loss(batch["off"], d2, m, self.extractor)

        if self.switches.soft and soft_out is not None:
            d1s = masked_output(soft_out["dlt"], fg, -1.0)
            d2s = masked_output(soft_out["off"], fg, 0.0)
            terms["l_soft_dlt"], terms["l_soft_off"] = soft_losses(ref, batch["soft_off"], d1s, d2s, m)

        return LossBreakdown.from_terms(**terms)


def masked_output(pred: torch.Tensor, fg: torch.Tensor, fill: float) -> torch.Tensor:
    """Fuera del primer plano la predicción se sustituye por el valor de relleno."""
    return pred * fg + fill * (1.0 - fg)
