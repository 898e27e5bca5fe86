"""
Métricas (RMSE, SSIM, li-SSIM, LPIPS opcional) y evaluación de checkpoints.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from PIL import Image
from scipy import ndimage

from models.delight_network import DelightNet, load_checkpoint
from models.errors import ContractViolation, InvariantViolation, MissingArtifactError
from models.raster import pixels_of
from models.result_manager import ResultManager
from utils.colorimetry import luma_rec709
from utils.image_io import read_png
from utils.image_ops import apply_mask, resize

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 2
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_WINDOW = 11
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
METRIC_POLICY = {
    "rmse": "foreground-restricted, per-channel, unit range",
    "ssim": "full frame, Rec.709 luma, 11x11 Gaussian sigma 1.5, valid region only",
    "li_ssim": "ssim with the luminance term dropped (alpha = 0)",
    "background": "black",
}


# ========== MÉTRICAS ==========

def rmse(a, b, foreground) -> float:
    """Raíz del error cuadrático medio sobre los píxeles de primer plano."""
    pa, pb = pixels_of(a), pixels_of(b)
    if pa.shape != pb.shape:
        raise ContractViolation(f"Formas distintas: {pa.shape} vs {pb.shape}")
    fg = pixels_of(foreground)[..., 0] > 0.5
    if fg.shape != pa.shape[:2]:
        raise ContractViolation("La máscara no coincide con la imagen")
    if not fg.any():
        raise ContractViolation("RMSE sobre un primer plano vacío")
    diff = (pa - pb)[fg]
    return float(np.sqrt(np.mean(diff * diff)))


def _ssim_maps(a, b):
    ya, yb = luma_rec709(a), luma_rec709(b)
    if ya.shape != yb.shape:
        raise ContractViolation(f"Formas distintas: {ya.shape} vs {yb.shape}")
    if min(ya.shape) < SSIM_WINDOW:
        raise ContractViolation(f"Imagen {ya.shape} menor que la ventana SSIM {SSIM_WINDOW}")

    def blur(x):
        return ndimage.gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    mu_a, mu_b = blur(ya), blur(yb)
    var_a = blur(ya * ya) - mu_a * mu_a
    var_b = blur(yb * yb) - mu_b * mu_b
    cov = blur(ya * yb) - mu_a * mu_b
    luminance = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + SSIM_C1)
    contrast_structure = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    pad = SSIM_WINDOW // 2
    crop = (slice(pad, -pad), slice(pad, -pad))
    return luminance[crop], contrast_structure[crop]


def ssim(a, b) -> float:
    luminance, cs = _ssim_maps(a, b)
    return float(np.mean(luminance * cs))


def li_ssim(a, b) -> float:
    """SSIM sin el término de luminancia."""
    _, cs = _ssim_maps(a, b)
    return float(np.mean(cs))


class LpipsMetric:
    """LPIPS como complemento opcional; ``available`` es False si el paquete no está."""

    def __init__(self, net: str = "alex"):
        self.version = None
        self._model = None
        try:
            import lpips
        except ImportError:
            logger.info("lpips no instalado: métrica omitida")
            return
        self.version = f"lpips {getattr(lpips, '__version__', 'unknown')} ({net})"
        self._model = lpips.LPIPS(net=net, verbose=False).eval()

    @property
    def available(self) -> bool:
        return self._model is not None

    def __call__(self, a, b) -> float:
        def to_tensor(x):
            return torch.from_numpy(pixels_of(x) * 2.0 - 1.0).permute(2, 0, 1)[None].float()

        with torch.no_grad():
            return float(self._model(to_tensor(a), to_tensor(b)))


# ========== INFERENCIA ==========

def delight_image(model: DelightNet, image, foreground=None, want_offset: bool = False) -> Dict[str, np.ndarray]:
    """
    Aplica D1 (y D2 si se pide) a una imagen de cualquier tamaño.

    La imagen se redimensiona al múltiplo de 2^depth más cercano y la salida
    vuelve al tamaño original.

    Returns:
        {"dlt": HxWx3 en [0,1], "off": HxWx3 en [-1,1] si want_offset}
    """
    px = pixels_of(image)
    if px.shape[2] != 3:
        raise ContractViolation(f"Se requiere una imagen RGB, recibido {px.shape[2]} canales")
    if foreground is not None:
        px = apply_mask(px, foreground)
    h, w = px.shape[:2]
    m = model.size_multiple
    th, tw = max(2 * m, int(round(h / m)) * m), max(2 * m, int(round(w / m)) * m)
    resized = resize(px, th, tw)

    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(resized * 2.0 - 1.0).permute(2, 0, 1)[None].to(dtype)
    model.eval()
    with torch.no_grad():
        outputs = model(x, want_offset=want_offset)

    def back(t: torch.Tensor) -> np.ndarray:
        return resize(t[0].permute(1, 2, 0).double().numpy(), h, w)

    result = {"dlt": np.clip((back(outputs["dlt"]) + 1.0) * 0.5, 0.0, 1.0)}
    if want_offset:
        result["off"] = np.clip(back(outputs["off"]), -1.0, 1.0)
    if foreground is not None:
        result = {k: apply_mask(v, foreground) for k, v in result.items()}
    return result


# ========== INFORME ==========

@dataclass
class MetricReport:
    per_image: List[Dict] = field(default_factory=list)
    aggregate: Dict[str, float] = field(default_factory=dict)
    sample_ids: List[str] = field(default_factory=list)
    config_hash: str = ""
    lpips_version: Optional[str] = None
    flagged: List[str] = field(default_factory=list)

    def compute_aggregate(self) -> Dict[str, float]:
        frame = pd.DataFrame([r for r in self.per_image if not r.get("missing_gt")])
        self.aggregate = {}
        for column in frame.columns:
            if column == "id" or not pd.api.types.is_numeric_dtype(frame[column]):
                continue
            self.aggregate[column] = float(frame[column].mean())
        return self.aggregate

    def validate(self) -> None:
        for row in self.per_image:
            if row.get("missing_gt"):
                continue
            if row["rmse"] < 0:
                raise InvariantViolation(f"RMSE negativo en {row['id']}")
            for key in ("ssim", "li_ssim"):
                if not -1.0 - 1e-9 <= row[key] <= 1.0 + 1e-9:
                    raise InvariantViolation(f"{key} fuera de [-1,1] en {row['id']}")

    def to_dict(self) -> Dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "policy": METRIC_POLICY,
            "config_hash": self.config_hash,
            "lpips_version": self.lpips_version,
            "sample_ids": self.sample_ids,
            "flagged": self.flagged,
            "per_image": self.per_image,
            "aggregate": self.aggregate,
        }


def _grid(panels: List[np.ndarray]) -> Image.Image:
    tiles = []
    for panel in panels:
        px = np.clip(pixels_of(panel), 0.0, 1.0)
        if px.shape[2] == 1:
            px = np.repeat(px, 3, axis=2)
        tiles.append((px * 255.0 + 0.5).astype(np.uint8))
    height = max(t.shape[0] for t in tiles)
    canvas = Image.new("RGB", (sum(t.shape[1] for t in tiles), height))
    x = 0
    for tile in tiles:
        canvas.paste(Image.fromarray(tile), (x, 0))
        x += tile.shape[1]
    return canvas


class Evaluator:
    """Evalúa un checkpoint sobre las entradas de un manifiesto o índice de muestras."""

    def __init__(self, use_lpips: bool = False):
        self.lpips = LpipsMetric() if use_lpips else None

    @staticmethod
    def collect_entries(manifest_path: Path, split: Optional[str] = None) -> List[Dict]:
        """Entradas {id, input, target, foreground, hf_mask?} con rutas absolutas."""
        manifest_path = Path(manifest_path)
        if manifest_path.is_dir():
            manifest_path = manifest_path / "samples.json"
        if not manifest_path.exists():
            raise MissingArtifactError(f"No existe el manifiesto: {manifest_path}")
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
        base = manifest_path.parent
        entries = []
        if data.get("evaluations"):
            for e in data["evaluations"]:
                if split and e.get("split", "test") != split:
                    continue
                entries.append({
                    "id": e["id"],
                    "input": base / e["input_path"],
                    "target": base / e["target_path"] if e.get("target_path") else None,
                    "foreground": base / e["foreground_path"],
                    "hf_mask": base / e["hf_mask_path"] if e.get("hf_mask_path") else None,
                })
        elif data.get("samples"):
            for e in data["samples"]:
                if split and e.get("split", "train") != split:
                    continue
                d = base / e["dir"]
                entries.append({"id": e["id"], "input": d / "src.png", "target": d / "dlt.png",
                                "foreground": d / "fg.png", "hf_mask": d / "w.png"})
        else:
            raise MissingArtifactError(f"{manifest_path.name} no contiene entradas evaluables")
        return entries

    def evaluate_entry(self, model: DelightNet, entry: Dict, grid_dir: Optional[Path]) -> Dict:
        image = read_png(entry["input"])[..., :3]
        fg = (read_png(entry["foreground"])[..., :1] > 0.5).astype(np.float64)
        output = delight_image(model, image, fg)["dlt"]
        row = {"id": entry["id"]}

        target_path = entry.get("target")
        if target_path is None or not Path(target_path).exists():
            row["missing_gt"] = True
            logger.warning(f"{entry['id']}: sin verdad de terreno, métricas omitidas")
            target = None
        else:
            target = apply_mask(read_png(target_path)[..., :3], fg)
            masked_input = apply_mask(image, fg)
            row.update({
                "rmse": rmse(output, target, fg),
                "ssim": ssim(output, target),
                "li_ssim": li_ssim(output, target),
                "input_rmse": rmse(masked_input, target, fg),
                "input_ssim": ssim(masked_input, target),
                "input_li_ssim": li_ssim(masked_input, target),
            })
            if self.lpips is not None and self.lpips.available:
                row["lpips"] = self.lpips(output, target)

        if grid_dir is not None:
            hf_path = entry.get("hf_mask")
            hf = read_png(hf_path)[..., :1] if hf_path and Path(hf_path).exists() else np.zeros_like(fg)
            panels = [apply_mask(image, fg), output, target if target is not None else np.zeros_like(output), hf]
            _grid(panels).save(grid_dir / f"{entry['id']}.png")
        return row

    def evaluate(self, checkpoint_path: Path, manifest_path: Path, out_dir: Path,
                 split: Optional[str] = None, write_grids: bool = True) -> MetricReport:
        """
        Inferencia D1 sobre cada entrada, cuadrícula PNG (entrada | salida | GT | W),
        ``report.json`` y ``metrics.csv``.
        """
        checkpoint = load_checkpoint(checkpoint_path)
        entries = self.collect_entries(manifest_path, split)
        results = ResultManager(Path(out_dir))
        grid_dir = results.base_dir / "grids" if write_grids else None
        if grid_dir is not None:
            grid_dir.mkdir(parents=True, exist_ok=True)

        report = MetricReport(config_hash=checkpoint.config_hash,
                              lpips_version=self.lpips.version if self.lpips else None)
        for entry in entries:
            row = self.evaluate_entry(checkpoint.model, entry, grid_dir)
            report.per_image.append(row)
            report.sample_ids.append(entry["id"])
            if row.get("missing_gt"):
                report.flagged.append(entry["id"])
        report.compute_aggregate()
        report.validate()

        results.write_json("report.json", report.to_dict())
        results.write_metrics_csv(report.per_image)
        logger.info(f"Evaluación: {len(entries)} imágenes, agregados {report.aggregate}")
        return report

