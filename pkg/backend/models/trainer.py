"""
Protocolo de entrenamiento: aumento de datos, doble pasada (I_src e I_soft),
Adam, checkpoints, registro de pérdidas y reanudación determinista.
"""
import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from models.capture import TrainingSample
from models.dataset import load_sample, load_samples_index, resolve_sample_dirs, split_of
from models.delight_network import (
    DelightNet,
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from models.errors import ContractViolation, TrainingDivergedError
from models.losses import DelightLoss, FeatureExtractor, LossBreakdown, LossSwitches
from models.result_manager import ResultManager
from utils.image_ops import crop, flip_horizontal, resize

logger = logging.getLogger(__name__)

LOSS_LOG_NAME = "loss_log.jsonl"
BEST_NAME = "best.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    """Hiperparámetros del entrenamiento."""

    epochs: int = 4
    learning_rate: float = 2e-4
    batch_size: int = 8
    resolution: int = 256
    switches: LossSwitches = field(default_factory=LossSwitches)
    seed: int = 0
    flip_prob: float = 0.5
    crop_range: Tuple[int, int] = (280, 480)
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    soft_alternate: bool = False
    max_steps: int = 0
    checkpoint_every: int = 0
    val_fraction: float = 0.1
    workers: int = 1
    log_every: int = 50

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.resolution < 1:
            raise ContractViolation("epochs, batch_size y resolution deben ser >= 1")
        lo, hi = self.crop_range
        if not 1 <= lo <= hi:
            raise ContractViolation(f"Rango de recorte inválido: {self.crop_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ContractViolation(f"flip_prob fuera de [0,1]: {self.flip_prob}")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["crop_range"] = list(self.crop_range)
        data["betas"] = list(self.betas)
        return data


# ========== AUMENTO DE DATOS ==========

def crop_resize(sample: TrainingSample, window: Tuple[int, int, int, int], resolution: int,
                flip: bool = False) -> TrainingSample:
    """Aplica el mismo recorte, redimensionado y volteo a todos los planos."""
    planes = {}
    for name, plane in sample.planes().items():
        out = resize(crop(plane, window), resolution, resolution)
        planes[name] = flip_horizontal(out) if flip else out

    fg = (planes["foreground"] > 0.5).astype(np.float64)
    planes["foreground"] = fg
    for name in ("src", "dlt", "soft", "off", "soft_off", "hf_mask"):
        planes[name] = planes[name] * fg
    transformed = sample.with_planes(planes)
    transformed.meta.update({"crop": list(window), "flip": flip})
    return transformed


def augment(sample: TrainingSample, rng: np.random.Generator, config: TrainConfig) -> TrainingSample:
    """
    Recorte cuadrado aleatorio, redimensionado a ``resolution`` y volteo opcional.

    Los sorteos siguen siempre el orden tamaño, fila, columna, volteo.
    """
    h, w = sample.shape
    lo, hi = config.crop_range
    size = int(rng.integers(lo, hi + 1))
    if size > min(h, w):
        raise ContractViolation(f"Ventana de recorte {size} mayor que la imagen {h}×{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    flip = bool(rng.random() < config.flip_prob)
    return crop_resize(sample, (top, left, size, size), config.resolution, flip)


def center_view(sample: TrainingSample, config: TrainConfig) -> TrainingSample:
    """Vista determinista para validación: recorte central del mayor tamaño admitido."""
    h, w = sample.shape
    size = min(h, w, config.crop_range[1])
    return crop_resize(sample, ((h - size) // 2, (w - size) // 2, size, size), config.resolution)


def to_batch(samples: Sequence[TrainingSample], dtype: torch.dtype = torch.float32) -> Dict[str, torch.Tensor]:
    """src/dlt/soft → 2x−1; off/soft_off tal cual; W y máscara en [0,1]."""
    def stack(name: str, signed: bool = False) -> torch.Tensor:
        arr = np.stack([getattr(s, name).pixels for s in samples])
        if signed:
            arr = arr * 2.0 - 1.0
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)

    return {
        "src": stack("src", True),
        "dlt": stack("dlt", True),
        "soft": stack("soft", True),
        "off": stack("off"),
        "soft_off": stack("soft_off"),
        "hf_mask": stack("hf_mask"),
        "fg": stack("foreground"),
        "fg_count": torch.tensor([s.fg_count for s in samples], dtype=dtype),
    }


# ========== PASO DE ENTRENAMIENTO ==========

def compute_losses(model: DelightNet, batch: Dict[str, torch.Tensor], loss_fn: DelightLoss,
                   step: int = 0, soft_alternate: bool = False) -> LossBreakdown:
    """Pasadas hacia delante de I_src (D1 y D2) y de I_soft según los interruptores."""
    switches = loss_fn.switches
    use_src = not soft_alternate or not switches.soft or step % 2 == 0
    use_soft = switches.soft and (not soft_alternate or step % 2 == 1)
    src_out = model(batch["src"], want_offset=switches.off) if use_src else None
    soft_out = model(batch["soft"], want_offset=True) if use_soft else None
    return loss_fn(batch, src_out, soft_out)


def train_step(model: DelightNet, batch: Dict[str, torch.Tensor], loss_fn: DelightLoss,
               optimizer: torch.optim.Optimizer, step: int = 0,
               soft_alternate: bool = False) -> LossBreakdown:
    """Una actualización de Adam sobre la suma de los términos activos.

    Si la pérdida no es finita no se actualiza nada y se lanza
    ``TrainingDivergedError`` (sin ruta de volcado).
    """
    model.train()
    optimizer.zero_grad(set_to_none=True)
    breakdown = compute_losses(model, batch, loss_fn, step, soft_alternate)
    if not torch.isfinite(breakdown.total):
        raise TrainingDivergedError(step, batch.get("ids", []))
    breakdown.total.backward()
    optimizer.step()
    return LossBreakdown(**{k: v.detach() for k, v in vars(breakdown).items()})


# ========== BUCLE COMPLETO ==========

@dataclass
class TrainResult:
    steps: int
    epochs_completed: int
    last_checkpoint: Optional[Path]
    best_checkpoint: Optional[Path]
    best_metric: float
    history: List[Dict[str, float]] = field(default_factory=list)


class Trainer:
    """Orquesta épocas, validación, checkpoints y reanudación."""

    def __init__(self, config: TrainConfig, model_config: ModelConfig, out_dir: Path,
                 extractor: Optional[FeatureExtractor] = None):
        self.config = config
        self.model_config = model_config
        self.results = ResultManager(Path(out_dir))
        self.out_dir = self.results.base_dir
        self.extractor = extractor if extractor is not None else FeatureExtractor.pretrained()
        self.loss_fn = DelightLoss(self.extractor, config.switches)

    # ---------- datos ----------

    def load_samples(self, index_path: Path) -> Tuple[List[TrainingSample], List[TrainingSample]]:
        """Muestras de entrenamiento y validación (10 % por hash del id)."""
        index = load_samples_index(index_path)
        train, val = [], []
        for entry, sample_dir in zip(index["samples"], resolve_sample_dirs(index)):
            if entry.get("split", "train") == "test":
                continue
            sample = load_sample(sample_dir)
            (val if split_of(sample.sample_id, self.config.val_fraction) == "val" else train).append(sample)
        if not train:
            raise ContractViolation(f"No hay muestras de entrenamiento en {index_path}")
        logger.info(f"Muestras: {len(train)} entrenamiento, {len(val)} validación")
        return train, val

    def _augmented(self, samples: Sequence[TrainingSample], epoch: int,
                   pool: Optional[ThreadPoolExecutor]) -> List[TrainingSample]:
        def one(sample: TrainingSample) -> TrainingSample:
            rng = np.random.default_rng([self.config.seed, epoch, zlib.crc32(sample.sample_id.encode("utf-8"))])
            return augment(sample, rng, self.config)

        return list(pool.map(one, samples)) if pool is not None else [one(s) for s in samples]

    def validate(self, model: DelightNet, samples: Sequence[TrainingSample]) -> float:
        if not samples:
            return math.nan
        model.eval()
        totals = []
        with torch.no_grad():
            for i in range(0, len(samples), self.config.batch_size):
                chunk = [center_view(s, self.config) for s in samples[i:i + self.config.batch_size]]
                batch = to_batch(chunk)
                totals.append(float(compute_losses(model, batch, self.loss_fn).total) * len(chunk))
        return sum(totals) / len(samples)

    # ---------- diagnóstico ----------

    def _dump_divergence(self, step: int, batch_samples: Sequence[TrainingSample],
                         model: DelightNet, breakdown: LossBreakdown) -> Path:
        dump_dir = self.out_dir / "diagnostics" / f"step-{step}"
        dump_dir.mkdir(parents=True, exist_ok=True)
        dumper = ResultManager(dump_dir)
        for sample in batch_samples:
            dumper.save_sample(sample, sample.sample_id)
        dumper.write_json("divergence.json", {
            "step": step,
            "sample_ids": [s.sample_id for s in batch_samples],
            "breakdown": {k: repr(float(v)) for k, v in vars(breakdown).items()},
        })
        save_checkpoint(dump_dir / "model.ckpt", model, step=step)
        return dump_dir

    # ---------- bucle ----------

    def fit(self, index_path: Path, resume: Optional[Path] = None) -> TrainResult:
        """
        Entrena sobre el índice de muestras.

        Reanudar desde un checkpoint reproduce exactamente la trayectoria: el
        orden de cada época y los aumentos dependen solo de (semilla, época, id).

        Returns:
            TrainResult con rutas de checkpoints e historial de pérdidas
        """
        cfg = self.config
        train, val = self.load_samples(index_path)
        if resume is None:
            (self.out_dir / LOSS_LOG_NAME).unlink(missing_ok=True)

        step, start_epoch, best_metric = 0, 0, math.inf
        if resume is not None:
            checkpoint = load_checkpoint(resume)
            model = checkpoint.model
            if checkpoint.config_hash and checkpoint.config_hash != self.model_config.config_hash():
                logger.warning("La configuración del modelo del checkpoint difiere; se usa la del checkpoint")
            step, start_epoch = checkpoint.step, checkpoint.epoch
            truncate_loss_log(self.out_dir / LOSS_LOG_NAME, step)
            best_metric = float(checkpoint.extra.get("best_metric", math.inf))
        else:
            model = build_model(self.model_config)

        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.adam_eps)
        if resume is not None and checkpoint.optimizer_state is not None:
            optimizer.load_state_dict(checkpoint.optimizer_state)
            logger.info(f"Reanudando desde {Path(resume).name}: paso {step}, época {start_epoch}")

        batches_per_epoch = math.ceil(len(train) / cfg.batch_size)
        history: List[Dict[str, float]] = []
        last_ckpt: Optional[Path] = None
        best_ckpt = self.out_dir / BEST_NAME if resume is not None and (self.out_dir / BEST_NAME).exists() else None
        epochs_completed = start_epoch
        pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None

        try:
            for epoch in range(start_epoch, cfg.epochs):
                order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
                skip = step - epoch * batches_per_epoch
                epoch_totals = []
                for b in range(max(skip, 0), batches_per_epoch):
                    if cfg.max_steps and step >= cfg.max_steps:
                        break
                    chosen = [train[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                    augmented = self._augmented(chosen, epoch, pool)
                    batch = to_batch(augmented)
                    try:
                        breakdown = train_step(model, batch, self.loss_fn, optimizer, step, cfg.soft_alternate)
                    except TrainingDivergedError:
                        model.eval()
                        with torch.no_grad():
                            bad = compute_losses(model, batch, self.loss_fn, step, cfg.soft_alternate)
                        dump = self._dump_divergence(step, augmented, model, bad)
                        ids = [s.sample_id for s in augmented]
                        logger.error(f"Pérdida no finita en el paso {step}; diagnóstico en {dump}")
                        raise TrainingDivergedError(step, ids, dump)

                    step += 1
                    values = breakdown.to_floats()
                    history.append(values)
                    epoch_totals.append(values["total"])
                    self.results.append_jsonl(LOSS_LOG_NAME, breakdown.to_json_line(step))
                    if step == 1 or (cfg.log_every and step % cfg.log_every == 0):
                        logger.info(f"Paso {step} (época {epoch}): total {values['total']:.5f}")
                    if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                        last_ckpt = save_checkpoint(self.out_dir / f"step-{step}.ckpt", model, optimizer,
                                                    step, epoch, {"best_metric": best_metric})

                finished_epoch = step >= (epoch + 1) * batches_per_epoch
                if finished_epoch:
                    epochs_completed = epoch + 1
                metric = self.validate(model, val)
                if math.isnan(metric):
                    metric = float(np.mean(epoch_totals)) if epoch_totals else math.inf
                save_epoch = epochs_completed if finished_epoch else epoch
                last_ckpt = save_checkpoint(self.out_dir / f"step-{step}.ckpt", model, optimizer,
                                            step, save_epoch, {"best_metric": min(best_metric, metric)})
                if metric < best_metric:
                    best_metric = metric
                    best_ckpt = save_checkpoint(self.out_dir / BEST_NAME, model, optimizer, step, save_epoch,
                                                {"best_metric": best_metric})
                    logger.info(f"Nuevo mejor checkpoint (validación {metric:.5f})")
                if cfg.max_steps and step >= cfg.max_steps:
                    break
        finally:
            if pool is not None:
                pool.shutdown()

        return TrainResult(step, epochs_completed, last_ckpt, best_ckpt, best_metric, history)


def read_loss_log(path: Path) -> List[Dict[str, float]]:
    path = Path(path)
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def truncate_loss_log(path: Path, step: int) -> int:
    """Descarta los registros posteriores a ``step``; devuelve cuántos quedan."""
    path = Path(path)
    if not path.exists():
        return 0
    kept = [line for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip() and json.loads(line)["step"] <= step]
    path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")
    return len(kept)
