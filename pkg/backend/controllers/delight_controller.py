"""
Controlador principal: une fixtures, síntesis, entrenamiento, inferencia y evaluación.
"""
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from models.capture import SynthConfig
from models.data_synthesizer import data_synthesizer
from models.delight_network import ModelConfig, load_checkpoint
from models.errors import DelightError
from models.evaluator import Evaluator, delight_image
from models.fixture_renderer import FixtureScene, fixture_renderer
from models.losses import FeatureExtractor, LossSwitches
from models.result_manager import ResultManager
from models.trainer import TrainConfig, Trainer
from utils.config.delight_config import DelightConfig, delight_config
from utils.image_io import read_png, write_png, write_rawf

logger = logging.getLogger(__name__)


class DelightController:
    """Cada operación devuelve ``{"success", "exit_code", "error"?, ...}`` y deja un ``run.json``."""

    def __init__(self, config: Optional[DelightConfig] = None, argv: Sequence[str] = ()):
        self.config = config or delight_config
        self.argv = list(argv)

    # ========== CONSTRUCCIÓN DE CONFIGURACIONES ==========

    def synth_config(self) -> SynthConfig:
        c = self.config
        return SynthConfig(
            epsilon_radius=c["epsilon_radius"],
            kappa_range=c.kappa_range(),
            samples_per_capture=c["samples_per_capture"],
            rng_seed=c["seed"],
        )

    def model_config(self) -> ModelConfig:
        c = self.config
        widths = tuple(c["model_widths"])[:c["model_depth"]]
        return ModelConfig(depth=c["model_depth"], widths=widths, d2_skips=c["d2_skips"], seed=c["seed"])

    def train_config(self, switches: LossSwitches, checkpoint_every: int = 0) -> TrainConfig:
        c = self.config
        return TrainConfig(
            epochs=c["epochs"],
            learning_rate=c["learning_rate"],
            batch_size=c["batch_size"],
            resolution=c["resolution"],
            switches=switches,
            seed=c["seed"],
            flip_prob=c["flip_prob"],
            crop_range=c.crop_range(),
            soft_alternate=c["soft_alternate"],
            max_steps=c["max_steps"],
            checkpoint_every=checkpoint_every,
            workers=c["workers"],
        )

    def extractor(self) -> FeatureExtractor:
        if self.config["extractor"] == "miniature":
            return FeatureExtractor.miniature(seed=self.config["seed"])
        return FeatureExtractor.pretrained()

    # ========== EJECUCIÓN COMÚN ==========

    def _run(self, command: str, out_dir: Optional[Path], action: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        """Ejecuta ``action`` convirtiendo excepciones en códigos de salida."""
        start = time.time()
        try:
            result = {"success": True, "exit_code": 0}
            result.update(action())
        except DelightError as e:
            logger.error(f"{command}: {e}")
            result = {"success": False, "exit_code": e.exit_code, "error": str(e)}
        except Exception as e:
            logger.error(f"{command}: error inesperado: {e}", exc_info=True)
            result = {"success": False, "exit_code": 1, "error": str(e)}
        result["elapsed_seconds"] = round(time.time() - start, 3)

        if out_dir is not None:
            try:
                outcome = {k: v for k, v in result.items() if k != "elapsed_seconds"}
                ResultManager(out_dir).write_run_record(command, self.argv, self.config.as_dict(), outcome)
            except Exception as e:
                logger.warning(f"No se pudo escribir run.json en {out_dir}: {e}")
        return result

    # ========== SUBCOMANDOS ==========

    def make_fixtures(self, out_dir: Path, held_out: bool = True) -> Dict[str, Any]:
        def action():
            scene = FixtureScene.ring(count=self.config["olat_count"],
                                      resolution=self.config["fixture_resolution"])
            manifest = fixture_renderer.write_fixture_set(out_dir, self.config["fixture_captures"],
                                                          seed=self.config["seed"], scene=scene,
                                                          held_out=held_out)
            return {"manifest": str(manifest), "captures": self.config["fixture_captures"]}

        return self._run("fixtures", Path(out_dir), action)

    def synthesize(self, manifest: Path, out_dir: Path) -> Dict[str, Any]:
        def action():
            index = data_synthesizer.synthesize_manifest(manifest, out_dir, self.synth_config(),
                                                         workers=self.config["workers"],
                                                         olat_count=self.config["olat_count"])
            return {"index": str(index)}

        return self._run("synth", Path(out_dir), action)

    def train(self, samples: Path, out_dir: Path, ablate: Optional[str] = None, row: Optional[str] = None,
              resume: Optional[Path] = None, checkpoint_every: int = 0) -> Dict[str, Any]:
        def action():
            switches = LossSwitches.from_row(row) if row else LossSwitches.from_ablate(ablate)
            trainer = Trainer(self.train_config(switches, checkpoint_every), self.model_config(),
                              out_dir, self.extractor())
            outcome = trainer.fit(samples, resume=resume)
            return {
                "steps": outcome.steps,
                "epochs": outcome.epochs_completed,
                "last_checkpoint": str(outcome.last_checkpoint) if outcome.last_checkpoint else None,
                "best_checkpoint": str(outcome.best_checkpoint) if outcome.best_checkpoint else None,
                "best_metric": outcome.best_metric,
                "final_loss": outcome.history[-1]["total"] if outcome.history else None,
            }

        return self._run("train", Path(out_dir), action)

    def delight(self, image_path: Path, checkpoint_path: Path, output: Path,
                foreground: Optional[Path] = None, emit_offset: bool = False,
                bit_depth: int = 8) -> Dict[str, Any]:
        output = Path(output)

        def action():
            checkpoint = load_checkpoint(checkpoint_path)
            image = read_png(image_path)[..., :3]
            fg = (read_png(foreground)[..., :1] > 0.5).astype(np.float64) if foreground else None
            result = delight_image(checkpoint.model, image, fg, want_offset=emit_offset)
            write_png(output, result["dlt"], bit_depth=bit_depth)
            written = {"output": str(output)}
            if emit_offset:
                offset_raw = output.with_name(output.stem + "_offset.rawf")
                offset_png = output.with_name(output.stem + "_offset.png")
                write_rawf(offset_raw, result["off"])
                write_png(offset_png, (result["off"] + 1.0) * 0.5, bit_depth=bit_depth)
                written.update({"offset_rawf": str(offset_raw), "offset_png": str(offset_png)})
            return written

        return self._run("delight", output.parent, action)

    def evaluate(self, checkpoint_path: Path, manifest: Path, out_dir: Path,
                 split: Optional[str] = None, use_lpips: bool = False) -> Dict[str, Any]:
        def action():
            report = Evaluator(use_lpips=use_lpips).evaluate(checkpoint_path, manifest, out_dir, split)
            return {"report": str(Path(out_dir) / "report.json"), "aggregate": report.aggregate,
                    "images": len(report.per_image), "flagged": report.flagged}

        return self._run("eval", Path(out_dir), action)

    def make_mask(self, src_path: Path, dlt_path: Path, output: Path,
                  foreground: Optional[Path] = None) -> Dict[str, Any]:
        output = Path(output)

        def action():
            src = read_png(src_path)[..., :3]
            dlt = read_png(dlt_path)[..., :3]
            fg = (read_png(foreground)[..., :1] > 0.5).astype(np.float64) if foreground else None
            mask = data_synthesizer.build_hf_mask(src, dlt, fg)
            write_png(output, mask.pixels, bit_depth=8)
            return {"output": str(output), "coverage": float(np.mean(mask.pixels > 0))}

        return self._run("make-mask", output.parent, action)
