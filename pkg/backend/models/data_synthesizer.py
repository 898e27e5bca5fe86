"""
Síntesis de datos de entrenamiento a partir de capturas OLAT.

Cadena por captura: eliminación de luz ambiente, reparación de especulares,
objetivo de-lit, composición de entorno, variante de sombra suave, offsets
de sombreado y máscara de alta frecuencia.
"""
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.capture import OlatCapture, SynthConfig, TrainingSample
from models.dataset import load_capture, load_manifest
from models.errors import ContractViolation, InvariantViolation, SynthesisError
from models.raster import MaskImage, RasterImage, pixels_of
from models.result_manager import ResultManager
from models.validator import DatasetValidator
from utils.colorimetry import kelvin_to_rgb_gains, luma_rec709, luminance_lab, replace_luminance
from utils.image_ops import (
    apply_mask,
    gaussian_blur,
    grad_sum,
    guided_filter,
    inpaint_diffusion,
    median_filter,
)

logger = logging.getLogger(__name__)

LUMINANCE_FLOOR = 1e-4
AVERAGE_FLOOR = 1e-4
HF_MASK_GAIN = 10.0


def sample_rng(seed: int, capture_id: str, variant: int) -> np.random.Generator:
    """Flujo aleatorio propio de (semilla, captura, variante)."""
    return np.random.default_rng([int(seed), zlib.crc32(capture_id.encode("utf-8")), int(variant)])


class DataSynthesizer:
    """Operaciones de síntesis; sin estado, seguro entre hilos."""

    # ========== LUZ AMBIENTE Y ESPECULARES ==========

    def remove_ambient(self, flash, room) -> RasterImage:
        """(1 − L(room)/L(flash)) ⊙ flash con el cociente recortado a [0,1]."""
        flash_px = pixels_of(flash)
        room_px = pixels_of(room)
        if flash_px.shape != room_px.shape:
            raise ContractViolation(f"flash {flash_px.shape} y room {room_px.shape} difieren")
        l_flash = luminance_lab(flash_px)
        ratio = np.clip(luminance_lab(room_px) / np.maximum(l_flash, LUMINANCE_FLOOR), 0.0, 1.0)
        out = np.where(l_flash > 0, (1.0 - ratio) * flash_px, 0.0)
        return RasterImage(out)

    def specular_response(self, room, flash_mean) -> np.ndarray:
        """(min(1, room² / avg))⁴ por canal, máximo sobre canales (HxWx1)."""
        room_px = pixels_of(room)
        avg = np.maximum(pixels_of(flash_mean), AVERAGE_FLOOR)
        if room_px.shape != avg.shape:
            raise ContractViolation(f"room {room_px.shape} y promedio {avg.shape} difieren")
        response = np.minimum(1.0, room_px ** 2 / avg) ** 4
        return response.max(axis=2, keepdims=True)

    def detect_speculars(self, room, flash_mean, threshold: float = 0.5) -> MaskImage:
        return MaskImage((self.specular_response(room, flash_mean) > threshold).astype(np.float64))

    def build_olat_set(self, capture: OlatCapture,
                       threshold: float = 0.5) -> Tuple[List[RasterImage], RasterImage]:
        """
        Convierte los flashes en imágenes OLAT.

        Returns:
            Tupla (olats, room_nospec): un OLAT por flash y la imagen de sala
            con las regiones especulares rellenadas.
        """
        flashes = [f.pixels for f in capture.flash_images]
        if not flashes:
            raise ContractViolation(f"La captura {capture.capture_id} no tiene flashes")
        average = np.mean(flashes, axis=0)
        hole = self.detect_speculars(capture.room_image, average, threshold).pixels
        hole = hole * (capture.foreground.pixels > 0.5)
        has_hole = bool(hole.any())
        if has_hole:
            logger.debug(f"{capture.capture_id}: {int(hole.sum())} px especulares a rellenar")

        olats = []
        for flash in flashes:
            olat = self.remove_ambient(flash, capture.room_image).pixels
            if has_hole:
                olat = inpaint_diffusion(olat, hole)
            olats.append(RasterImage(olat))
        room = capture.room_image.pixels
        room_nospec = RasterImage(inpaint_diffusion(room, hole) if has_hole else room.copy())
        return olats, room_nospec

    # ========== OBJETIVO DE-LIT ==========

    def build_delit_target(self, olats: Sequence, room_nospec, gain: float = 6.0) -> RasterImage:
        """Media de los OLATs con la luminancia Lab incrementada en ``gain``·L(room_nospec)."""
        if len(olats) == 0:
            raise ContractViolation("build_delit_target requiere al menos un OLAT")
        mean = np.mean([pixels_of(o) for o in olats], axis=0)
        boost = gain * luminance_lab(pixels_of(room_nospec))
        if not np.any(boost > 0):
            return RasterImage(mean)
        lifted = replace_luminance(mean, luminance_lab(mean) + boost)
        return RasterImage(np.where(boost > 0, lifted, mean))

    # ========== COMPOSICIÓN DE ENTORNO ==========

    def compose_environment(self, olats: Sequence, rng: np.random.Generator,
                            config: Optional[SynthConfig] = None, kind: str = "pair",
                            delit=None, room_nospec=None, weight: Optional[float] = None,
                            pair: Optional[Tuple[int, int]] = None,
                            temperatures: Optional[Tuple[float, float]] = None,
                            gains: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                            boost: Optional[float] = None) -> Tuple[RasterImage, Dict]:
        """
        Iluminación de entorno sintética y su descripción.

        Los sorteos se hacen siempre en el mismo orden (par, peso, dos
        temperaturas, refuerzo) aunque se fuercen valores, de modo que el
        flujo aleatorio no dependa de los argumentos.

        Args:
            kind: 'pair' (mezcla de dos OLATs), 'delit' (de-lit coloreado) o 'room' (solo sala)
            weight, pair, temperatures, gains, boost: valores forzados

        Returns:
            Tupla (imagen, meta)
        """
        config = config or SynthConfig()
        n = len(olats)
        if n < 2:
            raise ContractViolation(f"Se requieren al menos 2 OLATs, recibidos {n}")

        drawn_pair = tuple(int(i) for i in rng.choice(n, size=2, replace=False))
        drawn_weight = float(rng.uniform(*config.blend_weight_range))
        drawn_temps = tuple(float(t) for t in rng.uniform(*config.tint_temperature_range, size=2))
        boosted = bool(rng.random() < config.boost_probability)
        drawn_boost = float(rng.uniform(*config.intensity_boost_range))

        a, b = pair if pair is not None else drawn_pair
        w = drawn_weight if weight is None else float(weight)
        t1, t2 = temperatures if temperatures is not None else drawn_temps
        if gains is not None:
            g1, g2 = (np.asarray(g, dtype=np.float64) for g in gains)
        else:
            g1, g2 = kelvin_to_rgb_gains(t1), kelvin_to_rgb_gains(t2)
        scale = (drawn_boost if boosted else 1.0) if boost is None else float(boost)

        if kind == "pair":
            image = w * g1 * pixels_of(olats[a]) + (1.0 - w) * g2 * pixels_of(olats[b])
        elif kind == "delit":
            if delit is None:
                raise ContractViolation("La variante 'delit' requiere la imagen de-lit")
            image = g1 * pixels_of(delit)
        elif kind == "room":
            if room_nospec is None:
                raise ContractViolation("La variante 'room' requiere la imagen de sala")
            room_px = pixels_of(room_nospec)
            # exposición igualada a la luma media de los OLATs
            target = float(np.mean([luma_rec709(o).mean() for o in olats]))
            current = float(luma_rec709(room_px).mean())
            exposure = target / current if current > 0 else 1.0
            image = g1 * room_px * exposure
        else:
            raise ContractViolation(f"Variante desconocida: {kind}")

        image = np.clip(image * scale, 0.0, 1.0)
        meta = {
            "kind": kind,
            "pair": [int(a), int(b)] if kind == "pair" else None,
            "weight": w if kind == "pair" else None,
            "temperatures": [float(t1), float(t2)],
            "boost": scale,
        }
        return RasterImage(image), meta

    def composite_environment(self, olats: Sequence, rng: np.random.Generator,
                              config: Optional[SynthConfig] = None, **overrides) -> RasterImage:
        image, _ = self.compose_environment(olats, rng, config, **overrides)
        return image

    # ========== SOMBRA SUAVE Y MÁSCARA HF ==========

    def synth_soft_shadow(self, src, dlt, parsing: Dict[str, MaskImage], foreground,
                          epsilon: int, kappa: int,
                          regularizer: float = 1e-4) -> RasterImage:
        """Nariz y boca con Ω(src, dlt, ε); el resto del primer plano con Ω(src, dlt, κ)."""
        if epsilon > kappa:
            raise ContractViolation(f"Se requiere ε <= κ: ε={epsilon}, κ={kappa}")
        nose = pixels_of(parsing["nose"]) > 0.5
        mouth = pixels_of(parsing["mouth"]) > 0.5
        if np.any(nose & mouth):
            raise ContractViolation("Las máscaras de nariz y boca se solapan")
        fg = pixels_of(foreground) > 0.5
        other = fg & ~nose & ~mouth

        small = guided_filter(src, dlt, epsilon, regularizer)
        large = guided_filter(src, dlt, kappa, regularizer)
        soft = np.where(nose | mouth, small, 0.0) + np.where(other, large, 0.0)
        return RasterImage(np.clip(soft, 0.0, 1.0) * fg)

    def build_hf_mask(self, src, dlt, foreground=None, radius: int = 15,
                      regularizer: float = 1e-4, median_size: int = 5,
                      sigma: float = 3.0) -> MaskImage:
        """
        Máscara W de bordes de sombra nítidos.

        a = 10·max(∇src − ∇Ω(src, dlt, 15), 0); b = mediana 5×5 de a;
        W = min(b + gauss(b, 3), 1), a cero fuera del primer plano.
        """
        src_px = pixels_of(src)
        if src_px.shape[:2] != pixels_of(dlt).shape[:2]:
            raise ContractViolation("src y dlt deben tener el mismo tamaño")
        filtered = guided_filter(src_px, dlt, radius, regularizer)
        a = HF_MASK_GAIN * np.maximum(grad_sum(src_px) - grad_sum(filtered), 0.0)
        b = median_filter(a, median_size)
        w = np.minimum(b + gaussian_blur(b, sigma), 1.0)
        if foreground is not None:
            w = apply_mask(w, foreground)
        return MaskImage(w)

    # ========== MUESTRA COMPLETA ==========

    def assemble_sample(self, capture: OlatCapture, config: SynthConfig,
                        rng: np.random.Generator, sample_id: Optional[str] = None) -> TrainingSample:
        """Cadena completa para una captura; los errores llevan la etapa que falló."""
        cid = capture.capture_id

        def stage(name: str, fn: Callable, *args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except SynthesisError:
                raise
            except Exception as e:
                logger.error(f"Síntesis de {cid} falló en la etapa '{name}': {e}")
                raise SynthesisError(name, cid, e) from e

        def check_capture():
            is_valid, errors = DatasetValidator.validate_capture(capture)
            if not is_valid:
                raise ContractViolation(DatasetValidator.describe_errors(errors))
            if len(capture.flash_images) < config.min_olat_count:
                raise ContractViolation(f"Se requieren al menos {config.min_olat_count} flashes")

        stage("validate_capture", check_capture)
        fg = capture.foreground
        olats, room_nospec = stage("olat_set", self.build_olat_set, capture, config.specular_threshold)
        dlt_full = stage("delit_target", self.build_delit_target, olats, room_nospec,
                         config.delit_luminance_gain)
        dlt = apply_mask(dlt_full, fg)

        kinds, weights = zip(*config.variant_weights)
        probabilities = np.asarray(weights, dtype=np.float64) / float(np.sum(weights))
        kind = str(kinds[int(rng.choice(len(kinds), p=probabilities))])
        src_img, env_meta = stage("environment", self.compose_environment, olats, rng, config,
                                  kind=kind, delit=dlt_full, room_nospec=room_nospec)
        src = apply_mask(src_img, fg)

        kappa = int(rng.integers(config.kappa_range[0], config.kappa_range[1] + 1))
        soft = stage("soft_shadow", self.synth_soft_shadow, src, dlt,
                     {"nose": capture.nose, "mouth": capture.mouth}, fg,
                     config.epsilon_radius, kappa, config.gf_regularizer).pixels
        hf_mask = stage("hf_mask", self.build_hf_mask, src, dlt, fg, config.hf_radius,
                        config.gf_regularizer, config.hf_median_size, config.hf_sigma)

        meta = {"capture_id": cid, "seed": config.rng_seed, "epsilon": config.epsilon_radius,
                "kappa": kappa}
        meta.update(env_meta)
        sample = TrainingSample(
            sample_id=sample_id or cid,
            src=RasterImage(src),
            dlt=RasterImage(dlt),
            off=RasterImage(src - dlt, "signed"),
            soft=RasterImage(soft),
            soft_off=RasterImage(soft - dlt, "signed"),
            hf_mask=hf_mask,
            foreground=fg,
            fg_count=fg.count(),
            meta=meta,
        )

        def check_sample():
            is_valid, errors = DatasetValidator.validate_sample(sample)
            if not is_valid:
                raise InvariantViolation(DatasetValidator.describe_errors(errors))

        stage("validate_sample", check_sample)
        logger.debug(f"Muestra {sample.sample_id}: {kind}, κ={kappa}, M={sample.fg_count}")
        return sample

    # ========== LOTE ==========

    def synthesize_manifest(self, manifest_path: Path, out_dir: Path,
                            config: Optional[SynthConfig] = None, workers: int = 1,
                            olat_count: Optional[int] = None) -> Path:
        """
        Sintetiza ``samples_per_capture`` muestras por captura del manifiesto.

        Cada muestra usa su propio flujo aleatorio, así que el número de hilos
        no cambia los resultados.

        Returns:
            Ruta del índice ``samples.json``
        """
        config = config or SynthConfig()
        manifest_path = Path(manifest_path)
        manifest = load_manifest(manifest_path)
        base_dir = manifest_path.parent
        results = ResultManager(Path(out_dir))
        records = manifest["captures"]
        logger.info(f"Sintetizando {len(records)} capturas × {config.samples_per_capture} variantes "
                    f"con {workers} hilo(s)")

        def process(record: Dict) -> List[Dict]:
            capture = load_capture(record, base_dir, olat_count)
            entries = []
            for k in range(config.samples_per_capture):
                sample_id = f"{capture.capture_id}_v{k:02d}"
                rng = sample_rng(config.rng_seed, capture.capture_id, k)
                sample = self.assemble_sample(capture, config, rng, sample_id)
                sample.meta["variant"] = k
                results.save_sample(sample, sample_id)
                entries.append({
                    "id": sample_id,
                    "dir": sample_id,
                    "capture_id": capture.capture_id,
                    "variant": k,
                    "kind": sample.meta["kind"],
                    "split": record.get("split", "train"),
                    "fg_count": sample.fg_count,
                })
            return entries

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                nested = list(pool.map(process, records))
        else:
            nested = [process(r) for r in records]
        entries = [e for group in nested for e in group]

        extra = {"seed": config.rng_seed, "manifest": manifest_path.name,
                 "config": asdict(config)}
        return results.write_samples_index(entries, extra)


# Instancia global
data_synthesizer = DataSynthesizer()
