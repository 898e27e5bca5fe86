"""
Renderizador procedural de retratos de juguete con iluminación OLAT.

Escena: cabeza esférica sobre un torso plano con esquinas redondeadas, cámara
ortográfica mirando hacia -z, sombreado Lambertiano con sombras proyectadas
(intersección rayo-esfera y oclusión del plano del torso). Cada captura trae
su verdad de terreno analítica para validar el pipeline completo.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.capture import OlatCapture
from models.errors import ContractViolation
from models.raster import MaskImage, RasterImage
from utils.image_io import write_png

logger = logging.getLogger(__name__)

VIEW_DIRECTION = np.array([0.0, 0.0, 1.0])
ALBEDO_RANGE = (0.05, 0.95)


@dataclass(frozen=True)
class DirectionalLight:
    """Luz direccional; ``direction`` apunta desde la superficie hacia la luz."""

    direction: Tuple[float, float, float]
    intensity: float = 0.9

    def unit(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ContractViolation("La dirección de la luz no puede ser nula")
        return d / norm


@dataclass(frozen=True)
class HeldOutLighting:
    """Iluminación de evaluación no vista en entrenamiento."""

    name: str
    lights: Tuple[DirectionalLight, ...]


def ring_lights(count: int, elevation: float = 0.35, intensity: float = 0.9,
                span: float = np.deg2rad(160.0)) -> Tuple[DirectionalLight, ...]:
    """Anillo de ``count`` luces frontales repartidas en ``span`` radianes de azimut."""
    if count < 1:
        raise ContractViolation(f"El anillo necesita al menos una luz, recibido {count}")
    azimuths = (np.arange(count) + 0.5) / count * span - span / 2.0
    cos_e, sin_e = np.cos(elevation), np.sin(elevation)
    return tuple(
        DirectionalLight((float(cos_e * np.sin(a)), float(sin_e), float(cos_e * np.cos(a))), intensity)
        for a in azimuths
    )


def _light_at(azimuth_deg: float, elevation_deg: float, intensity: float) -> DirectionalLight:
    a, e = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    return DirectionalLight((float(np.cos(e) * np.sin(a)), float(np.sin(e)), float(np.cos(e) * np.cos(a))), intensity)


def held_out_scenes() -> List[HeldOutLighting]:
    """Iluminaciones alternativas de evaluación (incluye contraluz y luz lateral dura)."""
    return [
        HeldOutLighting("high_ring", tuple(_light_at(a, 50.0, 0.3) for a in (-45.0, 0.0, 45.0))),
        HeldOutLighting("hard_side", (_light_at(70.0, 10.0, 0.9),)),
        HeldOutLighting("back_lit", (_light_at(160.0, 35.0, 1.0), _light_at(0.0, 0.0, 0.15))),
        HeldOutLighting("top_down", (_light_at(0.0, 65.0, 0.9),)),
    ]


@dataclass(frozen=True)
class FixtureScene:
    """Parámetros de escena; la variación por sujeto sale de la semilla de render."""

    lights: Tuple[DirectionalLight, ...]
    resolution: int = 480
    ambient: float = 0.03
    head_center: Tuple[float, float, float] = (0.0, 0.25, 0.0)
    head_radius: float = 0.42
    torso_depth: float = -0.3
    # centro x, centro y, semiancho, semialto
    torso_box: Tuple[float, float, float, float] = (0.0, -0.75, 0.85, 0.55)
    torso_corner: float = 0.25
    texture: bool = True
    vary_subject: bool = True
    light_spread: float = 0.012
    shadow_samples: int = 5
    specular: bool = False
    specular_strength: float = 1.3
    specular_shininess: float = 60.0
    room_light_direction: Tuple[float, float, float] = (0.35, 0.45, 0.82)
    ring_elevation: float = 0.35
    ring_intensity: float = 0.9
    ring_span: float = float(np.deg2rad(160.0))
    uniform_samples: int = 48

    def __post_init__(self):
        if len(self.lights) < 2:
            raise ContractViolation(f"La escena necesita al menos 2 luces, tiene {len(self.lights)}")
        if self.resolution < 8:
            raise ContractViolation(f"Resolución demasiado pequeña: {self.resolution}")
        if self.ambient < 0 or self.head_radius < 0:
            raise ContractViolation("ambient y head_radius deben ser >= 0")
        if self.shadow_samples < 1 or self.light_spread < 0:
            raise ContractViolation("shadow_samples >= 1 y light_spread >= 0")

    @classmethod
    def ring(cls, count: int = 18, resolution: int = 480, **overrides) -> "FixtureScene":
        """Escena estándar con un anillo de ``count`` flashes."""
        elevation = overrides.get("ring_elevation", cls.ring_elevation)
        intensity = overrides.get("ring_intensity", cls.ring_intensity)
        span = overrides.get("ring_span", cls.ring_span)
        return cls(lights=ring_lights(count, elevation, intensity, span), resolution=resolution, **overrides)


@dataclass
class GroundTruth:
    """Verdad de terreno analítica de una captura."""

    olats: List[np.ndarray]
    uniform: np.ndarray
    albedo: np.ndarray
    foreground: np.ndarray


@dataclass
class _Subject:
    points: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    head: np.ndarray
    torso: np.ndarray
    nose: np.ndarray
    mouth: np.ndarray
    center: np.ndarray
    radius: float

    @property
    def foreground(self) -> np.ndarray:
        return self.head | self.torso


def _in_rounded_rect(x: np.ndarray, y: np.ndarray, scene: FixtureScene) -> np.ndarray:
    cx, cy, hw, hh = scene.torso_box
    rc = min(scene.torso_corner, hw, hh)
    qx = np.maximum(np.abs(x - cx) - (hw - rc), 0.0)
    qy = np.maximum(np.abs(y - cy) - (hh - rc), 0.0)
    inside_box = (np.abs(x - cx) <= hw) & (np.abs(y - cy) <= hh)
    return inside_box & (qx * qx + qy * qy <= rc * rc)


def _in_ellipse(x, y, center, axes) -> np.ndarray:
    return ((x - center[0]) / axes[0]) ** 2 + ((y - center[1]) / axes[1]) ** 2 <= 1.0


def _cone_directions(direction: np.ndarray, spread: float, samples: int) -> List[np.ndarray]:
    """Dirección central más ``samples-1`` direcciones en un cono de apertura ``spread``."""
    if samples <= 1 or spread <= 0:
        return [direction]
    helper = np.array([0.0, 1.0, 0.0]) if abs(direction[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(direction, helper)
    u /= np.linalg.norm(u)
    v = np.cross(direction, u)
    radius = np.tan(spread)
    out = [direction]
    for k in range(samples - 1):
        theta = 2.0 * np.pi * k / (samples - 1)
        d = direction + radius * (np.cos(theta) * u + np.sin(theta) * v)
        out.append(d / np.linalg.norm(d))
    return out


class FixtureRenderer:
    """Renderiza capturas OLAT sintéticas y conjuntos de fixtures en disco."""

    def _build_subject(self, scene: FixtureScene, seed: int) -> _Subject:
        rng = np.random.default_rng(seed)
        res = scene.resolution
        coords = (np.arange(res) + 0.5) / res * 2.0 - 1.0
        x = np.broadcast_to(coords[None, :], (res, res))
        y = np.broadcast_to(-coords[:, None], (res, res))

        center = np.asarray(scene.head_center, dtype=np.float64)
        radius = scene.head_radius
        if scene.vary_subject:
            radius *= 1.0 + rng.uniform(-0.05, 0.05)

        d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
        head = d2 <= radius * radius
        torso = _in_rounded_rect(x, y, scene) & ~head

        z = np.where(head, center[2] + np.sqrt(np.maximum(radius * radius - d2, 0.0)), scene.torso_depth)
        points = np.stack([x, y, z], axis=-1)
        normals = np.zeros_like(points)
        if radius > 0:
            normals[head] = (points[head] - center) / radius
        normals[torso] = (0.0, 0.0, 1.0)

        skin = np.array([0.78, 0.58, 0.47])
        shirt_a, shirt_b = np.array([0.2, 0.35, 0.6]), np.array([0.85, 0.85, 0.8])
        if scene.vary_subject:
            skin = skin * rng.uniform(0.7, 1.1)
            shirt_a = rng.uniform(0.1, 0.5, size=3)
            shirt_b = rng.uniform(0.5, 0.9, size=3)

        albedo = np.zeros((res, res, 3))
        albedo[head] = skin
        stripe = (np.floor((y - scene.torso_box[1]) / 0.12).astype(int) % 2) == 0
        albedo[torso & stripe] = shirt_a
        albedo[torso & ~stripe] = shirt_b

        if scene.texture and head.any():
            # pecas: discos oscuros aleatorios sobre la cabeza
            for _ in range(80):
                rho = radius * np.sqrt(rng.uniform(0.0, 0.85))
                phi = rng.uniform(0.0, 2.0 * np.pi)
                fx, fy = center[0] + rho * np.cos(phi), center[1] + rho * np.sin(phi)
                fr = rng.uniform(0.006, 0.016)
                spot = head & ((x - fx) ** 2 + (y - fy) ** 2 <= fr * fr)
                albedo[spot] *= 0.65

        lo, hi = ALBEDO_RANGE
        albedo = np.where((head | torso)[..., None], np.clip(albedo, lo, hi), 0.0)

        scale = radius / 0.42 if radius > 0 else 0.0
        nose = head & _in_ellipse(x, y, (center[0], center[1] - 0.03 * scale), (0.06 * scale, 0.1 * scale))
        mouth = head & _in_ellipse(x, y, (center[0], center[1] - 0.23 * scale), (0.12 * scale, 0.045 * scale))
        return _Subject(points, normals, albedo, head, torso, nose, mouth, center, radius)

    @staticmethod
    def _visible(subject: _Subject, scene: FixtureScene, d: np.ndarray) -> np.ndarray:
        vis = np.ones(subject.head.shape)
        torso = subject.torso
        if torso.any() and subject.radius > 0:
            rel = subject.points[torso] - subject.center
            b = rel @ d
            c = np.einsum("ij,ij->i", rel, rel) - subject.radius ** 2
            disc = b * b - c
            t_near = -b - np.sqrt(np.maximum(disc, 0.0))
            vis[torso] = np.where((disc >= 0) & (t_near > 1e-9), 0.0, 1.0)

        head = subject.head
        if d[2] < 0 and head.any():
            ph = subject.points[head]
            t = (scene.torso_depth - ph[:, 2]) / d[2]
            hit = (t > 1e-9) & _in_rounded_rect(ph[:, 0] + t * d[0], ph[:, 1] + t * d[1], scene)
            vis[head] = np.where(hit, 0.0, 1.0)
        return vis

    def _shading(self, subject: _Subject, scene: FixtureScene, light: DirectionalLight) -> np.ndarray:
        """I · max(n·L, 0) · visibilidad, con penumbra por muestreo del cono."""
        direction = light.unit()
        n_dot = np.clip(subject.normals @ direction, 0.0, None)
        dirs = _cone_directions(direction, scene.light_spread, scene.shadow_samples)
        vis = sum(self._visible(subject, scene, d) for d in dirs) / len(dirs)
        return light.intensity * n_dot * vis * subject.foreground

    def _room_specular(self, subject: _Subject, scene: FixtureScene) -> np.ndarray:
        if not scene.specular:
            return np.zeros(subject.head.shape)
        lr = DirectionalLight(scene.room_light_direction).unit()
        n_dot = subject.normals @ lr
        reflected = 2.0 * n_dot[..., None] * subject.normals - lr
        lobe = np.clip(reflected @ VIEW_DIRECTION, 0.0, None) ** scene.specular_shininess
        return scene.specular_strength * lobe * subject.head

    def render_olat_capture(self, scene: FixtureScene, seed: int,
                            capture_id: Optional[str] = None) -> Tuple[OlatCapture, GroundTruth]:
        """
        Renderiza una captura OLAT completa.

        Las imágenes de flash incluyen la luz de sala (ambiente y, si se pide,
        el lóbulo especular); la verdad de terreno no la incluye.

        Returns:
            Tupla (OlatCapture, GroundTruth)
        """
        subject = self._build_subject(scene, seed)
        fg = subject.foreground
        if not fg.any():
            raise ContractViolation("La escena no produce primer plano")

        albedo = subject.albedo
        spec = self._room_specular(subject, scene)[..., None]
        room = np.clip(albedo * scene.ambient + spec, 0.0, 1.0) * fg[..., None]

        flashes, olats = [], []
        for light in scene.lights:
            shade = self._shading(subject, scene, light)[..., None]
            olats.append(np.clip(albedo * shade, 0.0, 1.0))
            flash = np.clip(albedo * (scene.ambient + shade) + spec, 0.0, 1.0) * fg[..., None]
            flashes.append(RasterImage(flash))

        dense = ring_lights(scene.uniform_samples, scene.ring_elevation, scene.ring_intensity, scene.ring_span)
        mean_shade = sum(self._shading(subject, scene, light) for light in dense) / len(dense)
        uniform = np.clip(albedo * mean_shade[..., None], 0.0, 1.0)

        as_mask = lambda m: MaskImage(m.astype(np.float64))
        capture = OlatCapture(
            capture_id=capture_id or f"fixture_{seed}",
            flash_images=flashes,
            room_image=RasterImage(room),
            foreground=as_mask(fg),
            nose=as_mask(subject.nose),
            mouth=as_mask(subject.mouth),
            expected_flash_count=len(scene.lights),
        )
        truth = GroundTruth(olats=olats, uniform=uniform, albedo=albedo, foreground=fg[..., None].astype(np.float64))
        logger.debug(f"Captura {capture.capture_id}: {len(flashes)} flashes, {int(fg.sum())} px de primer plano")
        return capture, truth

    def render_lighting(self, scene: FixtureScene, seed: int,
                        lights: Sequence[DirectionalLight]) -> RasterImage:
        """Imagen del sujeto bajo una iluminación arbitraria (sin luz de sala)."""
        subject = self._build_subject(scene, seed)
        shade = sum(self._shading(subject, scene, light) for light in lights)
        return RasterImage(np.clip(subject.albedo * shade[..., None], 0.0, 1.0))

    def write_fixture_set(self, out_dir: Path, count: int, seed: int = 0,
                          scene: Optional[FixtureScene] = None, held_out: bool = True) -> Path:
        """
        Escribe ``count`` capturas, sus imágenes uniformes y un manifiesto compatible con la síntesis.

        Con ``held_out`` añade entradas de evaluación: el sujeto bajo las
        iluminaciones de ``held_out_scenes`` y como objetivo su imagen de-lit.

        Returns:
            Ruta del manifiesto escrito
        """
        from models.data_synthesizer import data_synthesizer

        if count < 1:
            raise ContractViolation(f"count debe ser >= 1, recibido {count}")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        scene = scene or FixtureScene.ring()

        captures, evaluations = [], []
        rendered: Dict[int, OlatCapture] = {}
        for i in range(count):
            capture_id = f"fixture_{i:03d}"
            capture, truth = self.render_olat_capture(scene, seed + i, capture_id)
            rendered[i] = capture
            captures.append(self._write_capture(out_dir, capture, truth))

        if held_out:
            for j, lighting in enumerate(held_out_scenes()):
                i = j % count
                capture = rendered[i]
                entry_dir = out_dir / f"heldout_{lighting.name}"
                image = self.render_lighting(scene, seed + i, lighting.lights)
                olats, room_nospec = data_synthesizer.build_olat_set(capture)
                target = data_synthesizer.build_delit_target(olats, room_nospec)
                fg = capture.foreground.pixels
                write_png(entry_dir / "input.png", image.pixels * fg, bit_depth=16)
                write_png(entry_dir / "target.png", target.pixels * fg, bit_depth=16)
                write_png(entry_dir / "fg.png", fg)
                evaluations.append({
                    "id": f"heldout_{lighting.name}",
                    "capture_id": capture.capture_id,
                    "lighting": lighting.name,
                    "input_path": f"{entry_dir.name}/input.png",
                    "target_path": f"{entry_dir.name}/target.png",
                    "foreground_path": f"{entry_dir.name}/fg.png",
                    "split": "test",
                })

        manifest = {
            "version": 1,
            "generator": "fixtures",
            "seed": seed,
            "resolution": scene.resolution,
            "olat_count": len(scene.lights),
            "captures": captures,
            "evaluations": evaluations,
        }
        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False), encoding="utf-8")
        logger.info(f"Fixtures escritos en {out_dir}: {count} capturas, {len(evaluations)} evaluaciones")
        return manifest_path

    @staticmethod
    def _write_capture(out_dir: Path, capture: OlatCapture, truth: GroundTruth) -> Dict:
        cap_dir = out_dir / capture.capture_id
        flash_paths = []
        for k, flash in enumerate(capture.flash_images):
            name = f"flash_{k:02d}.png"
            write_png(cap_dir / name, flash, bit_depth=16)
            flash_paths.append(f"{capture.capture_id}/{name}")
        write_png(cap_dir / "room.png", capture.room_image, bit_depth=16)
        write_png(cap_dir / "fg.png", capture.foreground)
        write_png(cap_dir / "nose.png", capture.nose)
        write_png(cap_dir / "mouth.png", capture.mouth)
        write_png(cap_dir / "uniform.png", truth.uniform, bit_depth=16)
        return {
            "id": capture.capture_id,
            "flash_paths": flash_paths,
            "room_path": f"{capture.capture_id}/room.png",
            "foreground_path": f"{capture.capture_id}/fg.png",
            "nose_path": f"{capture.capture_id}/nose.png",
            "mouth_path": f"{capture.capture_id}/mouth.png",
            "uniform_path": f"{capture.capture_id}/uniform.png",
            "split": "train",
        }


# Instancia global
fixture_renderer = FixtureRenderer()
