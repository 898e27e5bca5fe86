"""
Interfaz de línea de comandos: fixtures, synth, train, delight, eval, make-mask.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from tabulate import tabulate

from controllers.delight_controller import DelightController
from models.errors import DelightError
from utils.config.delight_config import DelightConfig
from utils.log_config import setup_logging

logger = logging.getLogger(__name__)

# destino argparse → clave de configuración
CONFIG_FLAGS = {
    "seed": "seed",
    "log_level": "log_level",
    "workers": "workers",
    "count": "fixture_captures",
    "fixture_resolution": "fixture_resolution",
    "olat_count": "olat_count",
    "samples_per_capture": "samples_per_capture",
    "epsilon": "epsilon_radius",
    "kappa_low": "kappa_low",
    "kappa_high": "kappa_high",
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "resolution": "resolution",
    "model_depth": "model_depth",
    "extractor": "extractor",
    "flip_prob": "flip_prob",
    "crop_low": "crop_low",
    "crop_high": "crop_high",
    "soft_alternate": "soft_alternate",
    "max_steps": "max_steps",
    "d2_skips": "d2_skips",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="archivo TOML de configuración")
    common.add_argument("--seed", type=int, help="semilla global (también DELIGHT_SEED)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR")
    common.add_argument("--log-file", type=Path, help="archivo de log rotativo")
    common.add_argument("--workers", type=int, help="hilos para síntesis y aumento de datos")

    parser = argparse.ArgumentParser(prog="delight", description="Eliminación de iluminación en retratos")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", parents=[common], help="renderiza capturas OLAT sintéticas")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, help="número de capturas")
    p.add_argument("--fixture-resolution", type=int)
    p.add_argument("--olat-count", type=int)
    p.add_argument("--no-held-out", action="store_true", help="sin escenas de evaluación")

    p = sub.add_parser("synth", parents=[common], help="sintetiza muestras de entrenamiento")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples-per-capture", type=int)
    p.add_argument("--olat-count", type=int)
    p.add_argument("--epsilon", type=int, help="radio del filtro guiado en nariz y boca")
    p.add_argument("--kappa-low", type=int)
    p.add_argument("--kappa-high", type=int)

    p = sub.add_parser("train", parents=[common], help="entrena la red")
    p.add_argument("--samples", "--manifest", dest="samples", type=Path, required=True,
                   help="índice samples.json de synth (o su directorio), no el manifiesto de capturas")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--model-depth", type=int)
    p.add_argument("--extractor", choices=["vgg16", "miniature"])
    p.add_argument("--flip-prob", type=float)
    p.add_argument("--crop-low", type=int)
    p.add_argument("--crop-high", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-d2-skips", dest="d2_skips", action="store_false", default=None,
                   help="D2 recibe solo el cuello de botella")
    p.add_argument("--soft-alternate", action="store_true", default=None,
                   help="alterna pasos de I_src e I_soft en lugar de sumarlos")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--ablate", help="términos a desactivar, p. ej. off,soft,msk")
    group.add_argument("--row", choices=["A", "B", "C", "D"], help="fila de ablación")
    p.add_argument("--resume", type=Path, help="checkpoint desde el que reanudar")
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("delight", parents=[common], help="elimina la iluminación de una imagen")
    p.add_argument("input", type=Path)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="PNG de salida")
    p.add_argument("--fg", type=Path, help="máscara de primer plano")
    p.add_argument("--emit-offset", action="store_true", help="ejecuta también D2")
    p.add_argument("--bit-depth", type=int, choices=[8, 16], default=8)

    p = sub.add_parser("eval", parents=[common], help="métricas sobre un conjunto de evaluación")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split")
    p.add_argument("--lpips", action="store_true", help="añade LPIPS si el paquete está instalado")

    p = sub.add_parser("make-mask", parents=[common], help="calcula la máscara W de un par src/dlt")
    p.add_argument("--src", type=Path, required=True)
    p.add_argument("--dlt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fg", type=Path)
    return parser


def config_flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, dest) for dest, key in CONFIG_FLAGS.items()
            if getattr(args, dest, None) is not None}


def dispatch(controller: DelightController, args: argparse.Namespace) -> Dict[str, Any]:
    if args.command == "fixtures":
        return controller.make_fixtures(args.out, held_out=not args.no_held_out)
    if args.command == "synth":
        return controller.synthesize(args.manifest, args.out)
    if args.command == "train":
        return controller.train(args.samples, args.out, ablate=args.ablate, row=args.row,
                                resume=args.resume, checkpoint_every=args.checkpoint_every)
    if args.command == "delight":
        return controller.delight(args.input, args.ckpt, args.out, args.fg,
                                  emit_offset=args.emit_offset, bit_depth=args.bit_depth)
    if args.command == "eval":
        return controller.evaluate(args.ckpt, args.manifest, args.out, args.split, use_lpips=args.lpips)
    return controller.make_mask(args.src, args.dlt, args.out, args.fg)


def print_summary(command: str, result: Dict[str, Any]) -> None:
    if not result.get("success"):
        print(f"✗ {command}: {result.get('error', 'error desconocido')} (código {result['exit_code']})",
              file=sys.stderr)
        return
    rows = []
    for key, value in result.items():
        if key in ("success", "exit_code"):
            continue
        if isinstance(value, dict):
            rows.extend((f"{key}.{k}", f"{v:.4f}" if isinstance(v, float) else v) for k, v in value.items())
        else:
            rows.append((key, f"{value:.4f}" if isinstance(value, float) else value))
    print(f"✓ {command}")
    print(tabulate(rows, headers=["campo", "valor"], tablefmt="simple"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        config = DelightConfig(config_file=args.config).reload(config_flags(args))
    except DelightError as e:
        print(f"✗ configuración: {e}", file=sys.stderr)
        return e.exit_code
    setup_logging(config["log_level"], args.log_file)

    result = dispatch(DelightController(config, argv), args)
    print_summary(args.command, result)
    return int(result["exit_code"])


def run(argv: Optional[List[str]] = None) -> None:
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
