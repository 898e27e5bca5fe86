"""
Punto de entrada principal para la interfaz CLI.
"""
import sys
from pathlib import Path


def main():
    """Función principal del CLI."""
    # backend/ en el path para las importaciones models.*, utils.*, controllers.*
    backend_dir = Path(__file__).resolve().parent / "backend"
    sys.path.insert(0, str(backend_dir))

    from views.cli.main import run

    try:
        run()
    except KeyboardInterrupt:
        print("\n\nInterrumpido por el usuario")
        sys.exit(130)


if __name__ == "__main__":
    main()
