"""Script entry point for the DU-JAD simulator."""
from __future__ import annotations

import sys
from typing import Optional, Sequence

from dotenv import load_dotenv

from dujad.cli import main as cli_main


def configure() -> None:
    """Load environment overrides (worker count, log level) from a local ``.env``."""

    load_dotenv()


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure()
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
