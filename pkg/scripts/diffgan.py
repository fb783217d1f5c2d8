"""Command-line wrapper for the diffgan_tts package.

Example:
    python scripts/diffgan.py gen-data --out data/toy
    python scripts/diffgan.py train --corpus data/toy --out runs/toy --steps 50 --seed 11
    python scripts/diffgan.py check
"""
from __future__ import annotations

import os
import sys
from typing import Optional

# Ensure repo root is importable when running this script directly
SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(SCRIPT_DIR)
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from diffgan_tts.cli import main as cli_main


def main(argv: Optional[list[str]] = None) -> int:
    return cli_main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
