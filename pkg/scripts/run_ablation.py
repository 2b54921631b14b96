#!/usr/bin/env python3
"""Five-variant ablation ladder over five seeds; writes runs/ablation.

Expect on the order of 15-20 minutes on a laptop CPU: 25 full training runs
plus cached generation and orbit precomputation.
"""
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from msgda.cli import main  # noqa: E402

CONFIG = str(pathlib.Path(__file__).resolve().parents[1] / "configs" / "ablation.json")

if __name__ == "__main__":
    sys.exit(main(["ablate", "--config", CONFIG]))
