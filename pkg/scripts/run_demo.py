#!/usr/bin/env python3
"""End-to-end demo: generate a 2-source suite, precompute orbits, train the
full model, and print target metrics. Everything lands in runs/demo."""
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from msgda.cli import main  # noqa: E402

CONFIG = str(pathlib.Path(__file__).resolve().parents[1] / "configs" / "demo.json")

if __name__ == "__main__":
    for command in ("generate", "orbits", "train", "evaluate"):
        code = main([command, "--config", CONFIG])
        if code != 0:
            sys.exit(code)
