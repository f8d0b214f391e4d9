"""Bundled example systems shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .grid_model import MicrogridSystem, load_system

EXAMPLES = ("island_small", "island_large")


def example_path(name: str) -> Path:
    """Filesystem path of a bundled example system document."""
    if name not in EXAMPLES:
        raise KeyError(f"unknown example {name!r}, available: {', '.join(EXAMPLES)}")
    with resources.as_file(
            resources.files("mgsched").joinpath(f"data/{name}.json")) as p:
        return Path(p)


def example_system(name: str) -> MicrogridSystem:
    return load_system(example_path(name))
