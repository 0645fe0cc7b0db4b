"""Shared fixtures: small primitive assets, catalogs and scenes."""

from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from predscene.catalog import AssetRecord, Catalog, Primitive, load_catalog
from predscene.cli import default_catalog_path
from predscene.geometry import Pose
from predscene.scene import Bounds2D, PlacedObject, SceneState

RESOURCES = Path(default_catalog_path()).parent


def box_asset(asset_id: str, sx: float, sy: float, sz: float, description: str | None = None, **kw) -> AssetRecord:
    return AssetRecord(asset_id, Primitive("box", (sx, sy, sz)), description or asset_id.replace("_", " "), **kw)


def cyl_asset(asset_id: str, r: float, h: float, description: str | None = None, **kw) -> AssetRecord:
    return AssetRecord(asset_id, Primitive("cylinder", (r, h)), description or asset_id.replace("_", " "), **kw)


def on_table(obj_id: str, asset: AssetRecord, x: float, y: float, yaw: float = 0.0, top: float = 0.0) -> PlacedObject:
    z = top - float(asset.local_bounds()[0][2])
    return PlacedObject.nominal(obj_id, asset, Pose((x, y, z), yaw))


def program_text(entries: list) -> str:
    return json.dumps(entries)


@pytest.fixture(scope="session")
def demo_catalog() -> Catalog:
    return load_catalog(default_catalog_path())


@pytest.fixture(scope="session")
def example_program() -> str:
    return (RESOURCES / "example_program.json").read_text(encoding="utf-8")


@pytest.fixture
def table() -> Bounds2D:
    return Bounds2D(-0.5, 0.5, -0.5, 0.5, 0.0)


@pytest.fixture
def book_scene():
    """Flat book (0.2 x 0.3 x 0.04) centred on a 0.6 m square table."""
    book = box_asset("book_0", 0.2, 0.3, 0.04, supporting_probability=0.9, mass_range=(0.5, 0.5))
    scene = SceneState(Bounds2D(-0.3, 0.3, -0.3, 0.3, 0.0))
    scene.add(PlacedObject.nominal("book_0", book, Pose((0.0, 0.0, 0.02), 0.0)))
    return scene


@pytest.fixture
def small_catalog() -> Catalog:
    return Catalog.from_records([
        box_asset("table_lamp_0", 0.1, 0.1, 0.3, "a small table lamp"),
        box_asset("book_0", 0.2, 0.3, 0.04, "a thick hardcover book", supporting_probability=0.9),
        cyl_asset("cup_0", 0.04, 0.1, "an empty ceramic cup", supporting_probability=0.2),
        box_asset("cube_0", 0.05, 0.05, 0.05, "a small wooden cube", supporting_probability=0.9),
        box_asset("plate_0", 0.2, 0.2, 0.02, "a flat square plate", supporting_probability=0.8),
    ])


_ID = re.compile(r"\b[a-z][a-z0-9]*(?:_[a-z0-9]+)*_\d+(?:-group_[a-z0-9_]+)?\b")


def issue_lines(text: str) -> list[tuple[str, tuple[str, ...]]]:
    """(label, object ids) for every bullet line of a rendered report."""
    out = []
    for line in text.splitlines():
        if line.startswith("- "):
            label = line[2:].split(":", 1)[0]
            out.append((label, tuple(_ID.findall(line))))
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
