"""Scene file I/O and top-down SVG rendering."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Mapping

from .catalog import AssetRecord, Catalog, record_from_entry, record_to_entry
from .geometry import Pose
from .scene import Bounds2D, PlacedObject, SceneState

SCENE_VERSION = 1


class SceneFileError(ValueError):
    pass


def program_hash(program_text: str) -> str:
    return hashlib.sha256(program_text.encode("utf-8")).hexdigest()


def scene_to_document(state: SceneState, provenance: Mapping | None = None) -> dict:
    """JSON-ready scene document with the assets it uses embedded."""
    assets = {}
    objects = []
    for o in state:
        assets[o.asset.id] = record_to_entry(o.asset)
        objects.append({
            "id": o.id,
            "asset_id": o.asset.id,
            "position": list(o.pose.position),
            "yaw": o.pose.yaw,
            "mass": o.mass,
            "friction": o.friction,
            "com_shift": list(o.com_shift),
        })
    return {
        "version": SCENE_VERSION,
        "bounds": state.bounds.to_list(),
        "resolution": state.resolution,
        "objects": objects,
        "assets": dict(sorted(assets.items())),
        "provenance": dict(provenance or {}),
    }


def scene_from_document(doc: Mapping, catalog: Catalog | Mapping[str, AssetRecord] | None = None) -> SceneState:
    """Rebuild a scene; embedded assets are used unless ``catalog`` has the id."""
    if doc.get("version") != SCENE_VERSION:
        raise SceneFileError(f"unsupported scene version {doc.get('version')!r}")
    try:
        bounds = Bounds2D(*[float(v) for v in doc["bounds"]])
        state = SceneState(bounds, resolution=float(doc.get("resolution", 0.01)))
        embedded = doc.get("assets", {})
        cache: dict[str, AssetRecord] = {}
        for entry in doc["objects"]:
            aid = entry["asset_id"]
            if aid not in cache:
                if catalog is not None and aid in catalog:
                    cache[aid] = catalog[aid]
                elif aid in embedded:
                    cache[aid] = record_from_entry(embedded[aid])
                else:
                    raise SceneFileError(f"asset {aid!r} is neither embedded nor in the catalog")
            state.add(PlacedObject(
                entry["id"],
                cache[aid],
                Pose(tuple(entry["position"]), float(entry["yaw"])),
                float(entry["mass"]),
                float(entry["friction"]),
                tuple(float(v) for v in entry["com_shift"]),
            ))
    except (KeyError, TypeError) as exc:
        raise SceneFileError(f"malformed scene document: {exc}") from exc
    return state


def dumps_scene(state: SceneState, provenance: Mapping | None = None) -> str:
    return json.dumps(scene_to_document(state, provenance), indent=2, sort_keys=True) + "\n"


def save_scene(path: Path | str, state: SceneState, provenance: Mapping | None = None) -> None:
    Path(path).write_text(dumps_scene(state, provenance), encoding="utf-8")


def load_scene(path: Path | str, catalog=None) -> SceneState:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_document(json.load(fh), catalog)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(state: SceneState, width_px: int = 600) -> str:
    """Top-down orthographic view.

    The back of the surface (-x) is at the top of the image and +y is on the
    left, so the picture reads as seen from above with the front at the
    bottom. Each object gets its footprint, its id and a front arrow.
    """
    b = state.bounds
    margin = 20.0
    scale = (width_px - 2 * margin) / b.width_y
    height_px = b.width_x * scale + 2 * margin

    def to_px(x: float, y: float) -> tuple[float, float]:
        return margin + (b.max_y - y) * scale, margin + (x - b.min_x) * scale

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{_fmt(height_px)}" '
        f'viewBox="0 0 {width_px} {_fmt(height_px)}">',
        f'<rect class="bounds" x="{_fmt(margin)}" y="{_fmt(margin)}" width="{_fmt(b.width_y * scale)}" '
        f'height="{_fmt(b.width_x * scale)}" fill="#f4efe6" stroke="#333" stroke-width="2"/>',
    ]
    for o in state:
        fp = o.footprint()
        pts = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(x, y) for x, y in fp.hull))
        lines.append(f'<polygon class="object" points="{pts}" fill="#9cc3e6" fill-opacity="0.7" stroke="#1f4e79"/>')
        cx, cy = fp.center
        length = 0.4 * min(fp.bounds[2] - fp.bounds[0], fp.bounds[3] - fp.bounds[1])
        x0, y0 = to_px(cx, cy)
        x1, y1 = to_px(cx + length * math.cos(o.pose.yaw), cy + length * math.sin(o.pose.yaw))
        lines.append(
            f'<line class="front" x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" '
            'stroke="#c00000" stroke-width="2"/>'
        )
        lines.append(
            f'<text class="label" x="{_fmt(x0)}" y="{_fmt(y0 - 4)}" font-size="10" '
            f'text-anchor="middle">{_escape(o.id)}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
