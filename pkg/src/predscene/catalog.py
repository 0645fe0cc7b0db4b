"""Local asset library: manifest loading, validation and text retrieval.

An asset is either an analytic primitive or a Wavefront OBJ triangle mesh.
Primitives are centred on their bounding-box centre; meshes keep the frame
they were authored in (meters, z-up).
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_RETRIEVAL_THRESHOLD = 0.3
PRIMITIVE_KINDS = ("box", "cylinder", "sphere", "open_box", "open_cylinder")

# Polygon resolution used when a curved footprint is approximated.
CIRCLE_SEGMENTS = 48


class CatalogError(Exception):
    """Base class for manifest problems."""


class MissingMeshFile(CatalogError):
    def __init__(self, asset_id: str, path: Path | str | None = None):
        super().__init__(f"mesh file for {asset_id!r} not found: {path}")
        self.asset_id = asset_id
        self.path = path


class InvalidRange(CatalogError):
    def __init__(self, asset_id: str, field_name: str, value=None):
        super().__init__(f"{asset_id!r}: invalid {field_name}: {value!r}")
        self.asset_id = asset_id
        self.field = field_name


class DuplicateId(CatalogError):
    def __init__(self, asset_id: str):
        super().__init__(f"duplicate asset id {asset_id!r}")
        self.asset_id = asset_id


class RetrievalFailure(LookupError):
    """No catalog description is similar enough to the query."""

    def __init__(self, description: str, best_score: float, best_id: str | None = None, object_id: str | None = None):
        super().__init__(
            f"no asset matches {description!r} (best score {best_score:.3f})"
        )
        self.description = description
        self.best_score = best_score
        self.best_id = best_id
        self.object_id = object_id


@dataclass(frozen=True)
class Primitive:
    """Analytic solid centred on the origin.

    ``dims`` depends on ``kind``:

    * box: (sx, sy, sz)
    * cylinder: (radius, height), axis along z
    * sphere: (radius,)
    * open_box: (sx, sy, sz, wall), a box with floor and walls but no lid
    * open_cylinder: (radius, height, wall), a cup-like tube with a floor
    """

    kind: str
    dims: tuple[float, ...]

    def local_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind in ("box", "open_box"):
            half = np.array(self.dims[:3]) / 2.0
        elif self.kind in ("cylinder", "open_cylinder"):
            r, h = self.dims[0], self.dims[1]
            half = np.array([r, r, h / 2.0])
        else:
            r = self.dims[0]
            half = np.array([r, r, r])
        return -half, half

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Closed point-membership test for local-frame points of shape (M, 3)."""
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        if self.kind == "sphere":
            r = self.dims[0]
            return x * x + y * y + z * z <= r * r + tol
        if self.kind in ("box", "open_box"):
            hx, hy, hz = (d / 2.0 for d in self.dims[:3])
            solid = (np.abs(x) <= hx + tol) & (np.abs(y) <= hy + tol) & (np.abs(z) <= hz + tol)
            if self.kind == "box":
                return solid
            w = self.dims[3]
            hollow = (
                (np.abs(x) < hx - w - tol)
                & (np.abs(y) < hy - w - tol)
                & (z > -hz + w + tol)
            )
            return solid & ~hollow
        r, h = self.dims[0], self.dims[1]
        rho2 = x * x + y * y
        solid = (rho2 <= r * r + tol) & (np.abs(z) <= h / 2.0 + tol)
        if self.kind == "cylinder":
            return solid
        w = self.dims[2]
        hollow = (rho2 < (r - w) ** 2 - tol) & (z > -h / 2.0 + w + tol)
        return solid & ~hollow

    def outline(self) -> np.ndarray:
        """Points whose 2D convex hull is the top-down silhouette."""
        if self.kind in ("box", "open_box"):
            hx, hy = self.dims[0] / 2.0, self.dims[1] / 2.0
            return np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        r = self.dims[0]
        t = np.linspace(0.0, 2.0 * math.pi, CIRCLE_SEGMENTS, endpoint=False)
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)

    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(self.dims))
        if self.kind == "sphere":
            return 4.0 / 3.0 * math.pi * self.dims[0] ** 3
        if self.kind == "cylinder":
            return math.pi * self.dims[0] ** 2 * self.dims[1]
        if self.kind == "open_box":
            sx, sy, sz, w = self.dims
            return sx * sy * sz - (sx - 2 * w) * (sy - 2 * w) * (sz - w)
        r, h, w = self.dims
        return math.pi * (r * r * h - (r - w) ** 2 * (h - w))

    def centroid(self) -> np.ndarray:
        """Centre of mass of the uniform solid in the local frame."""
        if self.kind == "open_box":
            sx, sy, sz, w = self.dims
            full, hole = sx * sy * sz, (sx - 2 * w) * (sy - 2 * w) * (sz - w)
        elif self.kind == "open_cylinder":
            r, sz, w = self.dims
            full, hole = math.pi * r * r * sz, math.pi * (r - w) ** 2 * (sz - w)
        else:
            return np.zeros(3)
        # The hollow spans z in [-sz/2 + w, sz/2], centred at w/2.
        return np.array([0.0, 0.0, -hole * (w / 2.0) / (full - hole)])

    def to_json(self) -> dict:
        if self.kind in ("box", "open_box"):
            out = {"type": self.kind, "size": list(self.dims[:3])}
            if self.kind == "open_box":
                out["wall"] = self.dims[3]
            return out
        if self.kind == "sphere":
            return {"type": "sphere", "radius": self.dims[0]}
        out = {"type": self.kind, "radius": self.dims[0], "height": self.dims[1]}
        if self.kind == "open_cylinder":
            out["wall"] = self.dims[2]
        return out


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    source: str = ""

    def local_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def outline(self) -> np.ndarray:
        return self.vertices[:, :2]

    def centroid(self) -> np.ndarray:
        """Volume centroid from signed tetrahedra; vertex mean if the volume vanishes."""
        tri = self.vertices[self.faces]
        vol = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0
        total = vol.sum()
        if abs(total) < 1e-15:
            return self.vertices.mean(axis=0)
        return (vol[:, None] * tri.sum(axis=1) / 4.0).sum(axis=0) / total


def load_obj(path: Path | str) -> TriangleMesh:
    """Read vertices and faces from an OBJ file, fan-triangulating polygons."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise ValueError(f"{path}: no geometry")
    return TriangleMesh(np.asarray(verts, dtype=float), np.asarray(faces, dtype=np.int64), str(path))


Shape = Primitive | TriangleMesh


@dataclass(frozen=True, eq=False)
class AssetRecord:
    """One annotated asset.

    ``front_yaw`` is the rotation that turns the raw shape so it faces +x.
    A placed asset with yaw ``psi`` is therefore rotated by ``psi + front_yaw``.
    """

    id: str
    shape: Shape
    description: str
    front_yaw: float = 0.0
    supporting_probability: float = 0.5
    mass_range: tuple[float, float] = (0.1, 0.1)
    friction_range: tuple[float, float] = (0.5, 0.5)
    com_shift_range: tuple[tuple[float, float], ...] = ((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))

    @property
    def category(self) -> str:
        return self.id.rsplit("_", 1)[0] if "_" in self.id else self.id

    def local_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.shape.local_bounds()

    @property
    def extent(self) -> np.ndarray:
        lo, hi = self.local_bounds()
        return hi - lo

    @property
    def nominal_mass(self) -> float:
        return 0.5 * (self.mass_range[0] + self.mass_range[1])

    @property
    def nominal_friction(self) -> float:
        return 0.5 * (self.friction_range[0] + self.friction_range[1])

    def nominal_com_shift(self) -> np.ndarray:
        out = np.zeros(3)
        for axis, (lo, hi) in enumerate(self.com_shift_range):
            if not lo <= 0.0 <= hi:
                out[axis] = 0.5 * (lo + hi)
        return out

    def centroid(self) -> np.ndarray:
        return self.shape.centroid()

    def com_shift_in_range(self, shift) -> bool:
        return all(lo - 1e-12 <= s <= hi + 1e-12 for s, (lo, hi) in zip(shift, self.com_shift_range))


@dataclass(frozen=True)
class Catalog:
    records: Mapping[str, AssetRecord]
    manifest_path: Path | None = None
    _tokens: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, asset_id: str) -> AssetRecord:
        return self.records[asset_id]

    def __contains__(self, asset_id: str) -> bool:
        return asset_id in self.records

    def __iter__(self):
        return iter(self.records.values())

    @classmethod
    def from_records(cls, records, manifest_path=None) -> "Catalog":
        out: dict[str, AssetRecord] = {}
        for rec in records:
            if rec.id in out:
                raise DuplicateId(rec.id)
            _validate(rec)
            out[rec.id] = rec
        return cls(out, manifest_path)


def _pair(asset_id: str, name: str, value) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise InvalidRange(asset_id, name, value) from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidRange(asset_id, name, value)
    return lo, hi


def _validate(rec: AssetRecord) -> None:
    if rec.mass_range[0] <= 0 or rec.mass_range[0] > rec.mass_range[1]:
        raise InvalidRange(rec.id, "mass_range", rec.mass_range)
    if rec.friction_range[0] < 0 or rec.friction_range[0] > rec.friction_range[1]:
        raise InvalidRange(rec.id, "friction_range", rec.friction_range)
    if len(rec.com_shift_range) != 3 or any(lo > hi for lo, hi in rec.com_shift_range):
        raise InvalidRange(rec.id, "com_shift_range", rec.com_shift_range)
    if not 0.0 <= rec.supporting_probability <= 1.0:
        raise InvalidRange(rec.id, "supporting_probability", rec.supporting_probability)
    if isinstance(rec.shape, Primitive):
        if rec.shape.kind not in PRIMITIVE_KINDS or any(d <= 0 for d in rec.shape.dims):
            raise InvalidRange(rec.id, "shape", rec.shape)


def parse_primitive(asset_id: str, spec: Mapping) -> Primitive:
    kind = spec.get("type")
    try:
        if kind in ("box", "open_box"):
            dims = tuple(float(v) for v in spec["size"])
            if len(dims) != 3:
                raise ValueError
            if kind == "open_box":
                dims = dims + (float(spec["wall"]),)
        elif kind in ("cylinder", "open_cylinder"):
            dims = (float(spec["radius"]), float(spec["height"]))
            if kind == "open_cylinder":
                dims = dims + (float(spec["wall"]),)
        elif kind == "sphere":
            dims = (float(spec["radius"]),)
        else:
            raise ValueError
    except (KeyError, TypeError, ValueError):
        raise InvalidRange(asset_id, "shape", dict(spec)) from None
    return Primitive(kind, dims)


def record_from_entry(entry: Mapping, base_dir: Path | None = None) -> AssetRecord:
    asset_id = str(entry["id"])
    shape_spec = entry.get("shape", {})
    if "primitive" in shape_spec:
        shape: Shape = parse_primitive(asset_id, shape_spec["primitive"])
    elif "mesh" in shape_spec:
        path = Path(shape_spec["mesh"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise MissingMeshFile(asset_id, path)
        shape = load_obj(path)
    else:
        raise InvalidRange(asset_id, "shape", shape_spec)
    com = entry.get("com_shift_range", [[0, 0], [0, 0], [0, 0]])
    if not isinstance(com, (list, tuple)) or len(com) != 3:
        raise InvalidRange(asset_id, "com_shift_range", com)
    supp = entry.get("supporting_probability", 0.5)
    try:
        supp = float(supp)
    except (TypeError, ValueError):
        raise InvalidRange(asset_id, "supporting_probability", supp) from None
    rec = AssetRecord(
        id=asset_id,
        shape=shape,
        description=str(entry.get("description", "")),
        front_yaw=float(entry.get("front_yaw", 0.0)),
        supporting_probability=supp,
        mass_range=_pair(asset_id, "mass_range", entry.get("mass_range", [0.1, 0.1])),
        friction_range=_pair(asset_id, "friction_range", entry.get("friction_range", [0.5, 0.5])),
        com_shift_range=tuple(_pair(asset_id, "com_shift_range", c) for c in com),
    )
    _validate(rec)
    return rec


def load_catalog(manifest_path: Path | str) -> Catalog:
    """Load and validate a JSON asset manifest.

    Mesh paths are resolved relative to the manifest's directory.

    Raises:
        MissingMeshFile, InvalidRange, DuplicateId
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    entries = data["assets"] if isinstance(data, dict) else data
    records: dict[str, AssetRecord] = {}
    for entry in entries:
        rec = record_from_entry(entry, manifest_path.parent)
        if rec.id in records:
            raise DuplicateId(rec.id)
        records[rec.id] = rec
    logger.debug("loaded %d assets from %s", len(records), manifest_path)
    return Catalog(records, manifest_path)


def record_to_entry(rec: AssetRecord) -> dict:
    if isinstance(rec.shape, Primitive):
        shape = {"primitive": rec.shape.to_json()}
    else:
        shape = {"mesh": rec.shape.source}
    return {
        "id": rec.id,
        "description": rec.description,
        "front_yaw": rec.front_yaw,
        "supporting_probability": rec.supporting_probability,
        "mass_range": list(rec.mass_range),
        "friction_range": list(rec.friction_range),
        "com_shift_range": [list(c) for c in rec.com_shift_range],
        "shape": shape,
    }


_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> Counter:
    return Counter(_WORD.findall(text.lower()))


def similarity(a: str | Counter, b: str | Counter) -> float:
    """Cosine similarity of lowercase word-count vectors."""
    ca = tokenize(a) if isinstance(a, str) else a
    cb = tokenize(b) if isinstance(b, str) else b
    dot = sum(n * cb[w] for w, n in ca.items())
    if dot == 0:
        return 0.0
    na = math.sqrt(sum(n * n for n in ca.values()))
    nb = math.sqrt(sum(n * n for n in cb.values()))
    return dot / (na * nb)


def retrieve(
    catalog: Catalog,
    description: str,
    threshold: float = DEFAULT_RETRIEVAL_THRESHOLD,
    scorer=None,
) -> AssetRecord:
    """Return the asset whose description best matches ``description``.

    ``scorer(query, candidate_description) -> float`` replaces the built-in
    token cosine, e.g. with an embedding service. Ties go to the smallest id.

    Raises:
        ValueError: empty description.
        RetrievalFailure: best score below ``threshold``.
    """
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    query = tokenize(description)
    best: tuple[float, str] | None = None
    for asset_id in sorted(catalog.records):
        rec = catalog.records[asset_id]
        if scorer is not None:
            score = float(scorer(description, rec.description))
        else:
            toks = catalog._tokens.get(asset_id)
            if toks is None:
                toks = catalog._tokens[asset_id] = tokenize(rec.description)
            score = similarity(query, toks)
        if best is None or score > best[0]:
            best = (score, asset_id)
    if best is None or best[0] < threshold:
        raise RetrievalFailure(description, best[0] if best else 0.0, best[1] if best else None)
    return catalog.records[best[1]]
