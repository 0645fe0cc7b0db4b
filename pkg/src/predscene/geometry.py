"""Geometric kernel shared by both solvers.

2D convex hulls and convex overlap areas, voxel occupancy grids, grid
cross-correlation, and bottom/contact surface extraction.

Voxel ``(i, j, k)`` of a grid covers ``[origin + res*(i,j,k), origin + res*(i+1,j+1,k+1))``
and is occupied iff its centre lies inside the posed solid (closed test).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .catalog import AssetRecord, Primitive, TriangleMesh

TWO_PI = 2.0 * math.pi
EPS = 1e-9


class DegenerateInput(ValueError):
    """Fewer than three non-collinear points."""


class NonWatertight(ValueError):
    def __init__(self, asset_id: str, fraction: float):
        super().__init__(f"{asset_id}: ray parity inconsistent on {fraction:.1%} of columns")
        self.asset_id = asset_id
        self.fraction = fraction


def wrap_angle(a: float) -> float:
    """Map an angle into [0, 2*pi)."""
    a = math.fmod(a, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


def angle_diff(a: float, b: float) -> float:
    """Smallest absolute difference between two angles."""
    d = math.fmod(abs(a - b), TWO_PI)
    return min(d, TWO_PI - d)


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos) or not math.isfinite(self.yaw):
            raise ValueError(f"non-finite pose {self.position!r}, {self.yaw!r}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def translated(self, dx=0.0, dy=0.0, dz=0.0) -> "Pose":
        x, y, z = self.position
        return Pose((x + dx, y + dy, z + dz), self.yaw)


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_matrix(v) -> np.ndarray:
    """Rodrigues rotation for an axis-angle vector."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    if theta < 1e-15:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)


def asset_rotation(asset: AssetRecord, yaw: float, tilt=None) -> np.ndarray:
    r = rotation_z(yaw + asset.front_yaw)
    if tilt is not None and np.any(np.asarray(tilt) != 0):
        r = axis_angle_matrix(tilt) @ r
    return r


# ---------------------------------------------------------------------------
# 2D polygons
# ---------------------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _monotone_chain(points) -> list[tuple[float, float]]:
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for CCW)."""
    n = len(poly)
    s = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


@dataclass(frozen=True, eq=False)
class Footprint:
    """Convex CCW polygon in the x-y plane."""

    hull: np.ndarray
    _bounds: tuple = field(default=None, repr=False)

    def __post_init__(self):
        hull = np.asarray(self.hull, dtype=float)
        object.__setattr__(self, "hull", hull)
        if self._bounds is None:
            lo, hi = hull.min(axis=0), hull.max(axis=0)
            object.__setattr__(self, "_bounds", (lo[0], lo[1], hi[0], hi[1]))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y)"""
        return self._bounds

    @property
    def area(self) -> float:
        return polygon_area(self.hull.tolist())

    @property
    def center(self) -> tuple[float, float]:
        b = self._bounds
        return 0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])

    def translated(self, dx: float, dy: float) -> "Footprint":
        b = self._bounds
        return Footprint(self.hull + (dx, dy), (b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy))

    def contains(self, point, tol: float = EPS) -> bool:
        return point_in_convex(self.hull, point, tol)

    @classmethod
    def rectangle(cls, min_x, min_y, max_x, max_y) -> "Footprint":
        return cls(np.array([[min_x, min_y], [max_x, min_y], [max_x, max_y], [min_x, max_y]]))


def convex_hull_2d(points) -> Footprint:
    """Minimal convex CCW polygon containing ``points``.

    Raises:
        DegenerateInput: all points collinear or fewer than three distinct.
    """
    hull = _monotone_chain(np.asarray(points, dtype=float).tolist())
    if len(hull) < 3 or abs(polygon_area(hull)) <= 0.0:
        raise DegenerateInput("points are collinear")
    return Footprint(np.array(hull))


def point_in_convex(hull: np.ndarray, point, tol: float = EPS) -> bool:
    """Closed containment test for a CCW convex polygon."""
    px, py = float(point[0]), float(point[1])
    n = len(hull)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        cross = ex * (py - ay) - ey * (px - ax)
        if cross < -tol * max(1.0, math.hypot(ex, ey)):
            return False
    return True


def distance_to_boundary(hull: np.ndarray, point) -> float:
    """Unsigned distance from ``point`` to the polygon's boundary."""
    px, py = float(point[0]), float(point[1])
    best = math.inf
    n = len(hull)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        ll = ex * ex + ey * ey
        t = 0.0 if ll == 0 else max(0.0, min(1.0, ((px - ax) * ex + (py - ay) * ey) / ll))
        best = min(best, math.hypot(px - ax - t * ex, py - ay - t * ey))
    return best


def _clip(subject: list, a, b) -> list:
    out = []
    n = len(subject)
    if n == 0:
        return out
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    prev = subject[-1]
    prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
    for cur in subject:
        cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
        if cur_side >= 0:
            if prev_side < 0:
                t = prev_side / (prev_side - cur_side)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            out.append(cur)
        elif prev_side >= 0:
            t = prev_side / (prev_side - cur_side)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
        prev, prev_side = cur, cur_side
    return out


def overlap_area(a: Footprint, b: Footprint) -> float:
    """Area of the intersection of two convex footprints."""
    ab, bb = a.bounds, b.bounds
    if ab[0] >= bb[2] or bb[0] >= ab[2] or ab[1] >= bb[3] or bb[1] >= ab[3]:
        return 0.0
    poly = [tuple(p) for p in a.hull.tolist()]
    clip = b.hull.tolist()
    n = len(clip)
    for i in range(n):
        poly = _clip(poly, clip[i], clip[(i + 1) % n])
        if len(poly) < 3:
            return 0.0
    return max(0.0, polygon_area(poly))


_OUTLINE_CACHE: dict = {}


def asset_footprint(asset: AssetRecord, yaw: float, x: float = 0.0, y: float = 0.0) -> Footprint:
    """Top-down convex footprint of ``asset`` rotated to ``yaw`` about its origin."""
    key = id(asset)
    local = _OUTLINE_CACHE.get(key)
    if local is None or local[0] is not asset:
        pts = convex_hull_2d(asset.shape.outline()).hull
        local = _OUTLINE_CACHE[key] = (asset, pts)
    theta = yaw + asset.front_yaw
    c, s = math.cos(theta), math.sin(theta)
    pts = local[1]
    rx = pts[:, 0] * c - pts[:, 1] * s + x
    ry = pts[:, 0] * s + pts[:, 1] * c + y
    hull = np.stack([rx, ry], axis=1)
    return Footprint(hull, (float(rx.min()), float(ry.min()), float(rx.max()), float(ry.max())))


# ---------------------------------------------------------------------------
# Voxel grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    origin: np.ndarray
    resolution: float
    occupied: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        occ = np.asarray(self.occupied, dtype=bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise ValueError(f"bad grid shape {occ.shape}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "occupied", occ)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupied.shape

    @property
    def count(self) -> int:
        return int(self.occupied.sum())

    def cell_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def occupied_centers(self) -> np.ndarray:
        idx = np.argwhere(self.occupied)
        return self.origin + (idx + 0.5) * self.resolution

    def cropped(self) -> "OccupancyGrid":
        """Tight crop to the occupied voxels (no margin)."""
        idx = np.argwhere(self.occupied)
        if len(idx) == 0:
            return self
        lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
        sub = self.occupied[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        return OccupancyGrid(self.origin + lo * self.resolution, self.resolution, sub.copy())


@dataclass(frozen=True, eq=False)
class SurfaceMask:
    """2D boolean mask over a grid's x-y cells; ``origin`` is the world x-y of cell (0, 0)'s corner."""

    mask: np.ndarray
    origin: np.ndarray
    resolution: float

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float)[:2])

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def cell_centers(self) -> np.ndarray:
        idx = np.argwhere(self.mask)
        return self.origin + (idx + 0.5) * self.resolution


def _lattice_range(lo: float, hi: float, anchor: float, res: float) -> tuple[int, int]:
    start = math.floor((lo - anchor) / res + 1e-9) - 1
    stop = math.ceil((hi - anchor) / res - 1e-9) + 1
    return start, stop


def posed_bounds(asset: AssetRecord, pose: Pose, tilt=None) -> tuple[np.ndarray, np.ndarray]:
    rot = asset_rotation(asset, pose.yaw, tilt)
    if isinstance(asset.shape, TriangleMesh):
        pts = asset.shape.vertices @ rot.T
    else:
        lo, hi = asset.local_bounds()
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        pts = corners @ rot.T
    t = np.asarray(pose.position)
    return pts.min(axis=0) + t, pts.max(axis=0) + t


def voxelize(
    asset: AssetRecord,
    pose: Pose,
    resolution: float,
    *,
    tilt=None,
    anchor=(0.0, 0.0, 0.0),
) -> OccupancyGrid:
    """Voxelize a posed asset on the lattice ``anchor + resolution * Z^3``.

    The grid tightly bounds the shape plus one empty voxel on every side.
    Primitives use their analytic membership test; meshes use z-ray parity.

    Raises:
        NonWatertight: mesh parity fails on more than 1% of hit columns.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    anchor = np.asarray(anchor, dtype=float)
    wlo, whi = posed_bounds(asset, pose, tilt)
    ranges = [_lattice_range(wlo[a], whi[a], anchor[a], resolution) for a in range(3)]
    origin = anchor + np.array([r[0] for r in ranges]) * resolution
    dims = tuple(r[1] - r[0] for r in ranges)
    rot = asset_rotation(asset, pose.yaw, tilt)
    t = np.asarray(pose.position)
    axes = [origin[a] + (np.arange(dims[a]) + 0.5) * resolution for a in range(3)]
    if isinstance(asset.shape, Primitive):
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        local = (centers - t) @ rot
        occ = asset.shape.contains(local, tol=1e-9 * resolution).reshape(dims)
    else:
        verts = asset.shape.vertices @ rot.T + t
        occ = _mesh_parity(asset.id, verts, asset.shape.faces, axes, resolution)
    return OccupancyGrid(origin, resolution, occ)


def _mesh_parity(asset_id, verts, faces, axes, res) -> np.ndarray:
    xs, ys, zs = axes
    tri = verts[faces]  # (F, 3, 3)
    # A tiny irrational jitter keeps rays off shared edges and vertices.
    jx, jy = 0.3183098861 * 1e-6 * res, 0.1415926535 * 1e-6 * res
    gx, gy = np.meshgrid(xs + jx, ys + jy, indexing="ij")
    px, py = gx.ravel(), gy.ravel()
    occ = np.zeros((len(xs), len(ys), len(zs)), dtype=bool)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    keep = np.abs(det) > 1e-18
    a, b, c, det = a[keep], b[keep], c[keep], det[keep]
    hit_cols = 0
    bad_cols = 0
    chunk = max(1, 2_000_000 // max(1, len(a)))
    for start in range(0, len(px), chunk):
        qx = px[start : start + chunk, None]
        qy = py[start : start + chunk, None]
        l1 = ((b[:, 1] - c[:, 1]) * (qx - c[:, 0]) + (c[:, 0] - b[:, 0]) * (qy - c[:, 1])) / det
        l2 = ((c[:, 1] - a[:, 1]) * (qx - c[:, 0]) + (a[:, 0] - c[:, 0]) * (qy - c[:, 1])) / det
        l3 = 1.0 - l1 - l2
        inside = (l1 >= 0) & (l2 >= 0) & (l3 >= 0)
        zhit = l1 * a[:, 2] + l2 * b[:, 2] + l3 * c[:, 2]
        for row in range(inside.shape[0]):
            hits = np.sort(zhit[row][inside[row]])
            if len(hits) == 0:
                continue
            hit_cols += 1
            if len(hits) % 2:
                bad_cols += 1
                continue
            col = start + row
            i, j = divmod(col, len(ys))
            for z0, z1 in zip(hits[0::2], hits[1::2]):
                occ[i, j] |= (zs >= z0) & (zs <= z1)
    if hit_cols and bad_cols / hit_cols > 0.01:
        raise NonWatertight(asset_id, bad_cols / hit_cols)
    return occ


def feasible_offsets(scene: OccupancyGrid | np.ndarray, obj: OccupancyGrid | np.ndarray) -> np.ndarray:
    """All integer offsets at which ``obj`` fits inside ``scene`` without overlap.

    Offset ``t`` places object voxel ``v`` on scene voxel ``v + t``; the whole
    object grid must stay inside the scene grid. Returns an (M, 3) int array in
    lexicographic order.
    """
    s_occ, o_occ = _occ_pair(scene, obj)
    counts = overlap_counts(s_occ, o_occ)
    if counts is None:
        return np.zeros((0, 3), dtype=np.int64)
    return np.argwhere(counts == 0)


def _occ_pair(scene, obj):
    if isinstance(scene, OccupancyGrid) and isinstance(obj, OccupancyGrid):
        if not math.isclose(scene.resolution, obj.resolution, rel_tol=1e-9):
            raise ValueError("grids must share a resolution")
    s = scene.occupied if isinstance(scene, OccupancyGrid) else np.asarray(scene, dtype=bool)
    o = obj.occupied if isinstance(obj, OccupancyGrid) else np.asarray(obj, dtype=bool)
    return s, o


def overlap_counts(scene: np.ndarray, obj: np.ndarray) -> np.ndarray | None:
    """Valid-mode 3D cross-correlation: number of colliding voxels per offset."""
    if any(o > s for o, s in zip(obj.shape, scene.shape)):
        return None
    if not obj.any():
        return np.zeros(tuple(s - o + 1 for s, o in zip(scene.shape, obj.shape)), dtype=np.int64)
    if not scene.any():
        return np.zeros(tuple(s - o + 1 for s, o in zip(scene.shape, obj.shape)), dtype=np.int64)
    corr = signal.correlate(scene.astype(np.float64), obj.astype(np.float64), mode="valid")
    return np.rint(corr).astype(np.int64)


def bottom_surface(obj: OccupancyGrid, k_bottom: int = 1) -> SurfaceMask:
    """Columns occupied within ``k_bottom`` layers of the object's lowest layer."""
    if k_bottom < 1:
        raise ValueError("k_bottom must be >= 1")
    occ = obj.occupied
    layers = np.nonzero(occ.any(axis=(0, 1)))[0]
    if len(layers) == 0:
        return SurfaceMask(np.zeros(occ.shape[:2], dtype=bool), obj.origin[:2], obj.resolution)
    k0 = layers[0]
    mask = occ[:, :, k0 : k0 + k_bottom].any(axis=2)
    return SurfaceMask(mask, obj.origin[:2], obj.resolution)


def column_lowest(occ: np.ndarray) -> np.ndarray:
    """Index of the lowest occupied voxel per column, -1 where empty."""
    any_col = occ.any(axis=2)
    low = np.argmax(occ, axis=2)
    return np.where(any_col, low, -1)


def contact_surface(
    obj: OccupancyGrid,
    offset,
    scene: OccupancyGrid,
    k_search: int = 1,
    k_bottom: int = 1,
) -> SurfaceMask:
    """Bottom-surface cells that find a scene voxel within ``k_search`` cells below."""
    if k_search < 1:
        raise ValueError("k_search must be >= 1")
    t = np.asarray(offset, dtype=np.int64)
    bottom = bottom_surface(obj, k_bottom).mask
    low = column_lowest(obj.occupied)
    mask = np.zeros_like(bottom)
    s_occ = scene.occupied
    nx, ny, nz = s_occ.shape
    for i, j in np.argwhere(bottom):
        si, sj = i + t[0], j + t[1]
        if not (0 <= si < nx and 0 <= sj < ny):
            continue
        k = low[i, j] + t[2]
        lo = max(0, k - k_search)
        hi = min(nz, k)
        if hi > lo and s_occ[si, sj, lo:hi].any():
            mask[i, j] = True
    origin = scene.origin[:2] + t[:2] * scene.resolution
    return SurfaceMask(mask, origin, scene.resolution)


def support_valid(contact: SurfaceMask, com_xy) -> bool:
    """True iff ``com_xy`` lies in the closed convex hull of contact-cell centres."""
    pts = contact.cell_centers()
    return point_in_point_hull(pts, com_xy, tol=1e-9 * contact.resolution)


def point_in_point_hull(pts: np.ndarray, q, tol: float = 1e-12) -> bool:
    if len(pts) == 0:
        return False
    hull = _monotone_chain(pts.tolist())
    qx, qy = float(q[0]), float(q[1])
    if len(hull) == 1:
        return math.hypot(hull[0][0] - qx, hull[0][1] - qy) <= tol
    if len(hull) == 2 or abs(polygon_area(hull)) <= 0.0:
        (ax, ay), (bx, by) = hull[0], hull[-1]
        ex, ey = bx - ax, by - ay
        ll = ex * ex + ey * ey
        t = max(0.0, min(1.0, ((qx - ax) * ex + (qy - ay) * ey) / ll))
        return math.hypot(qx - ax - t * ex, qy - ay - t * ey) <= tol
    return point_in_convex(np.array(hull), (qx, qy), tol)


def hull_margin(pts: np.ndarray, q) -> float:
    """Distance from ``q`` to the boundary of the hull of ``pts`` (0 if degenerate)."""
    hull = _monotone_chain(pts.tolist())
    if len(hull) < 3 or abs(polygon_area(hull)) <= 0.0:
        return 0.0
    return distance_to_boundary(np.array(hull), q)
