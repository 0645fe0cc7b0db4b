"""Simulation backends.

``QuasiStaticBackend`` is the built-in reference: every object is dropped
straight down to its first contact on a shared voxel lattice, a support graph
is read off the contacts, and a statics pass decides which objects stay up.
Falls are outcomes, never exceptions.

External engines plug in through :class:`SimulationBackend`;
:class:`JsonLinesBackend` talks to one over stdin/stdout.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import Pose, asset_rotation, voxelize
from .scene import Bounds2D, PlacedObject, SceneState

log = logging.getLogger(__name__)

MAX_DISPLACEMENT = 1.0
DEFAULT_STEPS = 400
EMPTY = -1
ROOT_OWNER = 0


@dataclass
class SupportGraph:
    """Edges supporter -> supported; ``"root"`` is the surface."""

    edges: dict[str, set[str]] = field(default_factory=dict)
    fallen: set[str] = field(default_factory=set)

    def add(self, supporter: str, supported: str) -> None:
        self.edges.setdefault(supporter, set()).add(supported)

    def supported_by(self, supporter: str) -> set[str]:
        return set(self.edges.get(supporter, ()))

    def supporters_of(self, obj: str) -> set[str]:
        return {s for s, kids in self.edges.items() if obj in kids}

    def descendants(self, obj: str) -> set[str]:
        out: set[str] = set()
        stack = [obj]
        while stack:
            for kid in self.edges.get(stack.pop(), ()):
                if kid not in out:
                    out.add(kid)
                    stack.append(kid)
        return out

    def is_acyclic(self) -> bool:
        state: dict[str, int] = {}

        def visit(n: str) -> bool:
            state[n] = 1
            for k in self.edges.get(n, ()):
                s = state.get(k, 0)
                if s == 1 or (s == 0 and not visit(k)):
                    return False
            state[n] = 2
            return True

        return all(state.get(n, 0) == 2 or visit(n) for n in list(self.edges))


@dataclass
class SettleResult:
    displacement: dict[str, float]
    fell: dict[str, bool]
    poses: dict[str, Pose] = field(default_factory=dict)
    support: SupportGraph = field(default_factory=SupportGraph)

    @property
    def any_fell(self) -> bool:
        return any(self.fell.values())

    @property
    def max_displacement(self) -> float:
        return max(self.displacement.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "displacement": dict(self.displacement),
            "fell": dict(self.fell),
            "poses": {k: {"position": list(p.position), "yaw": p.yaw} for k, p in self.poses.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "SettleResult":
        disp = {k: min(MAX_DISPLACEMENT, max(0.0, float(v))) for k, v in data["displacement"].items()}
        poses = {k: Pose(tuple(v["position"]), float(v["yaw"])) for k, v in data.get("poses", {}).items()}
        return cls(disp, {k: bool(v) for k, v in data["fell"].items()}, poses)


@runtime_checkable
class SimulationBackend(Protocol):
    def settle(self, state: SceneState, max_steps: int = DEFAULT_STEPS) -> SettleResult: ...


def lattice_anchor(bounds: Bounds2D) -> tuple[float, float, float]:
    """Lattice origin shared by every grid in a scene; layer 0 starts at the surface top."""
    return (bounds.min_x, bounds.min_y, bounds.top_z)


def world_com(obj: PlacedObject) -> np.ndarray:
    tilt = obj.tilt if any(obj.tilt) else None
    rot = asset_rotation(obj.asset, obj.pose.yaw, tilt)
    local = obj.asset.centroid() + np.asarray(obj.com_shift, dtype=float)
    return np.asarray(obj.pose.position) + rot @ local


class VoxelCache:
    """Occupied voxel indices of posed objects on a fixed lattice."""

    def __init__(self, maxsize: int = 4096):
        self.maxsize = maxsize
        self._data: dict = {}

    def cells(self, obj: PlacedObject, resolution: float, anchor) -> np.ndarray:
        key = (id(obj.asset), obj.asset.id, obj.pose.position, obj.pose.yaw, obj.tilt, resolution, tuple(anchor))
        hit = self._data.get(key)
        if hit is not None and hit[0] is obj.asset:
            return hit[1]
        tilt = obj.tilt if any(obj.tilt) else None
        grid = voxelize(obj.asset, obj.pose, resolution, tilt=tilt, anchor=anchor)
        base = np.rint((grid.origin - np.asarray(anchor)) / resolution).astype(np.int64)
        cells = np.argwhere(grid.occupied) + base
        if len(self._data) >= self.maxsize:
            self._data.clear()
        self._data[key] = (obj.asset, cells)
        return cells


class OwnerGrid:
    """Dense integer grid of owners over a window of the scene lattice.

    Owner 0 is the surface slab (layer -1 under the surface extent), owner
    ``n + 1`` is the n-th object, -1 is empty.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray, bounds: Bounds2D, resolution: float):
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)
        self.res = resolution
        dims = tuple(int(v) for v in self.hi - self.lo)
        self.owner = np.full(dims, EMPTY, dtype=np.int32)
        # Slab columns: cell centre within the surface extent.
        ii = self.lo[0] + np.arange(dims[0])
        jj = self.lo[1] + np.arange(dims[1])
        xs = (ii + 0.5) * resolution
        ys = (jj + 0.5) * resolution
        in_x = (xs >= -1e-9) & (xs <= bounds.max_x - bounds.min_x + 1e-9)
        in_y = (ys >= -1e-9) & (ys <= bounds.max_y - bounds.min_y + 1e-9)
        k_slab = -1 - self.lo[2]
        if 0 <= k_slab < dims[2]:
            self.owner[np.ix_(in_x, in_y, [k_slab])] = ROOT_OWNER

    def local(self, cells: np.ndarray) -> np.ndarray:
        return cells - self.lo

    def occupied(self) -> np.ndarray:
        return self.owner != EMPTY


def _drop_shift(occ: np.ndarray, cells: np.ndarray) -> int | None:
    """Largest downward shift (in voxels) before ``cells`` touch ``occ``.

    Negative values lift a penetrating body; None means nothing is below.
    """
    ci, cj, ck = cells[:, 0], cells[:, 1], cells[:, 2]
    if occ[ci, cj, ck].any():
        nz = occ.shape[2]
        for up in range(1, nz + 1):
            k = ck + up
            inside = k < nz
            if not occ[ci[inside], cj[inside], k[inside]].any():
                return -up
        return -nz
    i0, i1 = ci.min(), ci.max() + 1
    j0, j1 = cj.min(), cj.max() + 1
    sub = occ[i0:i1, j0:j1, :]
    kk = np.arange(sub.shape[2])
    top_below = np.maximum.accumulate(np.where(sub, kk, -1), axis=2)
    prev = np.where(ck >= 1, top_below[ci - i0, cj - j0, np.maximum(ck - 1, 0)], -1)
    has = prev >= 0
    if not has.any():
        return None
    return int((ck[has] - 1 - prev[has]).min())


def _plane_tan(points: np.ndarray, heights: np.ndarray) -> float:
    """Slope magnitude of the least-squares plane through ``(x, y, h)``."""
    if len(points) < 3:
        return 0.0
    a = np.column_stack([points, np.ones(len(points))])
    if np.linalg.matrix_rank(a[:, :2] - a[:, :2].mean(axis=0)) < 2:
        return 0.0
    coef, *_ = np.linalg.lstsq(a, heights, rcond=None)
    return float(math.hypot(coef[0], coef[1]))


_CORNERS = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])


def patch_hull_contains(centres: np.ndarray, res: float, q) -> bool:
    """Whether ``q`` lies in the hull of the res x res cells at ``centres``.

    Each contact cell is a full square patch, so the support polygon is the
    hull of the cell squares rather than of their centres.
    """
    # Only the two end cells of each row can be hull vertices.
    order = np.lexsort((centres[:, 1], centres[:, 0]))
    c = centres[order]
    starts = np.r_[True, c[1:, 0] != c[:-1, 0]]
    ends = np.r_[c[1:, 0] != c[:-1, 0], True]
    ext = c[starts | ends]
    corners = (ext[:, None, :] + _CORNERS * res).reshape(-1, 2)
    eq = ConvexHull(corners).equations
    return bool(np.all(eq[:, :2] @ np.asarray(q, dtype=float) + eq[:, 2] <= 1e-9 * res))


class QuasiStaticBackend:
    """Drop-to-contact plus statics.

    Args:
        resolution: lattice spacing; the scene's own resolution when None.
        contact_gap: voxels of clearance still counted as contact.
    """

    def __init__(self, resolution: float | None = None, contact_gap: int = 1):
        self.resolution = resolution
        self.contact_gap = contact_gap
        self.cache = VoxelCache()

    def settle(self, state: SceneState, max_steps: int = DEFAULT_STEPS) -> SettleResult:
        del max_steps  # statics has no time axis
        objs = list(state.objects.values())
        if not objs:
            return SettleResult({}, {})
        res = self.resolution or state.resolution
        anchor = lattice_anchor(state.bounds)
        cells = [self.cache.cells(o, res, anchor) for o in objs]
        lo = np.min([c.min(axis=0) for c in cells], axis=0) - 1
        hi = np.max([c.max(axis=0) for c in cells], axis=0) + 2
        lo[2] = min(lo[2], -1)
        # Headroom for lifting penetrating bodies.
        hi[2] += hi[2] - lo[2]
        grid = OwnerGrid(lo, hi, state.bounds, res)
        owner = grid.owner

        bottoms = [o.bounds3d()[0][2] for o in objs]
        order = sorted(range(len(objs)), key=lambda n: (bottoms[n], objs[n].id))
        shifts: dict[int, int] = {}
        fell = {o.id: False for o in objs}
        graph = SupportGraph()
        contacts: dict[int, dict[int, list]] = {}
        for n in order:
            loc = grid.local(cells[n])
            s = _drop_shift(owner != EMPTY, loc)
            if s is None:
                fell[objs[n].id] = True
                continue
            loc = loc - (0, 0, s)
            if loc[:, 2].max() >= owner.shape[2]:
                fell[objs[n].id] = True
                continue
            shifts[n] = s
            owner[loc[:, 0], loc[:, 1], loc[:, 2]] = n + 1
            contacts[n] = self._contacts(owner, loc, n + 1)
            for sup in contacts[n]:
                graph.add("root" if sup == ROOT_OWNER else objs[sup - 1].id, objs[n].id)

        self._statics(objs, order, contacts, grid, fell, graph, anchor[:2])
        graph.fallen = {k for k, v in fell.items() if v}

        disp, poses = {}, {}
        for n, o in enumerate(objs):
            if fell[o.id]:
                disp[o.id] = MAX_DISPLACEMENT
                poses[o.id] = o.pose
            else:
                d = shifts[n] * res
                disp[o.id] = min(MAX_DISPLACEMENT, abs(d))
                poses[o.id] = o.pose.translated(dz=-d) if shifts[n] else o.pose
        return SettleResult(disp, fell, poses, graph)

    def _contacts(self, owner: np.ndarray, loc: np.ndarray, me: int) -> dict[int, np.ndarray]:
        """Per supporter: (m, 3) rows of (i, j, support_top_k) for touching columns.

        A column keeps its nearest hit; further gaps only look through empty space.
        """
        ci, cj, ck = loc[:, 0], loc[:, 1], loc[:, 2]
        clear = np.ones(len(loc), dtype=bool)
        found = []
        for gap in range(self.contact_gap + 1):
            kb = ck - 1 - gap
            ok = kb >= 0
            below = np.full(len(loc), EMPTY)
            below[ok] = owner[ci[ok], cj[ok], kb[ok]]
            hit = clear & (below != EMPTY) & (below != me)
            idx = np.nonzero(hit)[0]
            found.append(np.stack([below[idx], ci[idx], cj[idx], kb[idx], np.full(len(idx), gap), idx], axis=1))
            clear &= below == EMPTY
        rows = np.concatenate(found)
        if not len(rows):
            return {}
        # First hit per (supporter, column) in (gap, voxel) order.
        rows = rows[np.lexsort((rows[:, 5], rows[:, 4], rows[:, 2], rows[:, 1], rows[:, 0]))]
        first = np.r_[True, np.any(rows[1:, :3] != rows[:-1, :3], axis=1)]
        rows = rows[first]
        out = {}
        for sup in np.unique(rows[:, 0]):
            out[int(sup)] = rows[rows[:, 0] == sup][:, 1:4]
        return out

    def _statics(self, objs, order, contacts, grid: OwnerGrid, fell, graph: SupportGraph, corner) -> None:
        """Top-down load passing with a support-hull and slide check per object."""
        res = grid.res
        corner = np.asarray(corner, dtype=float)

        def centres(cols: np.ndarray) -> np.ndarray:
            return (cols[:, :2] + grid.lo[:2] + 0.5) * res + corner

        received: dict[int, list[tuple[float, np.ndarray]]] = {n: [] for n in range(len(objs))}
        for n in reversed(order):
            o = objs[n]
            if fell[o.id] or n not in contacts:
                continue
            mass = o.mass
            moment = mass * world_com(o)[:2]
            for m, mom in received[n]:
                mass += m
                moment = moment + mom
            cols = np.concatenate(list(contacts[n].values())) if contacts[n] else np.zeros((0, 3), dtype=np.int64)
            ok = len(cols) > 0
            if ok:
                pts = centres(cols)
                ok = patch_hull_contains(pts, res, moment / mass)
            if ok:
                heights = (grid.lo[2] + cols[:, 2] + 1) * res
                ok = _plane_tan(pts, heights) <= o.friction
            if not ok:
                for name in {o.id} | graph.descendants(o.id):
                    fell[name] = True
                continue
            sups = [s for s in contacts[n] if s != ROOT_OWNER]
            if len(contacts[n]) == 1 and sups:
                received[sups[0] - 1].append((mass, moment))
                continue
            # Several supporters share the load by contact count, at their contact centroids.
            total = sum(len(c) for c in contacts[n].values())
            for s in sups:
                share = mass * len(contacts[n][s]) / total
                g = centres(contacts[n][s]).mean(axis=0)
                received[s - 1].append((share, share * g))


def settle_distance(state: SceneState, steps: int = DEFAULT_STEPS, backend: SimulationBackend | None = None) -> float:
    """Mean clamped displacement over all objects; 0 for an empty scene."""
    if len(state) == 0:
        return 0.0
    backend = backend or QuasiStaticBackend()
    result = backend.settle(state, steps)
    return float(np.mean([min(MAX_DISPLACEMENT, result.displacement[o.id]) for o in state]))


class BackendError(RuntimeError):
    pass


class SceneCollapsed(RuntimeError):
    """Objects fell or moved when the assembled scene was settled."""

    def __init__(self, moved: dict[str, float], fell: list[str]):
        names = sorted(set(moved) | set(fell))
        super().__init__(f"scene did not stay put: {', '.join(names)}")
        self.moved = dict(moved)
        self.fell = list(fell)


class JsonLinesBackend:
    """Adapter for an external engine speaking one JSON object per line.

    Each request is ``{"steps": int, "scene": <scene file document>}``; the
    reply is ``{"displacement": {id: m}, "fell": {id: bool}, "poses": {...}}``
    with ``poses`` optional. The process is started lazily and reused.
    """

    def __init__(self, argv: list[str], timeout: float = 60.0):
        self.argv = list(argv)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        return self._proc

    def settle(self, state: SceneState, max_steps: int = DEFAULT_STEPS) -> SettleResult:
        from .scenefile import scene_to_document

        proc = self._ensure()
        request = {"steps": int(max_steps), "scene": scene_to_document(state)}
        try:
            proc.stdin.write(json.dumps(request, sort_keys=True) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except OSError as exc:
            raise BackendError(f"engine pipe failed: {exc}") from exc
        if not line:
            raise BackendError("engine closed its output")
        try:
            return SettleResult.from_json(json.loads(line))
        except (ValueError, KeyError) as exc:
            raise BackendError(f"bad engine reply: {line[:200]!r}") from exc

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None
