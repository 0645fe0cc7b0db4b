"""Physical solver: PLACE-ON, PLACE-ANYWHERE and PLACE-IN on voxel grids.

Every scene grid lives on the lattice anchored at the surface corner with
layer 0 starting at the surface top (see :func:`physics.lattice_anchor`).
Objects are voxelized with their bounding-box corner on a lattice point, so
an integer offset is an exact rigid translation of the voxel set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .catalog import AssetRecord, Catalog, RetrievalFailure, retrieve
from .geometry import (
    OccupancyGrid,
    Pose,
    SurfaceMask,
    asset_footprint,
    bottom_surface,
    column_lowest,
    hull_margin,
    overlap_counts,
    posed_bounds,
    support_valid,
    voxelize,
)
from .physics import EMPTY, ROOT_OWNER, QuasiStaticBackend, SimulationBackend, lattice_anchor, world_com
from .scene import PlacedObject, SceneState

log = logging.getLogger(__name__)

GROUND_RESOLUTION = 0.03
TABLE_RESOLUTION = 0.01
MESSY_K = 5
DISPLACEMENT_VOXELS = 2
MAX_PHYSICS_TRIES = 25
PLACE_IN_RETRIES = 10


class NoFeasiblePlacement(RuntimeError):
    def __init__(self, object_id: str, target: str, feasible: int = 0):
        super().__init__(f"no supported, collision-free placement for {object_id} on {target}")
        self.object_id = object_id
        self.target = target
        self.feasible = feasible


class PhysicsRejection(RuntimeError):
    def __init__(self, object_id: str, target: str, tried: int, candidates: int):
        super().__init__(f"{object_id} on {target}: all {tried} simulated candidates moved or fell")
        self.object_id = object_id
        self.target = target
        self.tried = tried
        self.candidates = candidates


class ContainerHasNoCavity(RuntimeError):
    def __init__(self, container_id: str):
        super().__init__(f"{container_id} has no open cavity")
        self.container_id = container_id


class BatchPartiallyPlaced(RuntimeError):
    def __init__(self, container_id: str, placed: list, failed: list[str]):
        super().__init__(f"{len(placed)} placed, {len(failed)} failed in {container_id}: {', '.join(failed)}")
        self.container_id = container_id
        self.placed = placed
        self.failed = failed


@dataclass(frozen=True)
class GridParams:
    resolution: float = TABLE_RESOLUTION
    k_bottom: int = 1
    k_search: int = 1
    max_tries: int = MAX_PHYSICS_TRIES

    def __post_init__(self):
        if not self.resolution > 0 or self.k_bottom < 1 or self.k_search < 1:
            raise ValueError(f"bad grid params {self}")

    @classmethod
    def for_scene(cls, ground: bool = False, messy: bool = False) -> "GridParams":
        k = MESSY_K if messy else 1
        return cls(GROUND_RESOLUTION if ground else TABLE_RESOLUTION, k, k)

    @property
    def displacement_tol(self) -> float:
        return DISPLACEMENT_VOXELS * self.resolution


@dataclass(frozen=True)
class PlacementRequest:
    object_id: str
    asset: AssetRecord
    relation: str  # "PLACE-ON" | "PLACE-ANYWHERE"
    target: str = "root"
    params: dict = field(default_factory=dict)
    yaw: float | None = None
    allow_stacking: bool = True

    def __post_init__(self):
        ov = self.params.get("overlap")
        if ov is not None and not 0.0 <= float(ov) <= 1.0:
            raise ValueError(f"overlap must lie in [0, 1], got {ov}")
        st = self.params.get("stability")
        if st is not None and st not in ("stable", "unstable"):
            raise ValueError(f"stability must be 'stable' or 'unstable', got {st!r}")


@dataclass
class PlacementCandidate:
    offset: tuple[int, int, int]
    pose: Pose
    support_ratio: float
    score: float = 0.0
    contact: SurfaceMask | None = None
    supporters: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass
class SceneGrid:
    """Occupancy and owner labels over the surface columns.

    ``owners[n]`` names label ``n + 1``; label 0 is the surface slab.
    """

    grid: OccupancyGrid
    labels: np.ndarray
    owners: list[str]

    def label_of(self, object_id: str) -> int:
        return 0 if object_id == "root" else self.owners.index(object_id) + 1

    def name_of(self, label: int) -> str:
        return "root" if label == ROOT_OWNER else self.owners[label - 1]


def build_scene_grid(scene: SceneState, resolution: float, headroom: float) -> SceneGrid:
    """Voxelize the surface slab and every scene object.

    The x-y window covers exactly the surface columns, so a valid-mode offset
    keeps an object's whole footprint on the surface extent.
    """
    b = scene.bounds
    anchor = np.array(lattice_anchor(b))
    nx = int(math.floor(b.width_x / resolution + 1e-9))
    ny = int(math.floor(b.width_y / resolution + 1e-9))
    top = 0.0
    for o in scene:
        top = max(top, float(o.bounds3d()[1][2]) - b.top_z)
    nz = int(math.ceil((top + headroom) / resolution - 1e-9)) + 3
    labels = np.full((nx, ny, nz), EMPTY, dtype=np.int32)
    labels[:, :, 0] = ROOT_OWNER  # layer 0 of this grid is lattice layer -1
    origin = anchor + np.array([0.0, 0.0, -resolution])
    owners = []
    for n, o in enumerate(scene):
        owners.append(o.id)
        tilt = o.tilt if any(o.tilt) else None
        g = voxelize(o.asset, o.pose, resolution, tilt=tilt, anchor=anchor)
        base = np.rint((g.origin - origin) / resolution).astype(np.int64)
        idx = np.argwhere(g.occupied) + base
        keep = np.all((idx >= 0) & (idx < labels.shape), axis=1)
        idx = idx[keep]
        labels[idx[:, 0], idx[:, 1], idx[:, 2]] = n + 1
    return SceneGrid(OccupancyGrid(origin, resolution, labels != EMPTY), labels, owners)


def object_grid(asset: AssetRecord, yaw: float, resolution: float, anchor) -> tuple[OccupancyGrid, np.ndarray]:
    """Voxelize ``asset`` with its box corner on the lattice point ``anchor``.

    Returns the cropped grid and the reference position used.
    """
    lo, _ = posed_bounds(asset, Pose((0.0, 0.0, 0.0), yaw))
    p0 = np.asarray(anchor, dtype=float) - lo
    g = voxelize(asset, Pose(tuple(p0), yaw), resolution, anchor=anchor).cropped()
    return g, p0


def contact_probe(obj: OccupancyGrid, k_bottom: int) -> np.ndarray:
    """One voxel per bottom column, at that column's lowest occupied layer."""
    bottom = bottom_surface(obj, k_bottom).mask
    low = column_lowest(obj.occupied)
    probe = np.zeros(obj.occupied.shape, dtype=bool)
    ii, jj = np.nonzero(bottom)
    probe[ii, jj, low[ii, jj]] = True
    return probe


def dilate_down(occ: np.ndarray, k_search: int) -> np.ndarray:
    """``out[x, y, z]`` is True iff ``occ`` has a voxel in ``z - k_search .. z - 1``."""
    out = np.zeros_like(occ)
    for d in range(1, k_search + 1):
        out[:, :, d:] |= occ[:, :, :-d]
    return out


def _correlate_counts(big: np.ndarray, small: np.ndarray) -> np.ndarray:
    if not big.any() or not small.any():
        return np.zeros(tuple(s - o + 1 for s, o in zip(big.shape, small.shape)), dtype=np.int64)
    return np.rint(signal.correlate(big.astype(np.float64), small.astype(np.float64), mode="valid")).astype(np.int64)


def placement_candidates(
    scene: np.ndarray,
    obj: np.ndarray,
    *,
    k_bottom: int = 1,
    k_search: int = 1,
    target: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offsets at which ``obj`` is collision-free and touches something below.

    When ``target`` (a boolean grid of the supporting object) is given, every
    contact cell must find the target within ``k_search`` cells below.

    Returns:
        offsets (M, 3), contact counts (M,), bottom-cell count.
    """
    scene = np.asarray(scene, dtype=bool)
    obj = np.asarray(obj, dtype=bool)
    counts = overlap_counts(scene, obj)
    og = OccupancyGrid(np.zeros(3), 1.0, obj)
    n_bottom = bottom_surface(og, k_bottom).count
    if counts is None:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64), n_bottom
    probe = contact_probe(og, k_bottom)
    contact = _correlate_counts(dilate_down(scene, k_search), probe)
    ok = (counts == 0) & (contact > 0)
    if target is not None:
        on_target = _correlate_counts(dilate_down(np.asarray(target, dtype=bool), k_search), probe)
        ok &= on_target == contact
    offsets = np.argwhere(ok)
    return offsets, contact[ok], n_bottom


# ---------------------------------------------------------------------------
# Shared pipeline
# ---------------------------------------------------------------------------


class _Search:
    """Feasible resting offsets of one object over one scene grid."""

    def __init__(self, scene: SceneState, request: PlacementRequest, gp: GridParams, yaw: float, target_only: bool):
        res = gp.resolution
        self.request = request
        self.gp = gp
        self.yaw = yaw
        anchor = lattice_anchor(scene.bounds)
        self.og, self.p0 = object_grid(request.asset, yaw, res, anchor)
        self.sg = build_scene_grid(scene, res, float(self.og.dims[2] * res) + 2 * res)
        target = None
        if target_only:
            target = self.sg.labels == self.sg.label_of(request.target)
        elif not request.allow_stacking:
            target = self.sg.labels == ROOT_OWNER
        self.offsets, self.contacts, self.n_bottom = placement_candidates(
            self.sg.grid.occupied, self.og.occupied, k_bottom=gp.k_bottom, k_search=gp.k_search, target=target
        )
        probe = contact_probe(self.og, gp.k_bottom)
        self.probe = np.argwhere(probe)
        self.dilated = dilate_down(self.sg.grid.occupied, gp.k_search)
        self.root_contacts = None
        if len(self.offsets) and not target_only:
            root = dilate_down(self.sg.labels == ROOT_OWNER, gp.k_search)
            full = _correlate_counts(root, probe)
            self.root_contacts = full[tuple(self.offsets.T)]

    def __len__(self) -> int:
        return len(self.offsets)

    def pose(self, n: int) -> Pose:
        sg, og = self.sg, self.og
        shift = sg.grid.origin + self.offsets[n].astype(float) * sg.grid.resolution - og.origin
        return Pose(tuple(self.p0 + shift), self.yaw)

    def contact_mask(self, n: int) -> SurfaceMask:
        t = self.offsets[n]
        pi, pj, pk = self.probe[:, 0], self.probe[:, 1], self.probe[:, 2]
        hit = self.dilated[pi + t[0], pj + t[1], pk + t[2]]
        mask = np.zeros(self.og.dims[:2], dtype=bool)
        mask[pi[hit], pj[hit]] = True
        origin = self.sg.grid.origin[:2] + t[:2] * self.sg.grid.resolution
        return SurfaceMask(mask, origin, self.sg.grid.resolution)

    def supporters(self, n: int) -> tuple[str, ...]:
        t = self.offsets[n]
        pi, pj, pk = self.probe[:, 0] + t[0], self.probe[:, 1] + t[1], self.probe[:, 2] + t[2]
        found = set()
        for d in range(1, self.gp.k_search + 1):
            k = pk - d
            ok = k >= 0
            found.update(int(v) for v in self.sg.labels[pi[ok], pj[ok], k[ok]])
        found.discard(EMPTY)
        return tuple(sorted(self.sg.name_of(v) for v in found))

    def supporter_scores(self, idx: np.ndarray, prob: np.ndarray) -> np.ndarray:
        """Mean supporting probability over the distinct supporters of each candidate.

        ``prob[label]`` is the probability for owner ``label``. Candidates with a
        zero-probability supporter score -1.
        """
        t = self.offsets[idx]
        pi = self.probe[None, :, 0] + t[:, None, 0]
        pj = self.probe[None, :, 1] + t[:, None, 1]
        pk = self.probe[None, :, 2] + t[:, None, 2]
        found = []
        for d in range(1, self.gp.k_search + 1):
            k = pk - d
            lab = self.sg.labels[pi, pj, np.maximum(k, 0)]
            found.append(np.where(k >= 0, lab, EMPTY))
        g = np.sort(np.concatenate(found, axis=1), axis=1)
        first = np.ones_like(g, dtype=bool)
        first[:, 1:] = g[:, 1:] != g[:, :-1]
        valid = first & (g != EMPTY)
        p = prob[np.maximum(g, 0)]
        blocked = np.any(valid & (p <= 0.0), axis=1)
        mean = (p * valid).sum(axis=1) / np.maximum(valid.sum(axis=1), 1)
        return np.where(blocked, -1.0, mean)

    def candidate(self, n: int) -> PlacementCandidate | None:
        """The candidate at offset ``n``, or None if its COM is unsupported."""
        mask = self.contact_mask(n)
        pose = self.pose(n)
        if not support_valid(mask, _com_xy(self.request.asset, pose)):
            return None
        t = tuple(int(v) for v in self.offsets[n])
        return PlacementCandidate(t, pose, mask.count / self.n_bottom, 0.0, mask, self.supporters(n))


def _yaw(request: PlacementRequest, rng: np.random.Generator) -> float:
    return float(request.yaw) if request.yaw is not None else float(rng.random() * 2.0 * math.pi)


def _com_xy(asset: AssetRecord, pose: Pose) -> np.ndarray:
    return world_com(PlacedObject.nominal("_", asset, pose))[:2]


def _validate(scene, request, cands, gp, backend, target_name, total=None):
    """Simulate candidates in order; the first that stays put wins."""
    tried = 0
    for c in cands:
        if c is None:
            continue
        if tried >= gp.max_tries:
            break
        tried += 1
        trial = scene.copy()
        trial.add(PlacedObject.nominal(request.object_id, request.asset, c.pose))
        result = backend.settle(trial)
        moved = result.displacement.get(request.object_id, math.inf)
        if not result.any_fell and moved <= gp.displacement_tol + 1e-12:
            log.debug("%s accepted after %d simulation(s)", request.object_id, tried)
            return result.poses.get(request.object_id, c.pose), c
    raise PhysicsRejection(request.object_id, target_name, tried, total if total is not None else tried)


def place_on_candidates(scene: SceneState, request: PlacementRequest, gp: GridParams, yaw: float) -> list[PlacementCandidate]:
    """Every supported, collision-free resting candidate on the target."""
    search = _Search(scene, request, gp, yaw, target_only=True)
    return [c for c in (search.candidate(n) for n in range(len(search))) if c is not None]


def score_place_on(cands: list[PlacementCandidate], request: PlacementRequest, target: PlacedObject) -> None:
    """Score in place: closer to the requested offset and support ratio is better.

    The offset term is normalized by the target's footprint extent. With
    ``stability`` set, the distance from the COM to the contact-hull edge is
    added (stable) or subtracted (unstable), normalized by the object's extent.
    """
    p = request.params
    tfp = target.footprint()
    tb = tfp.bounds
    ext = np.array([max(tb[2] - tb[0], 1e-9), max(tb[3] - tb[1], 1e-9)])
    want_xy = None
    if "x_offset" in p or "y_offset" in p:
        want_xy = np.array(tfp.center) + np.array([float(p.get("x_offset", 0.0)), float(p.get("y_offset", 0.0))])
    ov = p.get("overlap")
    stab = p.get("stability")
    obj_ext = float(max(request.asset.extent[:2]))
    for c in cands:
        s = 0.0
        if want_xy is not None:
            fp_c = np.array(asset_footprint(request.asset, c.pose.yaw, c.pose.position[0], c.pose.position[1]).center)
            s -= float(np.linalg.norm((fp_c - want_xy) / ext))
        if ov is not None:
            s -= abs(c.support_ratio - float(ov))
        if stab is not None:
            margin = hull_margin(c.contact.cell_centers(), _com_xy(request.asset, c.pose)) / obj_ext
            s += margin if stab == "stable" else -margin
        c.score = s


def rank(cands: list[PlacementCandidate], rng: np.random.Generator) -> list[PlacementCandidate]:
    """Descending score; exact ties are broken by a seeded permutation."""
    perm = rng.permutation(len(cands))
    order = sorted(range(len(cands)), key=lambda n: (-cands[n].score, perm[n]))
    return [cands[n] for n in order]


def solve_place_on(
    scene: SceneState,
    request: PlacementRequest,
    grid_params: GridParams | None = None,
    backend: SimulationBackend | None = None,
    seed: int = 0,
) -> Pose:
    """Place ``request.object_id`` on top of ``request.target``.

    Raises:
        NoFeasiblePlacement: no supported, collision-free offset on the target.
        PhysicsRejection: every simulated candidate moved more than 2 voxels or
            made something fall.
    """
    pose, _ = place_on(scene, request, grid_params, backend, seed)
    return pose


def place_on(scene, request, grid_params=None, backend=None, seed=0) -> tuple[Pose, PlacementCandidate]:
    """Like :func:`solve_place_on` but also returns the chosen candidate."""
    gp = grid_params or GridParams(resolution=scene.resolution)
    backend = backend or QuasiStaticBackend()
    if request.target == "root" or request.target not in scene:
        raise NoFeasiblePlacement(request.object_id, request.target)
    target = scene[request.target]
    if target.asset.supporting_probability <= 0:
        raise NoFeasiblePlacement(request.object_id, request.target)
    rng = np.random.default_rng([seed, 2])
    cands = place_on_candidates(scene, request, gp, _yaw(request, rng))
    if not cands:
        raise NoFeasiblePlacement(request.object_id, request.target)
    score_place_on(cands, request, target)
    return _validate(scene, request, rank(cands, rng), gp, backend, request.target, len(cands))


def solve_place_anywhere(
    scene: SceneState,
    request: PlacementRequest,
    grid_params: GridParams | None = None,
    backend: SimulationBackend | None = None,
    seed: int = 0,
) -> Pose:
    """Place the object at a random supported, collision-free spot.

    Candidates are scored by the mean supporting probability of what they
    rest on (the surface counts as 1, non-supporting objects exclude the
    spot). The top tenth is visited in seeded random order, then the rest.

    Raises:
        NoFeasiblePlacement, PhysicsRejection
    """
    gp = grid_params or GridParams(resolution=scene.resolution)
    backend = backend or QuasiStaticBackend()
    rng = np.random.default_rng([seed, 3])
    search = _Search(scene, request, gp, _yaw(request, rng), target_only=False)
    if len(search) == 0:
        raise NoFeasiblePlacement(request.object_id, "anywhere")
    # Label 0 is the surface, which always supports.
    prob = np.array([1.0] + [scene[oid].asset.supporting_probability for oid in search.sg.owners])
    scores = np.ones(len(search))
    stacked = np.nonzero(search.root_contacts != search.contacts)[0]
    if len(stacked):
        scores[stacked] = search.supporter_scores(stacked, prob)
    ok = np.nonzero(scores >= 0.0)[0]
    if len(ok) == 0:
        raise NoFeasiblePlacement(request.object_id, "anywhere")
    perm = rng.permutation(len(ok))
    ordered = ok[np.lexsort((perm, -scores[ok]))]
    top = max(1, math.ceil(0.1 * len(ordered)))
    head = ordered[:top][rng.permutation(top)]
    visit = np.concatenate([head, ordered[top:]])
    lazy = (search.candidate(int(n)) for n in visit)
    try:
        pose, _ = _validate(scene, request, lazy, gp, backend, "anywhere", len(visit))
    except PhysicsRejection as exc:
        if exc.tried == 0:
            raise NoFeasiblePlacement(request.object_id, "anywhere", len(visit)) from None
        raise
    return pose


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


def cavity_columns(container: OccupancyGrid) -> tuple[np.ndarray, int]:
    """Columns with a floor whose top stays at least two layers under the rim.

    Returns the x-y mask over the container grid and the rim layer.
    """
    occ = container.occupied
    has = occ.any(axis=2)
    if not has.any():
        return np.zeros(has.shape, dtype=bool), 0
    kk = np.arange(occ.shape[2])
    top = np.where(has, np.max(np.where(occ, kk, -1), axis=2), -1)
    rim = int(top.max())
    return has & (top < rim - 1), rim


def _next_id(category: str, taken: set[str]) -> str:
    n = 0
    while f"{category}_{n}" in taken:
        n += 1
    return f"{category}_{n}"


def solve_place_in(
    scene: SceneState,
    container_id: str,
    batch: list,
    catalog: Catalog,
    backend: SimulationBackend | None = None,
    seed: int = 0,
    grid_params: GridParams | None = None,
    retries: int = PLACE_IN_RETRIES,
) -> list[tuple[str, AssetRecord, Pose]]:
    """Drop a batch of new objects into a container one at a time.

    Each item is dropped from a random lattice-aligned spot over cavity
    columns that are still clear down to the floor, then settled. A drop is
    kept when nothing falls and the object ends inside the container's box
    with its bottom under the rim.

    Raises:
        ContainerHasNoCavity: the container grid has no cavity columns.
        BatchPartiallyPlaced: some items failed after ``retries`` drops; the
            placed ones are attached.
    """
    gp = grid_params or GridParams(resolution=scene.resolution)
    backend = backend or QuasiStaticBackend(resolution=gp.resolution)
    res = gp.resolution
    rng = np.random.default_rng([seed, 4])
    container = scene[container_id]
    anchor = np.asarray(lattice_anchor(scene.bounds))
    cg = voxelize(container.asset, container.pose, res, anchor=anchor)
    cavity, rim = cavity_columns(cg)
    if not cavity.any():
        raise ContainerHasNoCavity(container_id)
    c_lo, c_hi = container.bounds3d()
    rim_z = float(cg.origin[2] + (rim + 1) * res)
    base = np.rint((cg.origin - anchor) / res).astype(np.int64)

    work = scene.copy()
    placed: list[tuple[str, AssetRecord, Pose]] = []
    failed: list[str] = []
    items = []
    for spec in batch:
        category, count = spec[0], int(spec[1])
        items += [category] * count
    for category in items:
        try:
            asset = retrieve(catalog, category)
        except RetrievalFailure:
            failed.append(category)
            continue
        oid = _next_id("_".join(str(category).split()), set(work.objects))
        ok = False
        for _ in range(retries):
            yaw = float(rng.random() * 2.0 * math.pi)
            og, p0 = object_grid(asset, yaw, res, anchor)
            free = cavity & ~_filled_above_floor(work, container_id, cg, res, anchor)
            foot = og.occupied.any(axis=2)
            if foot.shape[0] > free.shape[0] or foot.shape[1] > free.shape[1]:
                continue
            bad = signal.correlate((~free).astype(np.float64), foot.astype(np.float64), mode="valid")
            spots = np.argwhere(np.rint(bad) == 0)
            if len(spots) == 0:
                continue
            i, j = spots[rng.integers(len(spots))]
            # Release the object with its bottom one layer above the rim.
            t = np.array([base[0] + i, base[1] + j, base[2] + rim + 2])
            shift = anchor + t * res - og.origin
            pose = Pose(tuple(p0 + shift), yaw)
            trial = work.copy()
            trial.add(PlacedObject.nominal(oid, asset, pose))
            result = backend.settle(trial)
            if result.any_fell:
                continue
            settled = result.poses[oid]
            lo, hi = posed_bounds(asset, settled)
            inside = (
                lo[0] >= c_lo[0] - 1e-9 and hi[0] <= c_hi[0] + 1e-9
                and lo[1] >= c_lo[1] - 1e-9 and hi[1] <= c_hi[1] + 1e-9
                and lo[2] < rim_z
            )
            if not inside:
                continue
            work.add(PlacedObject.nominal(oid, asset, settled))
            placed.append((oid, asset, settled))
            ok = True
            break
        if not ok:
            failed.append(category)
    if failed:
        raise BatchPartiallyPlaced(container_id, placed, failed)
    return placed


def _filled_above_floor(scene: SceneState, container_id: str, cg: OccupancyGrid, res: float, anchor) -> np.ndarray:
    """Container columns already holding another object's voxels."""
    mask = np.zeros(cg.dims[:2], dtype=bool)
    c_lo = np.rint((cg.origin - anchor) / res).astype(np.int64)
    box = scene[container_id].footprint().bounds
    for o in scene:
        if o.id == container_id:
            continue
        ob = o.footprint().bounds
        if ob[0] > box[2] or ob[2] < box[0] or ob[1] > box[3] or ob[3] < box[1]:
            continue
        g = voxelize(o.asset, o.pose, res, anchor=anchor)
        cols = np.argwhere(g.occupied.any(axis=2)) + np.rint((g.origin[:2] - anchor[:2]) / res).astype(np.int64)
        cols -= c_lo[:2]
        keep = np.all((cols >= 0) & (cols < mask.shape), axis=1)
        mask[cols[keep, 0], cols[keep, 1]] = True
    return mask
