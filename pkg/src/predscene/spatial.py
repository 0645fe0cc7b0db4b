"""Spatial solver: forward evaluation of spatial predicates and coordinate descent.

Forward evaluation runs the statements in program order, editing axis-aligned
boxes of yaw-rotated footprints. The free numeric parameters (distances,
base coordinates and random rotations) are then tuned one at a time by
sampling, against a penalty made of pairwise footprint overlap and boundary
excess.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .catalog import AssetRecord, Catalog, retrieve
from .dsl import ROOT, PredicateProgram, Relation, Statement, physical_subjects
from .geometry import Footprint, Pose, asset_footprint, overlap_area
from .scene import Bounds2D, SceneState

log = logging.getLogger(__name__)

R = Relation

EPSILON = 1e-4
ITERATIONS = 10
SAMPLES = 40
ANGLE_HALF_RANGE = math.radians(10.0)
# Footprint overlaps smaller than this are reported as touching, not penetrating.
VIOLATION_TOL = 1e-9


class UnsolvedObject(RuntimeError):
    """A coordinate was read before any statement determined it."""

    def __init__(self, object_id: str, axis: str = "position", statement: int | None = None):
        where = "" if statement is None else f" (statement {statement})"
        super().__init__(f"{object_id}: {axis} is undetermined when read{where}")
        self.object_id = object_id
        self.axis = axis
        self.statement = statement


@dataclass(frozen=True)
class Violation:
    kind: str  # "penetration" | "out_of_bounds"
    objects: tuple[str, ...]
    magnitude: float

    def to_json(self) -> dict:
        return {"kind": self.kind, "objects": list(self.objects), "magnitude": self.magnitude}


@dataclass(frozen=True)
class ParamEntry:
    statement: int
    key: str
    value: float
    kind: str  # "distance" | "angle" | "coordinate"


@dataclass
class ParamVector:
    entries: list[ParamEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self) -> dict[tuple[int, str], float]:
        return {(e.statement, e.key): e.value for e in self.entries}

    def with_value(self, i: int, value: float) -> "ParamVector":
        entries = list(self.entries)
        e = entries[i]
        entries[i] = ParamEntry(e.statement, e.key, float(value), e.kind)
        return ParamVector(entries)

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries], dtype=float)


@dataclass
class StepRecord:
    iteration: int
    param: int
    before: float
    after: float


@dataclass
class SolvedLayout:
    poses: dict[str, Pose]
    penalty: float
    params: ParamVector
    assets: dict[str, AssetRecord]
    iterations: int = 0
    history: list[StepRecord] = field(default_factory=list)


class SolverFailure(RuntimeError):
    """No parameter assignment reached the acceptance threshold."""

    def __init__(self, best_layout: SolvedLayout, violations: list[Violation]):
        super().__init__(
            f"spatial solve failed: penalty {best_layout.penalty:.6g} with {len(violations)} violation(s)"
        )
        self.best_layout = best_layout
        self.violations = violations

    @property
    def history(self) -> list[StepRecord]:
        return self.best_layout.history


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------


class _Body:
    """Mutable pose of one object during forward evaluation."""

    __slots__ = ("id", "asset", "x", "y", "z", "yaw", "xs", "ys", "_fp")

    def __init__(self, object_id, asset, x=0.0, y=0.0, z=0.0, yaw=0.0, xs=False, ys=False):
        self.id = object_id
        self.asset = asset
        self.x, self.y, self.z, self.yaw = x, y, z, yaw
        self.xs, self.ys = xs, ys
        self._fp = None

    def footprint(self) -> Footprint:
        if self._fp is None:
            self._fp = asset_footprint(self.asset, self.yaw, self.x, self.y)
        return self._fp

    def bbox(self):
        return self.footprint().bounds

    def translate(self, dx: float, dy: float) -> None:
        self.x += dx
        self.y += dy
        if self._fp is not None:
            self._fp = self._fp.translated(dx, dy)

    def set_yaw(self, yaw: float) -> None:
        cx, cy = self.footprint().center
        self.yaw = yaw
        self._fp = None
        nx, ny = self.footprint().center
        self.translate(cx - nx, cy - ny)

    def rotate_about(self, px: float, py: float, d: float) -> None:
        c, s = math.cos(d), math.sin(d)
        rx, ry = self.x - px, self.y - py
        self.x = px + c * rx - s * ry
        self.y = py + s * rx + c * ry
        self.yaw += d
        self._fp = None

    def clone(self, new_id: str) -> "_Body":
        return _Body(new_id, self.asset, self.x, self.y, self.z, self.yaw, False, False)


class _Group:
    def __init__(self, name: str, members: list[_Body], anchor: _Body):
        self.id = name
        self.members = members
        self.anchor = anchor

    @property
    def xs(self) -> bool:
        return all(m.xs for m in self.members)

    @property
    def ys(self) -> bool:
        return all(m.ys for m in self.members)

    @property
    def yaw(self) -> float:
        return self.anchor.yaw

    def bbox(self):
        boxes = [m.bbox() for m in self.members]
        return (
            min(b[0] for b in boxes),
            min(b[1] for b in boxes),
            max(b[2] for b in boxes),
            max(b[3] for b in boxes),
        )

    def translate(self, dx: float, dy: float) -> None:
        for m in self.members:
            m.translate(dx, dy)

    def set_yaw(self, yaw: float) -> None:
        px, py = self.anchor.footprint().center
        d = yaw - self.anchor.yaw
        for m in self.members:
            m.rotate_about(px, py, d)

    def mark(self, x: bool, y: bool) -> None:
        for m in self.members:
            m.xs |= x
            m.ys |= y


class _Root:
    id = ROOT
    xs = ys = True
    yaw = 0.0

    def __init__(self, bounds: Bounds2D):
        self._box = (bounds.min_x, bounds.min_y, bounds.max_x, bounds.max_y)

    def bbox(self):
        return self._box


def _center(box) -> tuple[float, float]:
    return 0.5 * (box[0] + box[2]), 0.5 * (box[1] + box[3])


def _mark(ent, x: bool = False, y: bool = False) -> None:
    if isinstance(ent, _Group):
        ent.mark(x, y)
    else:
        ent.xs |= x
        ent.ys |= y


def _overlap_xy(a, b) -> float:
    ox = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    oy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    return ox + oy


def resolve_assets(program: PredicateProgram, catalog, threshold: float = 0.3) -> dict[str, AssetRecord]:
    """Map each described object id to an asset.

    ``catalog`` may already be such a mapping, in which case it is returned
    as a dict unchanged.
    """
    if not isinstance(catalog, Catalog):
        return dict(catalog)
    return {d.object_id: retrieve(catalog, d.text, threshold) for d in program.descriptions}


def spatial_statements(program: PredicateProgram) -> list[Statement]:
    phys = physical_subjects(program)
    return [st for st in program.statements if not st.is_batch and st.subject not in phys]


def initial_params(program: PredicateProgram, seed: int) -> ParamVector:
    """Numeric parameters in statement order; unset distances start at 0.

    Random rotations are drawn here once, then optimized like any angle.
    """
    rng = np.random.default_rng([seed, 0])
    entries = []
    for st in spatial_statements(program):
        rel = st.rel
        if rel in (R.LEFT_OF, R.RIGHT_OF, R.FRONT_OF, R.BACK_OF):
            entries.append(ParamEntry(st.index, "distance", float(st.params.get("distance", 0.0)), "distance"))
        elif rel is R.PLACE_ON_BASE:
            for key in ("x", "y"):
                if key in st.params:
                    entries.append(ParamEntry(st.index, key, float(st.params[key]), "coordinate"))
        elif rel is R.RANDOM_ROT:
            entries.append(ParamEntry(st.index, "angle", float(rng.random() * 2.0 * math.pi), "angle"))
    return ParamVector(entries)


def _existing_bodies(existing: SceneState | None) -> dict[str, _Body]:
    bodies = {}
    if existing is None:
        return bodies
    for o in existing:
        x, y, z = o.pose.position
        bodies[o.id] = _Body(o.id, o.asset, x, y, z, o.pose.yaw, True, True)
    return bodies


class _Evaluator:
    def __init__(self, program, assets, bounds, existing):
        self.program = program
        self.assets = assets
        self.bounds = bounds
        self.existing = existing
        self.statements = spatial_statements(program)
        phys = physical_subjects(program)
        self.spatial_ids = [d.object_id for d in program.descriptions if d.object_id not in phys]

    def run(self, values: Mapping[tuple[int, str], float]) -> tuple[dict[str, _Body], list[str]]:
        bounds = self.bounds
        bodies: dict[str, _Body] = _existing_bodies(self.existing)
        for oid in self.spatial_ids:
            asset = self.assets[oid]
            z = bounds.top_z - float(asset.local_bounds()[0][2])
            bodies[oid] = _Body(oid, asset, z=z)
        groups: dict[str, _Group] = {}
        order = list(self.spatial_ids)
        root = _Root(bounds)

        def ent(name, st):
            if name == ROOT:
                return root
            if name in groups:
                return groups[name]
            if name in bodies:
                return bodies[name]
            raise UnsolvedObject(str(name), "existence", st.index)

        def read(e, st, x=True, y=True):
            if (x and not e.xs) or (y and not e.ys):
                axis = "x" if x and not e.xs else "y"
                raise UnsolvedObject(e.id, axis, st.index)
            return e.bbox()

        for st in self.statements:
            rel = st.rel
            if rel is R.GROUP:
                members = [bodies[m] for m in st.reference]
                groups[st.subject] = _Group(st.subject, members, bodies[st.params["anchor"]])
                continue
            if rel is R.COPY_GROUP:
                src = groups[st.reference]
                clones = []
                for m in src.members:
                    new_id = f"{m.id}-{st.subject}"
                    c = m.clone(new_id)
                    bodies[new_id] = c
                    order.append(new_id)
                    clones.append(c)
                anchor = clones[src.members.index(src.anchor)]
                groups[st.subject] = _Group(st.subject, clones, anchor)
                continue
            a = ent(st.subject, st)
            p = st.params
            if rel in (R.LEFT_OF, R.RIGHT_OF, R.FRONT_OF, R.BACK_OF):
                d = values.get((st.index, "distance"), float(p.get("distance", 0.0)))
                b = read(ent(st.reference, st), st, x=rel in (R.FRONT_OF, R.BACK_OF), y=rel in (R.LEFT_OF, R.RIGHT_OF))
                box = a.bbox()
                if rel is R.LEFT_OF:
                    a.translate(0.0, b[3] + d - box[1])
                elif rel is R.RIGHT_OF:
                    a.translate(0.0, b[1] - d - box[3])
                elif rel is R.FRONT_OF:
                    a.translate(b[2] + d - box[0], 0.0)
                else:
                    a.translate(b[0] - d - box[2], 0.0)
                _mark(a, x=rel in (R.FRONT_OF, R.BACK_OF), y=rel in (R.LEFT_OF, R.RIGHT_OF))
            elif rel in (R.ALIGN_CENTER_LR, R.ALIGN_LEFT, R.ALIGN_RIGHT):
                b = read(ent(st.reference, st), st, x=False, y=True)
                box = a.bbox()
                if rel is R.ALIGN_CENTER_LR:
                    dy = _center(b)[1] - _center(box)[1]
                elif rel is R.ALIGN_LEFT:
                    dy = b[3] - box[3]
                else:
                    dy = b[1] - box[1]
                a.translate(0.0, dy)
                _mark(a, y=True)
            elif rel in (R.ALIGN_CENTER_FB, R.ALIGN_FRONT, R.ALIGN_BACK):
                b = read(ent(st.reference, st), st, x=True, y=False)
                box = a.bbox()
                if rel is R.ALIGN_CENTER_FB:
                    dx = _center(b)[0] - _center(box)[0]
                elif rel is R.ALIGN_FRONT:
                    dx = b[2] - box[2]
                else:
                    dx = b[0] - box[0]
                a.translate(dx, 0.0)
                _mark(a, x=True)
            elif rel is R.SYMMETRY_ALONG:
                bc = _center(read(ent(st.reference, st), st))
                cc = _center(read(ent(p["C"], st), st))
                ac = _center(a.bbox())
                a.translate(2 * cc[0] - bc[0] - ac[0], 2 * cc[1] - bc[1] - ac[1])
                _mark(a, x=True, y=True)
            elif rel is R.FACING_TO:
                bc = _center(read(ent(st.reference, st), st))
                ac = _center(a.bbox())
                a.set_yaw(math.atan2(bc[1] - ac[1], bc[0] - ac[0]))
            elif rel is R.FACING_SAME_AS:
                a.set_yaw(ent(st.reference, st).yaw)
            elif rel is R.FACING_OPPOSITE_TO:
                a.set_yaw(ent(st.reference, st).yaw + math.pi)
            elif rel in _FIXED_YAW:
                a.set_yaw(_FIXED_YAW[rel])
            elif rel is R.RANDOM_ROT:
                a.set_yaw(values[(st.index, "angle")])
            elif rel in (R.ORIENT_BY_RELATIVE_SIDE, R.SIDE_SCALE_ALIGN):
                b = read(ent(st.reference, st), st)
                a.set_yaw(0.0)
                s1 = _overlap_xy(a.bbox(), b)
                a.set_yaw(math.pi / 2)
                s2 = _overlap_xy(a.bbox(), b)
                if s1 > s2:
                    a.set_yaw(0.0)
            elif rel is R.PLACE_ON_BASE:
                if isinstance(a, _Group):
                    raise UnsolvedObject(a.id, "height", st.index)
                ac = _center(a.bbox())
                dx = dy = 0.0
                if "x" in p:
                    dx = values.get((st.index, "x"), float(p["x"])) - ac[0]
                if "y" in p:
                    dy = values.get((st.index, "y"), float(p["y"])) - ac[1]
                a.translate(dx, dy)
                a.z = bounds.top_z - float(a.asset.local_bounds()[0][2])
                _mark(a, x="x" in p, y="y" in p)
        for oid in order:
            b = bodies[oid]
            if not b.xs:
                raise UnsolvedObject(oid, "x")
            if not b.ys:
                raise UnsolvedObject(oid, "y")
        return bodies, order


_FIXED_YAW = {
    R.FACING_FRONT: 0.0,
    R.FACING_BACK: math.pi,
    R.FACING_LEFT: math.pi / 2,
    R.FACING_RIGHT: -math.pi / 2,
}


def _poses(bodies: dict[str, _Body], order: list[str]) -> dict[str, Pose]:
    return {oid: Pose((bodies[oid].x, bodies[oid].y, bodies[oid].z), bodies[oid].yaw) for oid in order}


def apply_predicates(
    program: PredicateProgram,
    params: ParamVector | None,
    catalog,
    bounds: Bounds2D,
    seed: int = 0,
    *,
    existing: SceneState | None = None,
) -> dict[str, Pose]:
    """Evaluate the spatial statements of ``program`` in order.

    Objects whose pose comes from PLACE-ON, PLACE-ANYWHERE or PLACE-IN are
    left out. ``catalog`` is a Catalog (descriptions are retrieved) or a
    mapping from object id to AssetRecord.

    Raises:
        UnsolvedObject: a needed coordinate was still undetermined.
    """
    assets = resolve_assets(program, catalog)
    if params is None:
        params = initial_params(program, seed)
    bodies, order = _Evaluator(program, assets, bounds, existing).run(params.lookup())
    return _poses(bodies, order)


# ---------------------------------------------------------------------------
# Penalty
# ---------------------------------------------------------------------------


def boundary_excess(fp: Footprint, bounds: Bounds2D) -> float:
    """Euclidean length by which a footprint's box sticks out of ``bounds``."""
    x0, y0, x1, y1 = fp.bounds
    ex = max(0.0, bounds.min_x - x0) + max(0.0, x1 - bounds.max_x)
    ey = max(0.0, bounds.min_y - y0) + max(0.0, y1 - bounds.max_y)
    return math.hypot(ex, ey)


def _penalty_terms(moving: dict[str, Footprint], fixed: dict[str, Footprint], bounds: Bounds2D):
    pairs = []
    ids = sorted(moving)
    for i, a in enumerate(ids):
        fa = moving[a]
        for b in ids[i + 1 :]:
            pairs.append(((a, b), overlap_area(fa, moving[b])))
        for b in sorted(fixed):
            pairs.append(((a, b), overlap_area(fa, fixed[b])))
    edges = [((a,), boundary_excess(moving[a], bounds)) for a in ids]
    return pairs, edges


def penalty(
    layout: Mapping[str, Pose],
    catalog: Mapping[str, AssetRecord],
    bounds: Bounds2D,
    *,
    fixed: Mapping[str, Footprint] | None = None,
) -> float:
    """Total pairwise footprint overlap plus total boundary excess.

    ``catalog`` maps object ids to assets. ``fixed`` footprints (objects from
    earlier rounds) only count against the posed objects.
    """
    moving = {oid: asset_footprint(catalog[oid], p.yaw, p.position[0], p.position[1]) for oid, p in layout.items()}
    pairs, edges = _penalty_terms(moving, dict(fixed or {}), bounds)
    return math.fsum(v for _, v in pairs) + math.fsum(v for _, v in edges)


def violations(
    layout: Mapping[str, Pose],
    catalog: Mapping[str, AssetRecord],
    bounds: Bounds2D,
    *,
    fixed: Mapping[str, Footprint] | None = None,
) -> list[Violation]:
    moving = {oid: asset_footprint(catalog[oid], p.yaw, p.position[0], p.position[1]) for oid, p in layout.items()}
    pairs, edges = _penalty_terms(moving, dict(fixed or {}), bounds)
    out = [Violation("penetration", k, v) for k, v in pairs if v > VIOLATION_TOL]
    out += [Violation("out_of_bounds", k, v) for k, v in edges if v > VIOLATION_TOL]
    return out


# ---------------------------------------------------------------------------
# Coordinate descent
# ---------------------------------------------------------------------------


class _Objective:
    def __init__(self, evaluator: _Evaluator):
        self.ev = evaluator
        self.fixed = {}
        if evaluator.existing is not None:
            for o in evaluator.existing.on_surface():
                self.fixed[o.id] = o.footprint()

    def __call__(self, params: ParamVector) -> float:
        bodies, order = self.ev.run(params.lookup())
        moving = {oid: bodies[oid].footprint() for oid in order}
        pairs, edges = _penalty_terms(moving, self.fixed, self.ev.bounds)
        return math.fsum(v for _, v in pairs) + math.fsum(v for _, v in edges)


def optimize(
    program: PredicateProgram,
    catalog,
    bounds: Bounds2D,
    seed: int = 0,
    *,
    existing: SceneState | None = None,
    epsilon: float = EPSILON,
    iterations: int = ITERATIONS,
    samples: int = SAMPLES,
    params: ParamVector | None = None,
) -> SolvedLayout:
    """Tune the program's numeric parameters by coordinate-descent sampling.

    Each sweep visits the parameters in statement order. For each one,
    ``samples`` values are drawn uniformly around the current value and the
    lowest-penalty value (the current one included) is kept.

    Raises:
        SolverFailure: the penalty is still >= ``epsilon`` after ``iterations`` sweeps.
        UnsolvedObject: forward evaluation read an undetermined coordinate.
    """
    t0 = time.perf_counter()
    assets = resolve_assets(program, catalog)
    ev = _Evaluator(program, assets, bounds, existing)
    objective = _Objective(ev)
    params = initial_params(program, seed) if params is None else params
    rng = np.random.default_rng([seed, 1])
    half = {"distance": bounds.shortest / 10.0, "coordinate": bounds.shortest / 10.0, "angle": ANGLE_HALF_RANGE}
    current = objective(params)
    history: list[StepRecord] = []
    done = 0
    for it in range(iterations):
        if current < epsilon:
            break
        done = it + 1
        for i, entry in enumerate(params.entries):
            h = half[entry.kind]
            cands = entry.value + rng.uniform(-h, h, size=samples)
            if entry.kind == "distance":
                cands = np.maximum(cands, 0.0)
            best_v, best_p = entry.value, current
            for v in cands:
                trial = objective(params.with_value(i, float(v)))
                if trial < best_p:
                    best_v, best_p = float(v), trial
            history.append(StepRecord(it, i, current, best_p))
            if best_v != entry.value:
                params = params.with_value(i, best_v)
                current = best_p
            if current < epsilon:
                break
    bodies, order = ev.run(params.lookup())
    layout = SolvedLayout(_poses(bodies, order), current, params, {oid: bodies[oid].asset for oid in order}, done, history)
    log.debug("spatial solve: penalty %.3g after %d sweeps in %.2fs", current, done, time.perf_counter() - t0)
    if current >= epsilon:
        viol = violations(layout.poses, layout.assets, bounds, fixed=objective.fixed)
        raise SolverFailure(layout, viol)
    return layout

