"""End-to-end solve of one predicate program into a settled scene.

Order: grammar and solvedness checks, asset retrieval, spatial solve of the
non-physical objects, then PLACE-ON, PLACE-IN and PLACE-ANYWHERE in program
order. A final settle confirms that the assembled scene stays put.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .catalog import DEFAULT_RETRIEVAL_THRESHOLD, AssetRecord, Catalog, RetrievalFailure, retrieve
from .dsl import ROOT, PredicateProgram, Relation, analyze_solvedness, physical_subjects, validate_grammar
from .feedback import FeedbackReport, Issue, diagnose_failure, grammar_report, render_text
from .physical import (
    BatchPartiallyPlaced,
    ContainerHasNoCavity,
    GridParams,
    NoFeasiblePlacement,
    PhysicsRejection,
    PlacementRequest,
    solve_place_anywhere,
    solve_place_in,
    solve_place_on,
)
from .physics import QuasiStaticBackend, SceneCollapsed, SimulationBackend
from .scene import Bounds2D, PlacedObject, SceneState
from .spatial import SolverFailure, UnsolvedObject, optimize

log = logging.getLogger(__name__)

R = Relation

PHYSICAL_ERRORS = (NoFeasiblePlacement, PhysicsRejection, ContainerHasNoCavity, BatchPartiallyPlaced)

_FIXED_YAW = {
    R.FACING_FRONT: 0.0,
    R.FACING_BACK: math.pi,
    R.FACING_LEFT: math.pi / 2,
    R.FACING_RIGHT: -math.pi / 2,
}


@dataclass(frozen=True)
class SolverConfig:
    resolution: float = 0.01
    k_bottom: int = 1
    k_search: int = 1
    threshold: float = DEFAULT_RETRIEVAL_THRESHOLD
    max_tries: int = 25

    def grid(self) -> GridParams:
        return GridParams(self.resolution, self.k_bottom, self.k_search, self.max_tries)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SolveOutcome:
    scene: SceneState
    report: FeedbackReport | None = None
    failures: list = field(default_factory=list)
    penalty: float | None = None

    @property
    def ok(self) -> bool:
        return self.report is None


def _unsolved_issues(program: PredicateProgram) -> list[Issue]:
    """Objects missing x, y or height; spatially placed objects also need a yaw."""
    status = analyze_solvedness(program)
    phys = physical_subjects(program)
    issues = []
    for oid, flags in status.flags.items():
        missing = flags.missing()
        if oid in phys:
            missing = [m for m in missing if m != "yaw"]
        if missing:
            issues.append(Issue("NotFullySolved", (oid,), None, None, "undetermined: " + ", ".join(missing)))
    return issues


def _assets(program: PredicateProgram, catalog: Catalog, threshold: float):
    assets: dict[str, AssetRecord] = {}
    failures = []
    for d in program.descriptions:
        try:
            assets[d.object_id] = retrieve(catalog, d.text, threshold)
        except RetrievalFailure as exc:
            failures.append(RetrievalFailure(exc.description, exc.best_score, exc.best_id, object_id=d.object_id))
    return assets, failures


def physical_yaw(program: PredicateProgram, subject: str, scene: SceneState, target: str | None, rng) -> float | None:
    """Yaw of a physically placed object from its rotation statements.

    FACING-TO measures the direction from the target's centre, the best
    guess for where the object will land. None means no rotation statement.
    """
    yaw = None
    for st in program.statements:
        if st.is_batch or st.subject != subject:
            continue
        rel = st.rel
        ref = scene.objects.get(st.reference) if isinstance(st.reference, str) else None
        if rel in _FIXED_YAW:
            yaw = _FIXED_YAW[rel]
        elif rel is R.RANDOM_ROT:
            yaw = float(rng.random() * 2.0 * math.pi)
        elif rel in (R.FACING_SAME_AS, R.ORIENT_BY_RELATIVE_SIDE, R.SIDE_SCALE_ALIGN):
            yaw = ref.pose.yaw if ref is not None else 0.0
        elif rel is R.FACING_OPPOSITE_TO:
            yaw = (ref.pose.yaw if ref is not None else 0.0) + math.pi
        elif rel is R.FACING_TO and ref is not None:
            origin = scene[target].footprint().center if target in scene else (0.0, 0.0)
            goal = ref.footprint().center
            yaw = math.atan2(goal[1] - origin[1], goal[0] - origin[0])
    return yaw


def _settle_check(scene: SceneState, backend: SimulationBackend, tol: float) -> SceneState:
    result = backend.settle(scene)
    moved = {oid: d for oid, d in result.displacement.items() if d > tol + 1e-12}
    fell = sorted(oid for oid, f in result.fell.items() if f)
    if moved or fell:
        raise SceneCollapsed(moved, fell)
    out = scene.copy()
    for oid, pose in result.poses.items():
        out.replace(out[oid].with_pose(pose))
    return out


def solve_program(
    program: PredicateProgram,
    catalog: Catalog,
    bounds: Bounds2D,
    seed: int = 0,
    config: SolverConfig | None = None,
    backend: SimulationBackend | None = None,
) -> SolveOutcome:
    """Turn a predicate program into a physically valid scene or a failure report."""
    config = config or SolverConfig()
    backend = backend or QuasiStaticBackend(resolution=config.resolution)
    gp = config.grid()
    empty = SceneState(bounds, resolution=config.resolution)

    grammar = validate_grammar(program, catalog)
    if grammar:
        return SolveOutcome(empty, grammar_report(grammar))
    unsolved = _unsolved_issues(program)
    if unsolved:
        report = FeedbackReport("grammar", unsolved)
        report.text = render_text(report)
        return SolveOutcome(empty, report)

    assets, missing = _assets(program, catalog, config.threshold)
    if missing:
        return SolveOutcome(empty, diagnose_failure(missing, empty, bounds), missing)

    phys = physical_subjects(program)
    spatial_assets = {oid: a for oid, a in assets.items() if oid not in phys}
    try:
        layout = optimize(program, spatial_assets, bounds, seed)
    except SolverFailure as exc:
        partial = SceneState(bounds, resolution=config.resolution)
        for oid, pose in exc.best_layout.poses.items():
            partial.add(PlacedObject.nominal(oid, exc.best_layout.assets[oid], pose))
        return SolveOutcome(partial, diagnose_failure(exc, partial, bounds), [exc], exc.best_layout.penalty)
    except UnsolvedObject as exc:
        return SolveOutcome(empty, diagnose_failure(exc, empty, bounds), [exc])

    scene = SceneState(bounds, resolution=config.resolution)
    for oid, pose in layout.poses.items():
        scene.add(PlacedObject.nominal(oid, layout.assets[oid], pose))
    try:
        scene = _settle_check(scene, backend, gp.displacement_tol)
    except SceneCollapsed as exc:
        return SolveOutcome(scene, diagnose_failure(exc, scene, bounds), [exc], layout.penalty)

    rng = np.random.default_rng([seed, 6])
    failures: list = []
    stages = (
        [st for st in program.statements if st.rel is R.PLACE_ON],
        [st for st in program.statements if st.rel is R.PLACE_IN],
        [st for st in program.statements if st.rel is R.PLACE_ANYWHERE],
    )
    for st in stages[0]:
        target = st.reference
        yaw = physical_yaw(program, st.subject, scene, target, rng)
        req = PlacementRequest(st.subject, assets[st.subject], "PLACE-ON", target, dict(st.params), yaw)
        try:
            pose = solve_place_on(scene, req, gp, backend, seed + st.index)
        except PHYSICAL_ERRORS as exc:
            failures.append(exc)
            continue
        scene.add(PlacedObject.nominal(st.subject, req.asset, pose))
    for st in stages[1]:
        if st.reference not in scene:
            failures.append(NoFeasiblePlacement(st.subject_key, st.reference))
            continue
        try:
            placed = solve_place_in(scene, st.reference, st.subject, catalog, backend, seed + st.index, gp)
        except BatchPartiallyPlaced as exc:
            failures.append(exc)
            placed = exc.placed
        except ContainerHasNoCavity as exc:
            failures.append(exc)
            continue
        for oid, asset, pose in placed:
            scene.add(PlacedObject.nominal(oid, asset, pose))
    for st in stages[2]:
        req = PlacementRequest(st.subject, assets[st.subject], "PLACE-ANYWHERE", ROOT, dict(st.params))
        try:
            pose = solve_place_anywhere(scene, req, gp, backend, seed + st.index)
        except PHYSICAL_ERRORS as exc:
            failures.append(exc)
            continue
        scene.add(PlacedObject.nominal(st.subject, req.asset, pose))

    if not failures:
        try:
            scene = _settle_check(scene, backend, gp.displacement_tol)
        except SceneCollapsed as exc:
            failures.append(exc)
    if failures:
        return SolveOutcome(scene, diagnose_failure(failures, scene, bounds), failures, layout.penalty)
    log.info("solved %d object(s)", len(scene))
    return SolveOutcome(scene, None, [], layout.penalty)
