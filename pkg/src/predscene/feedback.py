"""Feedback reports for the agent: grammar errors, solve failures and success metrics.

Every report is structured (``to_json``) and rendered to plain prose by
:func:`render_text`. Each issue becomes exactly one line, so object ids can
be read back out of the text.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from .catalog import RetrievalFailure
from .dsl import GrammarIssue
from .geometry import Footprint
from .physical import BatchPartiallyPlaced, ContainerHasNoCavity, NoFeasiblePlacement, PhysicsRejection
from .physics import SceneCollapsed, SimulationBackend
from .scene import Bounds2D, SceneState
from .spatial import SolverFailure, UnsolvedObject
from .stability import DIM, PerturbationSpec, estimate_p_fail, sample_dataset

log = logging.getLogger(__name__)

REPORT_SCHEMA = "predscene.feedback/1"
MAX_REGIONS = 6

DIRECTION_PHRASE = {
    "front": "in front of",
    "back": "behind",
    "left": "to the left of",
    "right": "to the right of",
}


@dataclass(frozen=True)
class Issue:
    kind: str
    objects: tuple[str, ...] = ()
    statement: int | None = None
    magnitude: float | None = None
    detail: str = ""

    def to_json(self) -> dict:
        out = {"kind": self.kind, "objects": list(self.objects)}
        if self.statement is not None:
            out["statement"] = self.statement
        if self.magnitude is not None:
            out["magnitude"] = self.magnitude
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass(frozen=True)
class EmptyRegion:
    bbox: tuple[float, float, float, float]  # min_x, min_y, max_x, max_y
    nearest: str | None
    direction: str | None
    side: str

    @property
    def area(self) -> float:
        return (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])

    def to_json(self) -> dict:
        return {
            "bbox": list(self.bbox),
            "area": self.area,
            "nearest": self.nearest,
            "direction": self.direction,
            "side": self.side,
        }


@dataclass
class FeedbackReport:
    channel: str  # "grammar" | "failure" | "success"
    issues: list[Issue] = field(default_factory=list)
    empty_regions: list[EmptyRegion] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    text: str = ""

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "channel": self.channel,
            "issues": [i.to_json() for i in self.issues],
            "empty_regions": [r.to_json() for r in self.empty_regions],
            "metrics": dict(self.metrics),
            "text": self.text,
        }


class VqaClient(Protocol):
    def score(self, svg: str, prompt: str) -> float: ...


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _polygon(fp: Footprint) -> Polygon:
    return Polygon(fp.hull)


def scene_metrics(scene: SceneState) -> dict:
    """Coverage of the surface, compactness of the layout and the object count.

    Compactness is the union area over the area of the union's convex hull;
    it is 1.0 for an empty scene.
    """
    b = scene.bounds
    table = box(b.min_x, b.min_y, b.max_x, b.max_y)
    polys = [_polygon(o.footprint()) for o in scene]
    if not polys:
        return {"surface_coverage": 0.0, "compactness": 1.0, "object_count": 0}
    union = shapely.union_all(polys)
    coverage = union.intersection(table).area / table.area
    hull_area = union.convex_hull.area
    compact = union.area / hull_area if hull_area > 0 else 1.0
    return {
        "surface_coverage": float(min(1.0, max(0.0, coverage))),
        "compactness": float(min(1.0, max(0.0, compact))),
        "object_count": len(polys),
    }


# ---------------------------------------------------------------------------
# Empty regions
# ---------------------------------------------------------------------------


def occupancy_mask(scene: SceneState, bounds: Bounds2D, resolution: float) -> np.ndarray:
    """Cells of the surface grid that any footprint touches with positive area."""
    nx = max(1, int(math.floor(bounds.width_x / resolution + 1e-9)))
    ny = max(1, int(math.floor(bounds.width_y / resolution + 1e-9)))
    occ = np.zeros((nx, ny), dtype=bool)
    for o in scene:
        poly = _polygon(o.footprint())
        x0, y0, x1, y1 = poly.bounds
        i0 = max(0, int(math.floor((x0 - bounds.min_x) / resolution)))
        i1 = min(nx, int(math.ceil((x1 - bounds.min_x) / resolution)))
        j0 = max(0, int(math.floor((y0 - bounds.min_y) / resolution)))
        j1 = min(ny, int(math.ceil((y1 - bounds.min_y) / resolution)))
        if i0 >= i1 or j0 >= j1:
            continue
        cells = [
            box(bounds.min_x + i * resolution, bounds.min_y + j * resolution,
                bounds.min_x + (i + 1) * resolution, bounds.min_y + (j + 1) * resolution)
            for i in range(i0, i1) for j in range(j0, j1)
        ]
        areas = shapely.area(shapely.intersection(np.array(cells, dtype=object), poly))
        occ[i0:i1, j0:j1] |= (areas > 0.0).reshape(i1 - i0, j1 - j0)
    return occ


def largest_empty_rectangle(free: np.ndarray) -> tuple[int, int, int, int, int] | None:
    """Largest all-True axis-aligned rectangle as (area, i0, j0, i1, j1), half-open.

    Row-by-row histogram with a monotone stack; ties keep the first found.
    """
    nx, ny = free.shape
    heights = np.zeros(ny, dtype=np.int64)
    best = None
    for i in range(nx):
        heights = np.where(free[i], heights + 1, 0)
        stack: list[int] = []
        for j in range(ny + 1):
            h = heights[j] if j < ny else 0
            while stack and heights[stack[-1]] >= h:
                top = stack.pop()
                height = heights[top]
                left = stack[-1] + 1 if stack else 0
                area = int(height * (j - left))
                if height > 0 and (best is None or area > best[0]):
                    best = (area, i - height + 1, left, i + 1, j)
            stack.append(j)
    return best


def _side(bounds: Bounds2D, cx: float, cy: float) -> str:
    mx, my = bounds.center
    fb = ""
    if cx - mx > bounds.width_x / 6:
        fb = "front"
    elif mx - cx > bounds.width_x / 6:
        fb = "back"
    lr = ""
    if cy - my > bounds.width_y / 6:
        lr = "left"
    elif my - cy > bounds.width_y / 6:
        lr = "right"
    if fb and lr:
        return f"{fb}-{lr}"
    return fb or lr or "center"


def _direction(dx: float, dy: float) -> str:
    if abs(dx) >= abs(dy):
        return "front" if dx > 0 else "back"
    return "left" if dy > 0 else "right"


def detect_empty_regions(
    scene: SceneState,
    bounds: Bounds2D | None = None,
    min_area: float | None = None,
    resolution: float | None = None,
    max_regions: int = MAX_REGIONS,
) -> list[EmptyRegion]:
    """Greedy, non-overlapping largest empty rectangles on the surface.

    ``min_area`` defaults to four times the smallest footprint area (0 for an
    empty scene). Each region is tagged with the object whose footprint
    centre is nearest to the region centre, and the region's direction from
    it along the dominant axis.
    """
    bounds = bounds or scene.bounds
    res = resolution or scene.resolution
    fps = {o.id: o.footprint() for o in scene}
    if min_area is None:
        min_area = 4.0 * min((fp.area for fp in fps.values()), default=0.0)
    free = ~occupancy_mask(scene, bounds, res)
    regions = []
    while len(regions) < max_regions:
        found = largest_empty_rectangle(free)
        if found is None:
            break
        area, i0, j0, i1, j1 = found
        if area * res * res < min_area or area == 0:
            break
        free[i0:i1, j0:j1] = False
        rect = (
            float(bounds.min_x + i0 * res),
            float(bounds.min_y + j0 * res),
            float(bounds.min_x + i1 * res),
            float(bounds.min_y + j1 * res),
        )
        cx, cy = 0.5 * (rect[0] + rect[2]), 0.5 * (rect[1] + rect[3])
        nearest = direction = None
        if fps:
            # A maximal rectangle touches several objects, so edge distance
            # ties at zero; centre distance picks the natural landmark.
            nearest = min(sorted(fps), key=lambda oid: math.dist(fps[oid].center, (cx, cy)))
            ox, oy = fps[nearest].center
            direction = _direction(cx - ox, cy - oy)
        regions.append(EmptyRegion(rect, nearest, direction, _side(bounds, cx, cy)))
    return regions


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def grammar_report(issues: Iterable[GrammarIssue]) -> FeedbackReport:
    out = []
    for g in issues:
        out.append(Issue(g.kind, tuple(str(o) for o in g.objects), g.statement, None, g.message))
    report = FeedbackReport("grammar", out)
    report.text = render_text(report)
    return report


def failure_issues(failure) -> list[Issue]:
    """Structured issues for one solver error."""
    if isinstance(failure, SolverFailure):
        out = []
        for v in failure.violations:
            if v.kind == "penetration":
                out.append(Issue("Penetration", tuple(v.objects), None, v.magnitude))
            else:
                out.append(Issue("OutOfBounds", tuple(v.objects), None, v.magnitude))
        return out
    if isinstance(failure, PhysicsRejection):
        return [Issue("StackInfeasible", (failure.object_id,), None, float(failure.tried),
                      f"target {failure.target}; {failure.tried} candidate(s) simulated, all moved or fell")]
    if isinstance(failure, NoFeasiblePlacement):
        return [Issue("StackInfeasible", (failure.object_id,), None, 0.0,
                      f"target {failure.target}; no collision-free supported spot")]
    if isinstance(failure, ContainerHasNoCavity):
        return [Issue("NoCavity", (failure.container_id,))]
    if isinstance(failure, BatchPartiallyPlaced):
        return [Issue("BatchPartiallyPlaced", (failure.container_id,), None, float(len(failure.failed)),
                      "could not fit: " + ", ".join(failure.failed))]
    if isinstance(failure, UnsolvedObject):
        return [Issue("Unsolved", (failure.object_id,), failure.statement, None, f"{failure.axis} undetermined")]
    if isinstance(failure, RetrievalFailure):
        objs = (failure.object_id,) if failure.object_id else ()
        return [Issue("RetrievalFailed", objs, None, failure.best_score, failure.description)]
    if isinstance(failure, SceneCollapsed):
        out = [Issue("Fell", (oid,)) for oid in failure.fell]
        out += [Issue("Unsettled", (oid,), None, d) for oid, d in failure.moved.items() if oid not in failure.fell]
        return out
    return [Issue("SolverError", (), None, None, str(failure))]


def diagnose_failure(
    failure,
    scene: SceneState,
    bounds: Bounds2D | None = None,
    min_area: float | None = None,
) -> FeedbackReport:
    """Failure report: one issue per violation plus empty-space hints.

    ``failure`` is a solver exception or a list of them; ``scene`` is the
    best partial scene available.
    """
    bounds = bounds or scene.bounds
    failures = failure if isinstance(failure, (list, tuple)) else [failure]
    issues = [i for f in failures for i in failure_issues(f)]
    report = FeedbackReport("failure", issues)
    report.empty_regions = detect_empty_regions(scene, bounds, min_area)
    report.metrics = {"surface_coverage": scene_metrics(scene)["surface_coverage"]}
    report.text = render_text(report)
    return report


def stability_score(
    scene: SceneState,
    backend: SimulationBackend,
    spec: PerturbationSpec | None = None,
    seed: int = 0,
    samples: int = 50,
) -> tuple[float, dict[str, float]]:
    """Mean over objects of one minus the nominal failure probability (1.0 if empty)."""
    per = {}
    for n, o in enumerate(scene):
        sp = spec or PerturbationSpec.default_for(o, samples)
        data = sample_dataset(scene, o.id, sp, backend, seed + n)
        per[o.id] = 1.0 - estimate_p_fail(np.zeros(DIM), data, sp).p_fail
    if not per:
        return 1.0, per
    return float(np.mean(list(per.values()))), per


def success_report(
    scene: SceneState,
    backend: SimulationBackend,
    spec: PerturbationSpec | None = None,
    vqa_client: VqaClient | None = None,
    prompt: str = "",
    seed: int = 0,
    samples: int = 50,
) -> FeedbackReport:
    """Stability, heuristic layout measures and, when configured, an external VQA score."""
    score, per = stability_score(scene, backend, spec, seed, samples)
    metrics = {"stability_score": score, "per_object_stability": per}
    metrics.update(scene_metrics(scene))
    issues: list[Issue] = []
    if vqa_client is not None:
        from .scenefile import render_svg

        try:
            metrics["external_vqa"] = float(vqa_client.score(render_svg(scene), prompt))
        except Exception as exc:  # any client failure is reported, never fatal
            metrics["vqa_unavailable"] = f"VqaUnavailable: {exc}"
    report = FeedbackReport("success", issues, [], metrics)
    report.text = render_text(report)
    return report


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------


def _issue_key(issue: Issue):
    return (
        issue.statement if issue.statement is not None else math.inf,
        issue.objects[0] if issue.objects else "",
        issue.objects[1:] if len(issue.objects) > 1 else (),
        issue.kind,
    )


def _issue_line(issue: Issue) -> str:
    objs = issue.objects
    where = f" (statement {issue.statement})" if issue.statement is not None else ""
    if issue.kind == "Penetration":
        return f"- Penetration: {objs[0]} and {objs[1]} overlap by {issue.magnitude:.4f} m^2{where}."
    if issue.kind == "OutOfBounds":
        return f"- Out of bounds: {objs[0]} extends {issue.magnitude:.3f} m past the table edge{where}."
    if issue.kind == "StackInfeasible":
        return f"- Stacking failed: {objs[0]} could not be placed ({issue.detail}){where}."
    if issue.kind == "NoCavity":
        return f"- Container problem: {objs[0]} has no open cavity to place objects in{where}."
    if issue.kind == "BatchPartiallyPlaced":
        return f"- Container full: {objs[0]} {issue.detail}{where}."
    if issue.kind == "RetrievalFailed":
        who = f"{objs[0]}: " if objs else ""
        return f"- Retrieval failed: {who}no asset matches the description \"{issue.detail}\"{where}."
    if issue.kind == "Fell":
        return f"- Unstable: {objs[0]} fell when the finished scene was simulated{where}."
    if issue.kind == "Unsettled":
        return f"- Unstable: {objs[0]} moved {issue.magnitude:.3f} m when the finished scene was simulated{where}."
    if issue.kind == "Unsolved":
        return f"- Unsolved: {objs[0]} has its {issue.detail}{where}."
    subject = ", ".join(objs)
    prefix = f"{issue.kind}: {subject}: " if subject else f"{issue.kind}: "
    return f"- {prefix}{issue.detail}{where}."


def region_sentence(region: EmptyRegion) -> str:
    w = region.bbox[2] - region.bbox[0]
    d = region.bbox[3] - region.bbox[1]
    size = f"(about {w:.2f} m x {d:.2f} m)"
    if region.nearest is None:
        return f"There is an empty region covering the {region.side} of the table {size}."
    return (
        f"There is an empty region {DIRECTION_PHRASE[region.direction]} the {region.nearest} "
        f"on the {region.side} side of the table {size}."
    )


def render_text(report: FeedbackReport) -> str:
    """Deterministic prose; issues sorted by statement index, then object id."""
    lines = []
    issues = sorted(report.issues, key=_issue_key)
    if report.channel == "grammar" and not issues:
        lines.append("The predicate program is grammatically valid.")
    elif report.channel == "grammar":
        lines.append(f"The predicate program has {len(issues)} grammar error(s):")
        lines += [_issue_line(i) for i in issues]
        lines.append("Fix these errors and return the full corrected program.")
    elif report.channel == "failure":
        lines.append(f"The scene could not be solved; {len(issues)} problem(s) found:")
        lines += [_issue_line(i) for i in issues]
        cov = report.metrics.get("surface_coverage")
        if cov is not None:
            lines.append(f"The table surface is {100 * cov:.1f}% covered.")
        lines += [region_sentence(r) for r in report.empty_regions]
        lines.append("Adjust the predicates (distances, positions, or which objects to include) and try again.")
    else:
        m = report.metrics
        lines.append(f"The scene was solved with {m.get('object_count', 0)} object(s).")
        lines.append(
            f"Stability: the mean probability of standing under small perturbations is {m.get('stability_score', 1.0):.3f}."
        )
        lines.append(
            f"Layout: surface coverage {100 * m.get('surface_coverage', 0.0):.1f}%, "
            f"compactness {m.get('compactness', 1.0):.3f}, {m.get('object_count', 0)} object(s) placed."
        )
        if "external_vqa" in m:
            lines.append(f"Visual quality: the external VQA score is {m['external_vqa']:.3f}.")
        elif "vqa_unavailable" in m:
            lines.append("Visual quality: the external VQA service was unavailable.")
        lines += [_issue_line(i) for i in issues]
    return "\n".join(lines)
