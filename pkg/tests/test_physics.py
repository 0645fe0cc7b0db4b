import dataclasses
import sys

import pytest
from hypothesis import given, settings, strategies as st

from predscene.geometry import Pose
from predscene.physics import (
    MAX_DISPLACEMENT,
    JsonLinesBackend,
    QuasiStaticBackend,
    SettleResult,
    settle_distance,
)
from predscene.scene import Bounds2D, SceneState

from conftest import box_asset, on_table

B = Bounds2D(-0.3, 0.3, -0.3, 0.3, 0.0)
CUBE = box_asset("cube_0", 0.1, 0.1, 0.1)


def scene_of(*objs, bounds=B):
    s = SceneState(bounds)
    for o in objs:
        s.add(o)
    return s


def test_single_box_flat():
    r = QuasiStaticBackend().settle(scene_of(on_table("a", CUBE, 0, 0)))
    assert r.displacement["a"] == 0.0 and not r.fell["a"]


def test_ledge_sixty_percent_off_falls():
    # Spans x in [0.26, 0.36] against a table edge at 0.3.
    r = QuasiStaticBackend().settle(scene_of(on_table("a", CUBE, 0.31, 0)))
    assert r.fell["a"] and r.displacement["a"] == MAX_DISPLACEMENT


def test_ledge_forty_percent_off_stands():
    r = QuasiStaticBackend().settle(scene_of(on_table("a", CUBE, 0.29, 0)))
    assert not r.fell["a"]


def _stacked(x_mid, x_top, shift_top):
    a = on_table("a", CUBE, 0.0, 0.0)
    b = on_table("b", CUBE, x_mid, 0.0, top=0.1)
    c = on_table("c", CUBE, x_top, 0.0, top=0.2)
    c = dataclasses.replace(c, com_shift=(shift_top, 0.0, 0.0))
    return scene_of(a, b, c)


def _manual_statics(x_mid, x_top, shift_top):
    """Hand statics along x for three unit-mass cubes of width 0.1."""

    def hull(lo_a, hi_a, lo_b, hi_b):
        # Contact cells cover the full overlap of the two faces.
        return max(lo_a, lo_b), min(hi_a, hi_b)

    com_c = x_top + shift_top
    lo, hi = hull(x_mid - 0.05, x_mid + 0.05, x_top - 0.05, x_top + 0.05)
    c_ok = lo <= com_c <= hi
    # A toppling top box passes no load down.
    agg_bc = (x_mid + com_c) / 2 if c_ok else x_mid
    lo, hi = hull(-0.05, 0.05, x_mid - 0.05, x_mid + 0.05)
    b_ok = lo <= agg_bc <= hi
    return {"a": False, "b": not b_ok, "c": (not b_ok) or (not c_ok)}


def test_three_stack_middle_and_top_fall():
    r = QuasiStaticBackend().settle(_stacked(0.04, 0.04, 0.04))
    assert r.fell == {"a": False, "b": True, "c": True}
    assert r.fell == _manual_statics(0.04, 0.04, 0.04)


@pytest.mark.parametrize("x_mid,x_top,shift", [(0.0, 0.0, 0.0), (0.02, 0.04, 0.0), (0.04, 0.0, 0.0), (0.03, 0.06, 0.02)])
def test_three_stack_matches_manual_statics(x_mid, x_top, shift):
    r = QuasiStaticBackend().settle(_stacked(x_mid, x_top, shift))
    assert r.fell == _manual_statics(x_mid, x_top, shift)


def test_support_graph_acyclic_on_stack():
    r = QuasiStaticBackend().settle(_stacked(0.0, 0.0, 0.0))
    assert r.support.is_acyclic()
    assert r.support.supporters_of("c") == {"b"}


def test_settle_distance_solved_scene_zero():
    s = scene_of(on_table("a", CUBE, -0.15, 0), on_table("b", CUBE, 0.15, 0))
    assert settle_distance(s) == 0.0


@pytest.mark.parametrize("n", [1, 2, 4])
def test_settle_distance_floating(n):
    objs = [on_table("f", CUBE, -0.2, -0.2, top=0.3)]
    objs += [on_table(f"o{k}", CUBE, 0.15 * k - 0.1, 0.15) for k in range(n - 1)]
    assert settle_distance(scene_of(*objs)) == pytest.approx(0.3 / n, abs=1e-12)


def test_settle_distance_toppling():
    objs = [on_table("t", CUBE, 0.31, 0.0)] + [on_table(f"o{k}", CUBE, -0.2 + 0.15 * k, -0.15) for k in range(3)]
    assert settle_distance(scene_of(*objs)) == pytest.approx(0.25)


def test_settle_idempotent():
    s = _stacked(0.01, 0.02, 0.0)
    s.replace(s["c"].with_pose(Pose((0.02, 0.0, 0.4), 0.0)))
    be = QuasiStaticBackend()
    r = be.settle(s)
    again = s.copy()
    for oid, p in r.poses.items():
        again.replace(again[oid].with_pose(p))
    assert be.settle(again).max_displacement <= 0.01


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_single_object_mass_irrelevant(mass, dx, dy):
    base = on_table("a", CUBE, 0.25 + dx, dy)
    heavy = dataclasses.replace(base, mass=mass)
    be = QuasiStaticBackend()
    assert be.settle(scene_of(base)).fell == be.settle(scene_of(heavy)).fell


def test_deterministic():
    s = _stacked(0.03, 0.05, 0.01)
    a = QuasiStaticBackend().settle(s).to_json()
    b = QuasiStaticBackend().settle(s).to_json()
    assert a == b


def test_settle_result_json_clamps():
    r = SettleResult.from_json({"displacement": {"a": 7.0, "b": -1.0}, "fell": {"a": 1, "b": 0}})
    assert r.displacement == {"a": 1.0, "b": 0.0} and r.fell == {"a": True, "b": False}


ECHO = """
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    ids = [o["id"] for o in req["scene"]["objects"]]
    print(json.dumps({"displacement": {i: 0.5 for i in ids}, "fell": {i: False for i in ids}}), flush=True)
"""


def test_json_lines_backend_round_trip(tmp_path):
    script = tmp_path / "engine.py"
    script.write_text(ECHO)
    be = JsonLinesBackend([sys.executable, str(script)])
    try:
        r = be.settle(scene_of(on_table("a", CUBE, 0, 0)))
    finally:
        be.close()
    assert r.displacement == {"a": 0.5} and r.fell == {"a": False}
