import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predscene.catalog import AssetRecord, Catalog, Primitive
from predscene.geometry import bottom_surface, OccupancyGrid, support_valid, SurfaceMask, posed_bounds
from predscene.physical import (
    BatchPartiallyPlaced,
    ContainerHasNoCavity,
    GridParams,
    NoFeasiblePlacement,
    PlacementRequest,
    place_on,
    place_on_candidates,
    placement_candidates,
    solve_place_anywhere,
    solve_place_in,
)
from predscene.physics import QuasiStaticBackend, settle_distance
from predscene.scene import Bounds2D, PlacedObject, SceneState

from conftest import box_asset, cyl_asset, on_table

GP = GridParams(0.01)
CUP = cyl_asset("cup", 0.04, 0.1)


def brute_candidates(scene, obj, k_bottom=1, k_search=1, target=None):
    """Direct definition: collision-free, touching, all contacts on target."""
    og = OccupancyGrid(np.zeros(3), 1.0, obj)
    bottom = bottom_surface(og, k_bottom).mask
    occ_k = np.where(obj, np.arange(obj.shape[2]), obj.shape[2])
    low = occ_k.min(axis=2)
    cells = np.argwhere(obj)
    out = {}
    for t in itertools.product(*(range(s - o + 1) for s, o in zip(scene.shape, obj.shape))):
        moved = cells + t
        if scene[moved[:, 0], moved[:, 1], moved[:, 2]].any():
            continue
        contact = on_target = 0
        for i, j in np.argwhere(bottom):
            k = low[i, j] + t[2]
            below = [k - d for d in range(1, k_search + 1) if k - d >= 0]
            if any(scene[i + t[0], j + t[1], kk] for kk in below):
                contact += 1
                if target is not None and any(target[i + t[0], j + t[1], kk] for kk in below):
                    on_target += 1
        if contact and (target is None or on_target == contact):
            out[t] = contact
    return out


def _as_dict(offsets, counts):
    return {tuple(int(v) for v in o): int(c) for o, c in zip(offsets, counts)}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3))
def test_placement_candidates_match_brute_force(seed, kb, ks):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(4, 9, 3))
    scene = np.zeros(shape, bool)
    scene[:, :, 0] = True
    scene |= rng.random(shape) < 0.08
    labels = rng.integers(0, 2, shape).astype(bool) & scene
    obj = rng.random(tuple(int(v) for v in rng.integers(1, 4, 3))) < 0.7
    obj[0, 0, 0] = True
    offsets, counts, nb = placement_candidates(scene, obj, k_bottom=kb, k_search=ks, target=labels)
    assert _as_dict(offsets, counts) == brute_candidates(scene, obj, kb, ks, labels)
    assert nb == bottom_surface(OccupancyGrid(np.zeros(3), 1.0, obj), kb).count


def _ledge_scene():
    ledge = box_asset("ledge", 0.06, 0.4, 0.1, supporting_probability=1.0)
    s = SceneState(Bounds2D(-0.3, 0.3, -0.3, 0.3, 0.0))
    s.add(on_table("ledge_0", ledge, 0.0, 0.0))
    return s


def test_cube_on_ledge_candidates_match_enumeration():
    scene = _ledge_scene()
    cube = box_asset("cube", 0.1, 0.1, 0.1)
    req = PlacementRequest("cube_0", cube, "PLACE-ON", "ledge_0", {}, yaw=0.0)
    got = {(round(c.pose.position[0], 6), round(c.pose.position[1], 6)): c.support_ratio
           for c in place_on_candidates(scene, req, GP, 0.0)}
    # Enumerate lattice positions of the cube's corner in column units:
    # column i spans [i, i + 1]. Ledge columns 27..32 in x and 10..49 in y.
    expected = {}
    for i0, j0 in itertools.product(range(0, 51), range(0, 51)):
        xs = range(max(i0, 27), min(i0 + 9, 32) + 1)
        ys = range(max(j0, 10), min(j0 + 9, 49) + 1)
        if not xs or not ys:
            continue
        com = (i0 + 5, j0 + 5)
        mask = np.ones((len(xs), len(ys)), bool)
        if not support_valid(SurfaceMask(mask, (xs[0], ys[0]), 1.0), com):
            continue
        cx, cy = -0.3 + (i0 + 5) * 0.01, -0.3 + (j0 + 5) * 0.01
        expected[(round(cx, 6), round(cy, 6))] = len(xs) * len(ys) / 100
    assert got.keys() == expected.keys()
    for k, v in expected.items():
        assert got[k] == pytest.approx(v)
    assert len(expected) == 5 * 39


def test_place_on_full_overlap(book_scene):
    req = PlacementRequest("cup_0", CUP, "PLACE-ON", "book_0", {"overlap": 1.0}, yaw=0.0)
    pose, cand = place_on(book_scene, req, GP, QuasiStaticBackend(), seed=0)
    assert cand.support_ratio == 1.0
    s = book_scene.copy()
    s.add(PlacedObject.nominal("cup_0", CUP, pose))
    assert settle_distance(s) == 0.0
    assert posed_bounds(CUP, pose)[0][2] == pytest.approx(0.04)


def test_place_on_unstable_targets_ratio(book_scene):
    req = PlacementRequest("cup_0", CUP, "PLACE-ON", "book_0", {"overlap": 0.4, "stability": "unstable"}, yaw=0.0)
    cands = place_on_candidates(book_scene, req, GP, 0.0)
    best = min(abs(c.support_ratio - 0.4) for c in cands)
    _, cand = place_on(book_scene, req, GP, QuasiStaticBackend(), seed=0)
    assert abs(cand.support_ratio - 0.4) <= best + 0.05
    # Unstable means the COM sits close to the contact-hull edge.
    from predscene.geometry import hull_margin
    margin = hull_margin(cand.contact.cell_centers(), cand.pose.position[:2])
    assert margin <= 0.02


def test_place_on_offsets_exact(book_scene):
    cube = box_asset("c", 0.04, 0.04, 0.04)
    req = PlacementRequest("c_0", cube, "PLACE-ON", "book_0", {"x_offset": 0.03, "y_offset": 0.05}, yaw=0.0)
    pose = place_on(book_scene, req, GP, QuasiStaticBackend(), seed=0)[0]
    assert pose.position[:2] == pytest.approx((0.03, 0.05), abs=1e-9)


def test_place_on_root_rejected(book_scene):
    req = PlacementRequest("c_0", CUP, "PLACE-ON", "root", {})
    with pytest.raises(NoFeasiblePlacement):
        place_on(book_scene, req, GP)


def test_place_anywhere_empty_table():
    s = SceneState(Bounds2D(-0.5, 0.5, -0.5, 0.5, 0.0))
    cube = box_asset("cube", 0.05, 0.05, 0.05)
    pose = solve_place_anywhere(s, PlacementRequest("cube_0", cube, "PLACE-ANYWHERE"), GP, QuasiStaticBackend(), seed=1)
    lo, hi = posed_bounds(cube, pose)
    assert -0.5 - 1e-9 <= lo[0] and hi[0] <= 0.5 + 1e-9 and -0.5 - 1e-9 <= lo[1] and hi[1] <= 0.5 + 1e-9
    assert lo[2] == pytest.approx(0.0, abs=1e-9)
    s.add(PlacedObject.nominal("cube_0", cube, pose))
    assert settle_distance(s) == 0.0


def test_place_anywhere_full_surface():
    s = SceneState(Bounds2D(-0.1, 0.1, -0.1, 0.1, 0.0))
    s.add(on_table("slab_0", box_asset("slab", 0.2, 0.2, 0.02, supporting_probability=0.0), 0.0, 0.0))
    req = PlacementRequest("cube_0", box_asset("cube", 0.05, 0.05, 0.05), "PLACE-ANYWHERE", yaw=0.0)
    with pytest.raises(NoFeasiblePlacement):
        solve_place_anywhere(s, req, GP, QuasiStaticBackend(), seed=0)


def test_place_anywhere_penetration_free_and_idempotent():
    s = SceneState(Bounds2D(-0.3, 0.3, -0.3, 0.3, 0.0))
    be = QuasiStaticBackend()
    for n in range(6):
        asset = box_asset(f"b{n}", 0.08, 0.06, 0.05)
        pose = solve_place_anywhere(s, PlacementRequest(f"b_{n}", asset, "PLACE-ANYWHERE"), GP, be, seed=n)
        s.add(PlacedObject.nominal(f"b_{n}", asset, pose))
    assert be.settle(s).max_displacement <= GP.displacement_tol


def _holder_catalog():
    return Catalog.from_records([
        AssetRecord("pen_holder", Primitive("open_cylinder", (0.05, 0.12, 0.005)), "a pen holder", supporting_probability=0.0),
        cyl_asset("pen", 0.005, 0.14, "pen"),
        cyl_asset("pencil", 0.004, 0.17, "pencil"),
        AssetRecord("box", Primitive("open_box", (0.3, 0.3, 0.12, 0.01)), "a large open box"),
        box_asset("cube", 0.04, 0.04, 0.04, "cube"),
        AssetRecord("ball", Primitive("sphere", (0.05,)), "sphere"),
    ])


def _container_scene(cat, asset_id):
    s = SceneState(Bounds2D(-0.3, 0.3, -0.3, 0.3, 0.0))
    s.add(on_table("c_0", cat[asset_id], 0.0, 0.0))
    return s


def test_place_in_pens_and_pencils():
    cat = _holder_catalog()
    s = _container_scene(cat, "pen_holder")
    placed = solve_place_in(s, "c_0", [["pen", 6], ["pencil", 3]], cat, QuasiStaticBackend(), seed=0, grid_params=GP)
    assert len(placed) == 9
    assert sorted(oid for oid, _, _ in placed)[:2] == ["pen_0", "pen_1"]
    lo_c, hi_c = s["c_0"].bounds3d()
    for oid, asset, pose in placed:
        lo, hi = posed_bounds(asset, pose)
        assert np.all(lo[:2] >= lo_c[:2] - 1e-9) and np.all(hi[:2] <= hi_c[:2] + 1e-9)
    full = s.copy()
    for oid, asset, pose in placed:
        full.add(PlacedObject.nominal(oid, asset, pose))
    assert QuasiStaticBackend().settle(full).max_displacement <= GP.displacement_tol


def test_place_in_cube_rests_on_floor():
    cat = _holder_catalog()
    s = _container_scene(cat, "box")
    ((oid, asset, pose),) = solve_place_in(s, "c_0", [["cube", 1]], cat, QuasiStaticBackend(), seed=2, grid_params=GP)
    assert posed_bounds(asset, pose)[0][2] == pytest.approx(0.01, abs=1e-9)
    s.add(PlacedObject.nominal(oid, asset, pose))
    assert settle_distance(s) == 0.0


def test_place_in_sphere_too_big():
    cat = _holder_catalog()
    s = _container_scene(cat, "pen_holder")
    with pytest.raises(BatchPartiallyPlaced) as info:
        solve_place_in(s, "c_0", [["sphere", 1]], cat, QuasiStaticBackend(), seed=0, grid_params=GP)
    assert info.value.placed == [] and info.value.failed == ["sphere"]


def test_place_in_solid_container():
    cat = _holder_catalog()
    s = _container_scene(cat, "cube")
    with pytest.raises(ContainerHasNoCavity):
        solve_place_in(s, "c_0", [["pen", 1]], cat, QuasiStaticBackend(), seed=0, grid_params=GP)


def test_supporter_scores_match_per_candidate():
    from predscene.physical import _Search

    s = SceneState(Bounds2D(-0.2, 0.2, -0.2, 0.2, 0.0))
    s.add(on_table("a_0", box_asset("a", 0.1, 0.1, 0.05, supporting_probability=0.6), -0.05, 0.0))
    s.add(on_table("b_0", box_asset("b", 0.1, 0.1, 0.05, supporting_probability=0.9), 0.05, 0.0))
    s.add(on_table("c_0", box_asset("c", 0.1, 0.1, 0.05, supporting_probability=0.0), 0.0, 0.12))
    req = PlacementRequest("x_0", box_asset("x", 0.06, 0.06, 0.03), "PLACE-ANYWHERE", yaw=0.3)
    search = _Search(s, req, GP, 0.3, target_only=False)
    probs = {"root": 1.0, "a_0": 0.6, "b_0": 0.9, "c_0": 0.0}
    prob = np.array([1.0] + [probs[o] for o in search.sg.owners])
    idx = np.arange(len(search))
    got = search.supporter_scores(idx, prob)
    for n in idx:
        ps = [probs[o] for o in search.supporters(int(n))]
        want = float(np.mean(ps)) if min(ps) > 0 else -1.0
        assert got[n] == pytest.approx(want, abs=1e-12)
    assert {-1.0, 1.0} <= set(np.round(got, 12)) and np.any((got > 0.6) & (got < 0.9))
