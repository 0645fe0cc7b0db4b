import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from predscene.catalog import (
    Catalog,
    DuplicateId,
    InvalidRange,
    MissingMeshFile,
    Primitive,
    RetrievalFailure,
    load_catalog,
    record_from_entry,
    record_to_entry,
    retrieve,
    similarity,
)

from conftest import box_asset


def _manifest(tmp_path, entries):
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps({"assets": entries}))
    return path


def _entry(asset_id, **kw):
    out = {"id": asset_id, "description": asset_id, "shape": {"primitive": {"type": "box", "size": [0.1, 0.1, 0.1]}}}
    out.update(kw)
    return out


def test_three_primitive_assets(tmp_path):
    path = _manifest(tmp_path, [_entry("a_0"), _entry("b_0"), _entry("c_0")])
    assert len(load_catalog(path)) == 3


def test_missing_mesh_file(tmp_path):
    path = _manifest(tmp_path, [_entry("cup_0", shape={"mesh": "cup.obj"})])
    with pytest.raises(MissingMeshFile) as info:
        load_catalog(path)
    assert info.value.asset_id == "cup_0"


def test_inverted_mass_range(tmp_path):
    path = _manifest(tmp_path, [_entry("book_0", mass_range=[2, 1])])
    with pytest.raises(InvalidRange) as info:
        load_catalog(path)
    assert (info.value.asset_id, info.value.field) == ("book_0", "mass_range")


def test_duplicate_id(tmp_path):
    path = _manifest(tmp_path, [_entry("a_0"), _entry("a_0")])
    with pytest.raises(DuplicateId):
        load_catalog(path)


def test_mesh_asset_loads_relative_to_manifest(tmp_path):
    (tmp_path / "cube.obj").write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
        "f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n"
    )
    cat = load_catalog(_manifest(tmp_path, [_entry("cube_0", shape={"mesh": "cube.obj"})]))
    rec = cat["cube_0"]
    np.testing.assert_allclose(rec.extent, [1, 1, 1])
    np.testing.assert_allclose(rec.centroid(), [0.5, 0.5, 0.5], atol=1e-12)


def test_retrieve_superset_description():
    cat = Catalog.from_records([
        box_asset("cup_0", 0.1, 0.1, 0.1, "an empty ceramic cup with a handle"),
        box_asset("plate_0", 0.1, 0.1, 0.1, "a round dinner plate"),
    ])
    assert retrieve(cat, "a ceramic cup with a handle").id == "cup_0"


def test_retrieve_no_overlap_fails():
    cat = Catalog.from_records([box_asset(n, 0.1, 0.1, 0.1, n.split("_")[0]) for n in ("cup_0", "plate_0", "fork_0")])
    with pytest.raises(RetrievalFailure):
        retrieve(cat, "xylophone", 0.3)


def test_retrieve_tie_smallest_id():
    cat = Catalog.from_records([box_asset("cup_b", 0.1, 0.1, 0.1, "cup"), box_asset("cup_a", 0.1, 0.1, 0.1, "cup")])
    assert retrieve(cat, "cup").id == "cup_a"


def test_record_round_trip(demo_catalog):
    for rec in demo_catalog:
        back = record_from_entry(record_to_entry(rec))
        assert record_to_entry(back) == record_to_entry(rec)


@pytest.mark.parametrize(
    "prim",
    [
        Primitive("box", (0.2, 0.3, 0.1)),
        Primitive("cylinder", (0.05, 0.2)),
        Primitive("sphere", (0.07,)),
        Primitive("open_box", (0.3, 0.2, 0.1, 0.02)),
        Primitive("open_cylinder", (0.06, 0.12, 0.01)),
    ],
)
def test_primitive_volume_and_centroid_monte_carlo(prim):
    rng = np.random.default_rng(0)
    lo, hi = prim.local_bounds()
    pts = rng.uniform(lo, hi, size=(400_000, 3))
    inside = prim.contains(pts)
    box_vol = float(np.prod(hi - lo))
    assert inside.mean() * box_vol == pytest.approx(prim.volume(), rel=0.02)
    np.testing.assert_allclose(pts[inside].mean(axis=0), prim.centroid(), atol=2e-3)


@given(st.text(alphabet="abc xyz", min_size=1, max_size=30), st.text(alphabet="abc xyz", min_size=1, max_size=30))
def test_similarity_symmetric_and_bounded(a, b):
    s = similarity(a, b)
    assert 0.0 <= s <= 1.0 + 1e-12
    assert s == pytest.approx(similarity(b, a))
