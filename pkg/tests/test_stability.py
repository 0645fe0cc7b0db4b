import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from predscene.physics import QuasiStaticBackend
from predscene.scene import Bounds2D, SceneState
from predscene.stability import (
    DIM,
    DegenerateWeights,
    PerturbationSpec,
    StabilityDataset,
    estimate_p_fail,
    optimize_instability,
    sample_dataset,
)

from conftest import box_asset, on_table

B = Bounds2D(-0.3, 0.3, -0.3, 0.3, 0.0)
CUBE = box_asset("cube", 0.1, 0.1, 0.1)
THETA = np.linspace(0.1, 1.1, DIM)


def block_scene(x=0.0):
    s = SceneState(B)
    s.add(on_table("cube_0", CUBE, x, 0.0))
    return s


def direct_p_fail(query, x, y, theta):
    """Independent evaluation with the explicit inverse covariance."""
    inv = np.linalg.inv(np.diag(np.asarray(theta) ** 2))
    s = n = 0.0
    for xj, yj in zip(x, y):
        d = xj - query
        w = math.exp(-0.5 * float(d @ inv @ d))
        s += w * yj
        n += w
    return s / n


def test_tiny_theta_all_stable():
    spec = PerturbationSpec(np.full(DIM, 1e-7), 30)
    data = sample_dataset(block_scene(), "cube_0", spec, QuasiStaticBackend(), seed=1)
    assert not data.y.any()


def test_knife_edge_labels_match_statics():
    # The cube's centre sits exactly over the table edge, so it falls iff the
    # perturbed COM moves past x = 0.3.
    theta = np.full(DIM, 1e-9)
    theta[:3] = 0.005
    theta[6] = 0.005
    spec = PerturbationSpec(theta, 60)
    data = sample_dataset(block_scene(0.3), "cube_0", spec, QuasiStaticBackend(), seed=2)
    expected = ((data.x[:, 0] + data.x[:, 6]) > 0).astype(int)
    np.testing.assert_array_equal(data.y, expected)
    assert 0 < data.y.sum() < len(data)


def test_dataset_deterministic():
    spec = PerturbationSpec.default_for(block_scene()["cube_0"], 100)
    a = sample_dataset(block_scene(0.25), "cube_0", spec, QuasiStaticBackend(), seed=7)
    b = sample_dataset(block_scene(0.25), "cube_0", spec, QuasiStaticBackend(), seed=7)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)


def test_all_stable_zero():
    rng = np.random.default_rng(0)
    data = StabilityDataset(rng.normal(size=(20, DIM)), np.zeros(20, dtype=np.int64))
    assert estimate_p_fail(rng.normal(size=DIM), data, PerturbationSpec(THETA)).p_fail == 0.0


def test_equidistant_half():
    q = np.zeros(DIM)
    d = np.zeros(DIM)
    d[3] = THETA[3]
    data = StabilityDataset(np.stack([q + d, q - d]), np.array([0, 1]))
    assert estimate_p_fail(q, data, PerturbationSpec(THETA)).p_fail == 0.5


def test_matches_direct_sums():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(1, 80))
        x = rng.normal(size=(n, DIM)) * THETA
        y = rng.integers(0, 2, n)
        q = rng.normal(size=DIM) * THETA * 0.5
        got = estimate_p_fail(q, StabilityDataset(x, y), PerturbationSpec(THETA)).p_fail
        assert got == pytest.approx(direct_p_fail(q, x, y, THETA), rel=1e-12, abs=1e-300)


def test_degenerate_weights():
    data = StabilityDataset(np.zeros((3, DIM)), np.array([0, 1, 0]))
    with pytest.raises(DegenerateWeights):
        estimate_p_fail(np.full(DIM, 1e6), data, PerturbationSpec(np.ones(DIM)))


def test_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec(np.zeros(DIM))
    with pytest.raises(ValueError):
        PerturbationSpec(np.ones(DIM), 0)


_data = st.integers(1, 30).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, (n, DIM), elements=st.floats(-2, 2)),
        arrays(np.int64, (n,), elements=st.integers(0, 1)),
        arrays(np.float64, (DIM,), elements=st.floats(-1, 1)),
    )
)


@settings(max_examples=60, deadline=None)
@given(_data, st.floats(0.1, 10.0), st.randoms(use_true_random=False))
def test_estimator_invariants(d, c, rnd):
    x, y, q = d
    spec = PerturbationSpec(THETA)
    try:
        p = estimate_p_fail(q, StabilityDataset(x, y), spec).p_fail
    except DegenerateWeights:
        return
    assert y.min() <= p <= y.max()
    perm = list(range(len(y)))
    rnd.shuffle(perm)
    assert estimate_p_fail(q, StabilityDataset(x[perm], y[perm]), spec).p_fail == pytest.approx(p, abs=1e-12)
    scaled = estimate_p_fail(q * c, StabilityDataset(x * c, y), spec.scaled(c)).p_fail
    assert scaled == pytest.approx(p, abs=1e-9)


def test_instability_robust_block():
    spec = PerturbationSpec(np.full(DIM, 1e-7), 20)
    r = optimize_instability(block_scene(), "cube_0", spec, QuasiStaticBackend(), iterations=3, seed=0)
    moved = np.subtract(r.state["cube_0"].pose.position, block_scene()["cube_0"].pose.position)
    assert np.abs(moved).max() < 1e-5
    assert r.p_fail_initial == r.p_fail_final == 0.0
    assert r.confirmed_stable


def test_instability_single_sample():
    spec = PerturbationSpec.default_for(block_scene()["cube_0"], 1)
    r = optimize_instability(block_scene(0.2), "cube_0", spec, QuasiStaticBackend(), iterations=2, seed=0)
    assert 0.0 <= r.p_fail_final <= 1.0
    assert r.confirmed_stable or r.no_stable_sample


def test_instability_no_stable_sample():
    # Almost entirely off the edge: every draw falls.
    spec = PerturbationSpec(np.full(DIM, 1e-7), 5)
    r = optimize_instability(block_scene(0.36), "cube_0", spec, QuasiStaticBackend(), iterations=2, seed=0)
    assert r.no_stable_sample and r.p_fail_initial == 1.0
