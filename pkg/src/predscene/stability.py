"""Perturbation-based stability estimation and instability search.

A perturbation is an 11-vector ``[dp(3), dr(3), dc(3), dmu, dm]``: position
shift, axis-angle tilt, centre-of-mass shift, friction change and mass
change. Samples are drawn from a zero-mean Gaussian with diagonal covariance,
labelled by a backend (1 = something fell), and a Gaussian kernel in
Mahalanobis distance turns the labels into a local failure probability.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .physics import SimulationBackend
from .scene import PlacedObject, SceneState

log = logging.getLogger(__name__)

DIM = 11
DEFAULT_SAMPLES = 50
MAX_REJECTIONS = 1000


class DegenerateWeights(ArithmeticError):
    """Every kernel weight underflowed to zero."""


class RejectionLimit(RuntimeError):
    """Too many draws fell outside the admissible physical ranges."""


@dataclass(frozen=True)
class PerturbationSpec:
    theta: np.ndarray
    n: int = DEFAULT_SAMPLES

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (DIM,) or not np.all(theta > 0) or not np.all(np.isfinite(theta)):
            raise ValueError("theta must hold 11 positive finite standard deviations")
        if int(self.n) < 1:
            raise ValueError("sample count must be at least 1")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def default_for(cls, obj: PlacedObject, n: int = DEFAULT_SAMPLES) -> "PerturbationSpec":
        """5 mm position, 2 degrees tilt, 10% of extent for the COM, 0.05 friction, 10% mass."""
        ext = np.maximum(obj.asset.extent, 1e-6)
        theta = np.concatenate([
            np.full(3, 0.005),
            np.full(3, math.radians(2.0)),
            0.1 * ext,
            [0.05],
            [0.1 * obj.mass],
        ])
        return cls(theta, n)

    def scaled(self, c: float) -> "PerturbationSpec":
        return PerturbationSpec(self.theta * c, self.n)


@dataclass
class StabilityDataset:
    x: np.ndarray  # (N, 11)
    y: np.ndarray  # (N,) int, 1 = fell
    object_id: str = ""
    states: list[SceneState] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class StabilityEstimate:
    p_fail: float
    effective_weight: float
    sample_count: int

    def to_json(self) -> dict:
        return {"p_fail": self.p_fail, "effective_weight": self.effective_weight, "sample_count": self.sample_count}


def apply_perturbation(obj: PlacedObject, x: np.ndarray) -> PlacedObject | None:
    """The perturbed object, or None when ``x`` leaves the admissible ranges.

    The COM range constrains only axes where the asset declares a non-empty
    interval; unannotated assets (zero-width ranges) accept any shift.
    """
    x = np.asarray(x, dtype=float)
    mass = obj.mass + x[10]
    mu = obj.friction + x[9]
    if not mass > 0 or mu < 0:
        return None
    com = np.asarray(obj.com_shift) + x[6:9]
    for axis, (lo, hi) in enumerate(obj.asset.com_shift_range):
        if hi > lo and not lo <= com[axis] <= hi:
            return None
    tilt = Rotation.from_rotvec(x[3:6]) * Rotation.from_rotvec(np.asarray(obj.tilt, dtype=float))
    pose = obj.pose.translated(*x[:3])
    return replace(
        obj,
        pose=pose,
        mass=float(mass),
        friction=float(mu),
        com_shift=tuple(float(v) for v in com),
        tilt=tuple(float(v) for v in tilt.as_rotvec()),
    )


def _draw(obj: PlacedObject, spec: PerturbationSpec, rng: np.random.Generator):
    for _ in range(MAX_REJECTIONS):
        x = rng.normal(0.0, spec.theta)
        out = apply_perturbation(obj, x)
        if out is not None:
            return x, out
    raise RejectionLimit(f"{obj.id}: no admissible perturbation in {MAX_REJECTIONS} draws")


def sample_dataset(
    scene: SceneState,
    object_id: str,
    spec: PerturbationSpec,
    backend: SimulationBackend,
    seed: int = 0,
) -> StabilityDataset:
    """Draw ``spec.n`` perturbations of one object and label each by settling.

    Draws that break mass, friction or COM ranges are redrawn, which truncates
    the Gaussian to the admissible region.
    """
    rng = np.random.default_rng([seed, 5])
    base = scene[object_id]
    xs, ys, states = [], [], []
    for _ in range(spec.n):
        x, obj = _draw(base, spec, rng)
        trial = scene.copy()
        trial.replace(obj)
        result = backend.settle(trial)
        xs.append(x)
        ys.append(1 if result.any_fell else 0)
        settled = trial.copy()
        for oid, pose in result.poses.items():
            settled.replace(replace(settled[oid], pose=pose))
        states.append(settled)
    return StabilityDataset(np.array(xs).reshape(-1, DIM), np.array(ys, dtype=np.int64), object_id, states)


def kernel_weights(query: np.ndarray, data: StabilityDataset, spec: PerturbationSpec) -> np.ndarray:
    z = (data.x - np.asarray(query, dtype=float)) / spec.theta
    return np.exp(-0.5 * np.einsum("ij,ij->i", z, z))


def estimate_p_fail(query, data: StabilityDataset, spec: PerturbationSpec) -> StabilityEstimate:
    """Kernel-weighted fraction of failing samples around ``query``.

    Raises:
        ValueError: empty dataset.
        DegenerateWeights: all weights are zero (query far from every sample).
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    w = kernel_weights(query, data, spec)
    n = float(w.sum())
    if n <= 0.0:
        raise DegenerateWeights("all kernel weights underflowed")
    s = float(w @ data.y)
    return StabilityEstimate(min(1.0, max(0.0, s / n)), n, len(data))


@dataclass
class InstabilityResult:
    state: SceneState
    p_fail_initial: float
    p_fail_final: float
    history: list[float] = field(default_factory=list)
    no_stable_sample: bool = False
    confirmed_stable: bool = True


def nominal_p_fail(scene: SceneState, object_id: str, spec: PerturbationSpec, backend, seed: int = 0) -> float:
    data = sample_dataset(scene, object_id, spec, backend, seed)
    return estimate_p_fail(np.zeros(DIM), data, spec).p_fail


def optimize_instability(
    scene: SceneState,
    object_id: str,
    spec: PerturbationSpec,
    backend: SimulationBackend,
    iterations: int = 5,
    seed: int = 0,
) -> InstabilityResult:
    """Walk the object toward fragile configurations that still stand.

    Each round samples around the current centre, keeps the standing samples,
    and moves to the one with the highest estimated failure probability.
    If every sample of a round falls, the previous centre is returned with
    ``no_stable_sample`` set.
    """
    center = scene
    data = sample_dataset(center, object_id, spec, backend, seed)
    initial = estimate_p_fail(np.zeros(DIM), data, spec).p_fail
    history = [initial]
    flag = False
    for it in range(iterations):
        if it > 0:
            data = sample_dataset(center, object_id, spec, backend, seed + 7919 * it)
        stable = np.nonzero(data.y == 0)[0]
        if len(stable) == 0:
            flag = True
            break
        scores = [estimate_p_fail(data.x[j], data, spec).p_fail for j in stable]
        best = int(stable[int(np.argmax(scores))])
        center = data.states[best]
        history.append(float(max(scores)))
        log.debug("instability round %d: p_fail %.3f", it, history[-1])
    # Same draws as the initial estimate (common random numbers) so the
    # comparison reflects the move, not sampling noise.
    final_data = sample_dataset(center, object_id, spec, backend, seed)
    final = estimate_p_fail(np.zeros(DIM), final_data, spec).p_fail
    confirmed = not backend.settle(center).any_fell
    return InstabilityResult(center, initial, final, history, flag, confirmed)
