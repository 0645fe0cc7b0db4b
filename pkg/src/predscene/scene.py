"""Scene state shared by the solvers, the physics backend and the feedback system."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import AssetRecord
from .geometry import Footprint, Pose, asset_footprint, posed_bounds


@dataclass(frozen=True)
class Bounds2D:
    """Extent of the supporting surface ("root") and the height of its top."""

    min_x: float
    max_x: float
    min_y: float
    max_y: float
    top_z: float = 0.0

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise ValueError(f"degenerate bounds {self}")

    @classmethod
    def parse(cls, text: str) -> "Bounds2D":
        parts = [float(v) for v in text.split(",")]
        if len(parts) == 4:
            parts.append(0.0)
        if len(parts) != 5:
            raise ValueError("bounds must be minx,maxx,miny,maxy[,topz]")
        return cls(*parts)

    @property
    def width_x(self) -> float:
        return self.max_x - self.min_x

    @property
    def width_y(self) -> float:
        return self.max_y - self.min_y

    @property
    def shortest(self) -> float:
        return min(self.width_x, self.width_y)

    @property
    def area(self) -> float:
        return self.width_x * self.width_y

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y)

    def footprint(self) -> Footprint:
        return Footprint.rectangle(self.min_x, self.min_y, self.max_x, self.max_y)

    def to_list(self) -> list[float]:
        return [self.min_x, self.max_x, self.min_y, self.max_y, self.top_z]


@dataclass(frozen=True)
class PlacedObject:
    id: str
    asset: AssetRecord
    pose: Pose
    mass: float
    friction: float
    com_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # Axis-angle rotation applied on top of the yaw; non-zero only for perturbed states.
    tilt: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def nominal(cls, object_id: str, asset: AssetRecord, pose: Pose) -> "PlacedObject":
        return cls(
            object_id,
            asset,
            pose,
            asset.nominal_mass,
            asset.nominal_friction,
            tuple(float(v) for v in asset.nominal_com_shift()),
        )

    def with_pose(self, pose: Pose) -> "PlacedObject":
        return replace(self, pose=pose)

    def footprint(self) -> Footprint:
        x, y, _ = self.pose.position
        return asset_footprint(self.asset, self.pose.yaw, x, y)

    def bounds3d(self) -> tuple[np.ndarray, np.ndarray]:
        tilt = self.tilt if any(self.tilt) else None
        return posed_bounds(self.asset, self.pose, tilt)


@dataclass
class SceneState:
    """Placed objects on a bounded supporting surface.

    Objects are kept in insertion order, which is also the placement order.
    """

    bounds: Bounds2D
    objects: dict[str, PlacedObject] = field(default_factory=dict)
    resolution: float = 0.01

    def copy(self) -> "SceneState":
        return SceneState(self.bounds, dict(self.objects), self.resolution)

    def add(self, obj: PlacedObject) -> None:
        if obj.id in self.objects:
            raise ValueError(f"duplicate object id {obj.id}")
        self.objects[obj.id] = obj

    def replace(self, obj: PlacedObject) -> None:
        self.objects[obj.id] = obj

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects.values())

    def __getitem__(self, object_id: str) -> PlacedObject:
        return self.objects[object_id]

    def __contains__(self, object_id: str) -> bool:
        return object_id in self.objects

    def footprints(self) -> dict[str, Footprint]:
        return {oid: o.footprint() for oid, o in self.objects.items()}

    def on_surface(self, tol: float | None = None) -> list[PlacedObject]:
        """Objects whose lowest point rests at the surface height."""
        tol = self.resolution if tol is None else tol
        out = []
        for o in self.objects.values():
            lo, _ = o.bounds3d()
            if abs(lo[2] - self.bounds.top_z) <= tol:
                out.append(o)
        return out


# Physical parameters travel with the scene objects.
PhysicalState = SceneState
