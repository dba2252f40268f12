"""Motion sequence container and per-scale feature layouts.

Pose scales carry the redundant representation family used throughout the
package: root rotational velocity, planar root linear velocity, root height,
root-relative joint positions, per-bone 6D rotations, global joint velocities
and foot-contact flags. The single-node coarsest scale carries trajectory-only
features (position, velocity, root height).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class FeatureLayout:
    """Named contiguous slices of a feature vector."""

    names: tuple[str, ...]
    sizes: tuple[int, ...]

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    def slice(self, name: str) -> slice:
        start = 0
        for n, s in zip(self.names, self.sizes):
            if n == name:
                return slice(start, start + s)
            start += s
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def get(self, features: np.ndarray, name: str) -> np.ndarray:
        return features[..., self.slice(name)]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "sizes": list(self.sizes)}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureLayout":
        return cls(names=tuple(doc["names"]), sizes=tuple(doc["sizes"]))


def pose_layout(num_nodes: int, num_contacts: int) -> FeatureLayout:
    """Layout for a pose scale with ``num_nodes`` nodes.

    Non-root joint positions are root-relative in the ground plane (x/z);
    heights stay absolute. Rotations are one 6D block per bone segment of a
    spanning tree, hence ``num_nodes - 1`` segments.
    """
    if num_nodes < 2:
        raise ConfigurationError("pose layout needs at least 2 nodes")
    return FeatureLayout(
        names=(
            "root_rot_velocity",
            "root_linear_velocity",
            "root_height",
            "joint_positions",
            "joint_rotations",
            "joint_velocities",
            "foot_contacts",
        ),
        sizes=(
            1,
            2,
            1,
            (num_nodes - 1) * 3,
            (num_nodes - 1) * 6,
            num_nodes * 3,
            num_contacts,
        ),
    )


def trajectory_layout() -> FeatureLayout:
    """Layout for the single-node scale: pose-insensitive trajectory cues."""
    return FeatureLayout(
        names=("global_position", "velocity", "root_height"),
        sizes=(3, 3, 1),
    )


def layout_for_scale(hierarchy, scale: int) -> FeatureLayout:
    """Feature layout of a 1-based scale of a hierarchy."""
    num_nodes = hierarchy.num_joints(scale)
    if num_nodes == 1:
        return trajectory_layout()
    return pose_layout(num_nodes, len(hierarchy.contacts(scale)))


@dataclass
class MotionSequence:
    """A time-indexed feature matrix for one pose scale."""

    scale_index: int
    fps: float
    features: np.ndarray  # [num_frames, D] float32
    layout: FeatureLayout
    num_joints: int = field(default=0)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ShapeError(
                f"features must be [frames, dim], got shape {self.features.shape}"
            )

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def get(self, name: str) -> np.ndarray:
        return self.layout.get(self.features, name)

    def validate(self) -> None:
        if self.features.shape[1] != self.layout.dim:
            raise ShapeError(
                f"feature dim {self.features.shape[1]} does not match "
                f"layout dim {self.layout.dim}"
            )
        if not np.isfinite(self.features).all():
            raise ShapeError("features contain non-finite values")
        if "foot_contacts" in self.layout:
            contacts = self.get("foot_contacts")
            if contacts.size and (contacts.min() < 0.0 or contacts.max() > 1.0):
                raise ShapeError("foot-contact values outside [0, 1]")

    def copy(self) -> "MotionSequence":
        return MotionSequence(
            scale_index=self.scale_index,
            fps=self.fps,
            features=self.features.copy(),
            layout=self.layout,
            num_joints=self.num_joints,
        )
