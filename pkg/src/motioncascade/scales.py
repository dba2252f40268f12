"""Skeleton abstraction operators: fine poses -> coarse body-part motions.

Coarse node positions are (weighted) means of the fine joints they absorb.
``build_multiscale`` abstracts step by step, carrying member counts as
weights so every coarse node equals the direct mean over its constituent
scale-1 joints exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, InsufficientDataError, ShapeError
from .hierarchy import ScaleHierarchy, validate_partition
from .motion import MotionSequence, layout_for_scale

DEFAULT_CONTACT_THRESHOLD = 0.05  # node displacement per frame => contact

_UP = np.array([0.0, 1.0, 0.0])
_FALLBACK = np.array([1.0, 0.0, 0.0])


def abstract_positions(
    positions: np.ndarray,
    grouping,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Average fine node positions into coarse body-part node positions.

    ``positions`` is [frames, J, 3] (a leading frame axis is optional).
    With ``weights`` (one per fine node) the average is weighted, which lets
    recursive abstraction reproduce the direct all-joint mean.
    """
    positions = np.asarray(positions, dtype=np.float64)
    squeeze = positions.ndim == 2
    if squeeze:
        positions = positions[None]
    if positions.ndim != 3 or positions.shape[-1] != 3:
        raise ShapeError(f"positions must be [frames, J, 3], got {positions.shape}")
    num_fine = positions.shape[1]
    validate_partition(grouping, num_fine)
    if weights is None:
        weights = np.ones(num_fine)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (num_fine,):
            raise ShapeError(f"weights must have shape ({num_fine},)")

    coarse = np.empty((positions.shape[0], len(grouping), 3))
    for g, group in enumerate(grouping):
        idx = list(group)
        w = weights[idx]
        coarse[:, g] = (positions[:, idx] * w[None, :, None]).sum(axis=1) / w.sum()
    return coarse[0] if squeeze else coarse


def group_weights(grouping, weights: np.ndarray | None = None) -> np.ndarray:
    """Total fine-node weight absorbed by each coarse group."""
    if weights is None:
        return np.array([float(len(g)) for g in grouping])
    weights = np.asarray(weights, dtype=np.float64)
    return np.array([weights[list(g)].sum() for g in grouping])


def segment_rotations_6d(directions: np.ndarray) -> np.ndarray:
    """6D continuous rotation (first two basis vectors) per bone direction.

    The third basis vector is the unit bone direction; the first two complete
    a right-handed frame built against the world up axis. Zero-length bones
    get the canonical up-facing frame.
    """
    d = np.asarray(directions, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    b3 = np.where(norm > 1e-9, d / np.maximum(norm, 1e-12), _UP)
    ref = np.where(
        np.abs(b3 @ _UP)[..., None] > 0.999, _FALLBACK, _UP
    )
    b1 = np.cross(ref, b3)
    b1 /= np.maximum(np.linalg.norm(b1, axis=-1, keepdims=True), 1e-12)
    b2 = np.cross(b3, b1)
    return np.concatenate([b1, b2], axis=-1)


def _forward_diff(values: np.ndarray, fps: float) -> np.ndarray:
    """Forward finite difference scaled by fps; last frame copies previous."""
    out = np.empty_like(values)
    out[:-1] = (values[1:] - values[:-1]) * fps
    out[-1] = out[-2]
    return out


def _facing_velocity(positions: np.ndarray, pair, fps: float) -> np.ndarray:
    """Yaw rate of the body facing direction, from a left/right node pair."""
    if pair is None:
        return np.zeros(positions.shape[0])
    left, right = pair
    across = positions[:, right] - positions[:, left]
    # facing = across rotated -90 deg about the up axis
    angle = np.arctan2(across[:, 2], -across[:, 0])
    delta = np.diff(angle)
    delta = np.arctan2(np.sin(delta), np.cos(delta))  # wrap to (-pi, pi]
    vel = np.empty_like(angle)
    vel[:-1] = delta * fps
    vel[-1] = vel[-2]
    return vel


def contact_flags(
    positions: np.ndarray,
    node_indices,
    threshold: float = DEFAULT_CONTACT_THRESHOLD,
) -> np.ndarray:
    """Threshold per-frame node displacement into binary contact flags."""
    if len(node_indices) == 0:
        return np.zeros((positions.shape[0], 0))
    nodes = positions[:, list(node_indices)]
    disp = np.linalg.norm(np.diff(nodes, axis=0), axis=-1)
    disp = np.concatenate([disp, disp[-1:]], axis=0)
    return (disp < threshold).astype(np.float64)


def sequence_from_positions(
    positions: np.ndarray,
    hierarchy: ScaleHierarchy,
    scale: int,
    fps: float,
    contacts: np.ndarray | None = None,
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD,
) -> MotionSequence:
    """Build the feature MotionSequence of one scale from node positions."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[-1] != 3:
        raise ShapeError(f"positions must be [frames, J, 3], got {positions.shape}")
    num_frames, num_nodes = positions.shape[:2]
    if num_nodes != hierarchy.num_joints(scale):
        raise ShapeError(
            f"scale {scale} expects {hierarchy.num_joints(scale)} nodes, "
            f"got {num_nodes}"
        )
    if num_frames < 2:
        raise InsufficientDataError("need at least 2 frames to derive velocities")

    layout = layout_for_scale(hierarchy, scale)
    root = hierarchy.root_node(scale)
    # canonical placement: root starts at the ground-plane origin
    origin = positions[0, root].copy()
    origin[1] = 0.0
    pos = positions - origin

    feats = np.zeros((num_frames, layout.dim))
    if num_nodes == 1:
        vel = _forward_diff(pos[:, 0], fps)
        feats[:, layout.slice("global_position")] = pos[:, 0]
        feats[:, layout.slice("velocity")] = vel
        feats[:, layout.slice("root_height")] = pos[:, 0, 1:2]
    else:
        vel = _forward_diff(pos, fps)
        feats[:, layout.slice("root_rot_velocity")] = _facing_velocity(
            pos, hierarchy.facing_pair(scale), fps
        )[:, None]
        feats[:, layout.slice("root_linear_velocity")] = vel[:, root][:, [0, 2]]
        feats[:, layout.slice("root_height")] = pos[:, root, 1:2]

        non_root = [j for j in range(num_nodes) if j != root]
        root_plane = pos[:, root].copy()
        root_plane[:, 1] = 0.0
        feats[:, layout.slice("joint_positions")] = (
            pos[:, non_root] - root_plane[:, None, :]
        ).reshape(num_frames, -1)

        segments = hierarchy.chain_segments(scale)
        directions = np.stack(
            [pos[:, child] - pos[:, parent] for parent, child in segments], axis=1
        )
        feats[:, layout.slice("joint_rotations")] = segment_rotations_6d(
            directions
        ).reshape(num_frames, -1)
        feats[:, layout.slice("joint_velocities")] = vel.reshape(num_frames, -1)

        if contacts is None:
            contacts = contact_flags(
                pos, hierarchy.contacts(scale), contact_threshold
            )
        contacts = np.asarray(contacts, dtype=np.float64)
        if contacts.shape != (num_frames, len(hierarchy.contacts(scale))):
            raise ShapeError(
                f"contacts must be [frames, {len(hierarchy.contacts(scale))}]"
            )
        feats[:, layout.slice("foot_contacts")] = contacts

    seq = MotionSequence(
        scale_index=scale,
        fps=fps,
        features=feats.astype(np.float32),
        layout=layout,
        num_joints=num_nodes,
    )
    seq.validate()
    return seq


def derive_scale_features(
    coarse_positions: np.ndarray,
    hierarchy: ScaleHierarchy,
    scale: int,
    fps: float,
    contacts: np.ndarray | None = None,
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD,
) -> MotionSequence:
    """Extrapolate rotations, velocities and contacts for a coarse scale."""
    if scale < 2 or scale > hierarchy.num_scales:
        raise ContractError(f"scale must be in 2..{hierarchy.num_scales}, got {scale}")
    return sequence_from_positions(
        coarse_positions, hierarchy, scale, fps, contacts, contact_threshold
    )


def positions_from_sequence(seq: MotionSequence, hierarchy: ScaleHierarchy) -> np.ndarray:
    """Recover canonical global node positions [frames, J, 3] from features."""
    layout = seq.layout
    feats = seq.features.astype(np.float64)
    num_frames = seq.num_frames
    if "global_position" in layout:
        return layout.get(feats, "global_position").reshape(num_frames, 1, 3)

    scale = seq.scale_index
    num_nodes = hierarchy.num_joints(scale)
    root = hierarchy.root_node(scale)
    lin_vel = layout.get(feats, "root_linear_velocity")
    root_xz = np.zeros((num_frames, 2))
    root_xz[1:] = np.cumsum(lin_vel[:-1] / seq.fps, axis=0)

    positions = np.zeros((num_frames, num_nodes, 3))
    positions[:, root, 0] = root_xz[:, 0]
    positions[:, root, 1] = layout.get(feats, "root_height")[:, 0]
    positions[:, root, 2] = root_xz[:, 1]

    local = layout.get(feats, "joint_positions").reshape(num_frames, num_nodes - 1, 3)
    non_root = [j for j in range(num_nodes) if j != root]
    offset = np.zeros((num_frames, 1, 3))
    offset[:, 0, 0] = root_xz[:, 0]
    offset[:, 0, 2] = root_xz[:, 1]
    positions[:, non_root] = local + offset
    return positions


def build_multiscale(
    motion: MotionSequence,
    hierarchy: ScaleHierarchy,
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD,
) -> list[MotionSequence]:
    """Abstract a scale-1 motion step by step into every coarser scale."""
    if motion.scale_index != 1:
        raise ContractError("build_multiscale expects a scale-1 motion")
    motion.validate()

    sequences = [motion]
    positions = positions_from_sequence(motion, hierarchy)
    weights = np.ones(positions.shape[1])
    for scale in range(2, hierarchy.num_scales + 1):
        grouping = hierarchy.grouping(scale - 1)
        positions = abstract_positions(positions, grouping, weights)
        weights = group_weights(grouping, weights)
        sequences.append(
            derive_scale_features(
                positions, hierarchy, scale, motion.fps,
                contact_threshold=contact_threshold,
            )
        )
    return sequences
