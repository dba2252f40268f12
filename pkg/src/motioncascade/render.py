"""Export motions as viewer-friendly keypoint animations or strip images."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import InputError
from .hierarchy import ScaleHierarchy
from .motion import MotionSequence
from .scales import positions_from_sequence

KEYPOINT_SCHEMA = 1


def export_keypoints(
    motion: MotionSequence,
    hierarchy: ScaleHierarchy,
    path: str | Path,
) -> dict:
    """Write a JSON keypoint animation container and return the document."""
    positions = positions_from_sequence(motion, hierarchy)
    root = hierarchy.root_node(motion.scale_index)
    doc = {
        "schema_version": KEYPOINT_SCHEMA,
        "fps": motion.fps,
        "scale_index": motion.scale_index,
        "num_frames": motion.num_frames,
        "num_joints": positions.shape[1],
        "chains": [list(c) for c in hierarchy.chains(motion.scale_index)],
        "positions": positions.round(6).tolist(),
        "root_trajectory": positions[:, root].round(6).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return doc


def render_strip(
    motion: MotionSequence,
    hierarchy: ScaleHierarchy,
    path: str | Path,
    stride: int = 10,
) -> int:
    """Write a multi-panel stick-figure strip image; returns the panel count."""
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")
    positions = positions_from_sequence(motion, hierarchy)
    frames = list(range(0, motion.num_frames, stride))
    chains = hierarchy.chains(motion.scale_index)

    fig, axes = plt.subplots(
        1, len(frames), figsize=(2.0 * len(frames), 3.0), squeeze=False
    )
    for ax, f in zip(axes[0], frames):
        pose = positions[f]
        if chains:
            for chain in chains:
                ax.plot(pose[list(chain), 2], pose[list(chain), 1], "o-", ms=2)
        else:
            ax.plot(pose[:, 2], pose[:, 1], "o")
        ax.set_title(f"t={f}", fontsize=8)
        ax.set_aspect("equal")
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return len(frames)
