"""Coarse-to-fine text-driven human motion synthesis."""

__version__ = "0.1.0"

from .hierarchy import ScaleHierarchy
from .motion import FeatureLayout, MotionSequence, layout_for_scale
from .scales import abstract_positions, build_multiscale, derive_scale_features

__all__ = [
    "ScaleHierarchy",
    "FeatureLayout",
    "MotionSequence",
    "layout_for_scale",
    "abstract_positions",
    "build_multiscale",
    "derive_scale_features",
]
