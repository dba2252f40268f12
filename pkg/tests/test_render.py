"""Keypoint export and strip rendering."""
import json

import numpy as np
import pytest

from motioncascade.corpus import synthesize_motion
from motioncascade.errors import InputError
from motioncascade.hierarchy import ScaleHierarchy
from motioncascade.render import export_keypoints, render_strip
from motioncascade.scales import positions_from_sequence, sequence_from_positions


@pytest.fixture(scope="module")
def walk_motion():
    hierarchy = ScaleHierarchy.default()
    positions, contacts = synthesize_motion(
        "walk", speed=1.2, num_frames=80, fps=20.0
    )
    motion = sequence_from_positions(
        positions, hierarchy, scale=1, fps=20.0, contacts=contacts
    )
    return motion, hierarchy


def test_keypoint_export_document(tmp_path, walk_motion):
    motion, hierarchy = walk_motion
    path = tmp_path / "walk.json"
    doc = export_keypoints(motion, hierarchy, path)
    loaded = json.loads(path.read_text())
    assert loaded["schema_version"] == 1
    assert loaded["fps"] == 20.0
    assert loaded["num_frames"] == 80
    assert loaded["num_joints"] == 22
    assert len(loaded["positions"]) == 80
    assert len(loaded["positions"][0]) == 22
    assert len(loaded["root_trajectory"]) == 80
    assert loaded == json.loads(json.dumps(doc))


def test_keypoint_export_matches_feature_round_trip(tmp_path, walk_motion):
    # exported keypoints are exactly the positions recovered from features
    motion, hierarchy = walk_motion
    doc = export_keypoints(motion, hierarchy, tmp_path / "x.json")
    recovered = positions_from_sequence(motion, hierarchy)
    assert np.abs(np.array(doc["positions"]) - recovered).max() < 1e-4


def test_strip_panel_count(tmp_path, walk_motion):
    motion, hierarchy = walk_motion
    path = tmp_path / "strip.png"
    panels = render_strip(motion, hierarchy, path, stride=10)
    assert panels == 8  # 80 frames at stride 10
    assert path.stat().st_size > 0


def test_strip_stride_contract(tmp_path, walk_motion):
    motion, hierarchy = walk_motion
    with pytest.raises(InputError):
        render_strip(motion, hierarchy, tmp_path / "x.png", stride=0)


def test_coarse_scale_export(tmp_path):
    # the trajectory-only scale renders as a single moving point
    from motioncascade.scales import build_multiscale

    hierarchy = ScaleHierarchy.default()
    positions, contacts = synthesize_motion(
        "run", speed=2.5, num_frames=50, fps=20.0
    )
    motion = sequence_from_positions(
        positions, hierarchy, scale=1, fps=20.0, contacts=contacts
    )
    coarse = build_multiscale(motion, hierarchy)[-1]
    assert coarse.scale_index == 4
    doc = export_keypoints(coarse, hierarchy, tmp_path / "coarse.json")
    assert doc["num_joints"] == 1
    panels = render_strip(coarse, hierarchy, tmp_path / "coarse.png", stride=25)
    assert panels == 2
