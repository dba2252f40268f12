"""Self-describing binary container for motion sequences.

Layout: 4-byte magic, uint32 header length, UTF-8 JSON header, little-endian
float32 payload, uint32 CRC32 of the payload. The header carries the schema
version, scale index, fps, matrix shape and the feature layout, so files are
portable across languages and bit-exact on round trip.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatVersionError, IntegrityError
from .motion import FeatureLayout, MotionSequence

MAGIC = b"MOCB"
SCHEMA_VERSION = 1


def save_motion(motion: MotionSequence, path: str | Path) -> None:
    features = np.ascontiguousarray(motion.features, dtype="<f4")
    header = {
        "schema_version": SCHEMA_VERSION,
        "scale_index": motion.scale_index,
        "fps": motion.fps,
        "num_frames": motion.num_frames,
        "dim": motion.dim,
        "num_joints": motion.num_joints,
        "layout": motion.layout.to_dict(),
        "dtype": "<f4",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = features.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_motion(path: str | Path) -> MotionSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise IntegrityError(f"{path}: not a motion container")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end + 4:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header") from exc

    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatVersionError(
            f"{path}: schema version {version!r} unsupported "
            f"(current: {SCHEMA_VERSION})"
        )

    payload = blob[header_end:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    expected = header["num_frames"] * header["dim"] * 4
    if len(payload) != expected:
        raise IntegrityError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise IntegrityError(f"{path}: payload checksum mismatch")

    features = np.frombuffer(payload, dtype="<f4").reshape(
        header["num_frames"], header["dim"]
    )
    return MotionSequence(
        scale_index=header["scale_index"],
        fps=header["fps"],
        features=features.copy(),
        layout=FeatureLayout.from_dict(header["layout"]),
        num_joints=header.get("num_joints", 0),
    )
