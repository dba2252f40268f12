"""Desk-scale paired text-motion corpus.

Motions are kinematic compositions: parametric root trajectories with
piecewise plant-and-swing foot schedules and sinusoidal limb phases on a
22-joint skeleton. Every entry carries templated English descriptions that
are mutually consistent with its generator parameters, plus the ground-truth
foot-contact schedule and root trajectory in its provenance.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, ShapeError
from .hierarchy import ScaleHierarchy
from .motion import MotionSequence
from .motion_io import load_motion, save_motion
from .scales import sequence_from_positions

DEFAULT_FAMILIES = ("walk", "run", "jump", "turn", "wave", "sit")

# standing base pose, (x, y, z) in meters; x = left, y = up, z = forward
BASE_POSE = np.array([
    [0.00, 0.95, 0.00],   # 0 pelvis
    [0.10, 0.90, 0.00],   # 1 l_hip
    [-0.10, 0.90, 0.00],  # 2 r_hip
    [0.00, 1.08, 0.00],   # 3 spine1
    [0.10, 0.50, 0.00],   # 4 l_knee
    [-0.10, 0.50, 0.00],  # 5 r_knee
    [0.00, 1.20, 0.00],   # 6 spine2
    [0.10, 0.10, 0.00],   # 7 l_ankle
    [-0.10, 0.10, 0.00],  # 8 r_ankle
    [0.00, 1.32, 0.00],   # 9 spine3
    [0.10, 0.02, 0.12],   # 10 l_foot
    [-0.10, 0.02, 0.12],  # 11 r_foot
    [0.00, 1.45, 0.00],   # 12 neck
    [0.06, 1.40, 0.00],   # 13 l_collar
    [-0.06, 1.40, 0.00],  # 14 r_collar
    [0.00, 1.62, 0.00],   # 15 head
    [0.18, 1.40, 0.00],   # 16 l_shoulder
    [-0.18, 1.40, 0.00],  # 17 r_shoulder
    [0.20, 1.12, 0.00],   # 18 l_elbow
    [-0.20, 1.12, 0.00],  # 19 r_elbow
    [0.22, 0.86, 0.00],   # 20 l_wrist
    [-0.22, 0.86, 0.00],  # 21 r_wrist
])

_SPEED_RANGES = {
    "walk": (0.8, 1.6),
    "run": (2.0, 3.5),
    "turn": (0.6, 1.2),
    "jump": (0.4, 0.9),
    "wave": (0.5, 1.5),
    "sit": (0.2, 0.5),
}

_ADVERBS = {
    "slow": ("slowly", "at a slow pace"),
    "moderate": ("at a moderate pace", "at a steady pace"),
    "fast": ("quickly", "at a fast pace"),
}

_TEMPLATES = {
    "walk": (
        "a person walks forward {adv}",
        "someone is walking straight ahead {adv}",
        "a person walks in a straight line {adv}",
        "the person walks ahead {adv}",
    ),
    "run": (
        "a person runs forward {adv}",
        "someone is running straight ahead {adv}",
        "a person runs in a straight line {adv}",
        "the person runs ahead {adv}",
    ),
    "jump": (
        "a person jumps up and down {adv}",
        "someone is jumping in place {adv}",
        "a person jumps repeatedly on the spot {adv}",
        "the person jumps vertically {adv}",
    ),
    "turn": (
        "a person turns in a circle while stepping {adv}",
        "someone is turning around on the spot {adv}",
        "a person turns along a curved path {adv}",
        "the person turns their whole body {adv}",
    ),
    "wave": (
        "a person waves with their right hand {adv}",
        "someone is waving their arm {adv}",
        "a person raises a hand and waves {adv}",
        "the person waves in greeting {adv}",
    ),
    "sit": (
        "a person sits down on a chair {adv}",
        "someone is sitting down {adv}",
        "a person lowers themselves to sit {adv}",
        "the person sits down {adv}",
    ),
}

# parse priority matters: "turn" templates never contain other stems
_FAMILY_STEMS = (
    ("turn", "turn"),
    ("walk", "walk"),
    ("run", "run"),
    ("jump", "jump"),
    ("wave", "wav"),
    ("sit", "sit"),
)


@dataclass(frozen=True)
class GeneratorConfig:
    families: tuple[str, ...] = DEFAULT_FAMILIES
    min_frames: int = 40
    max_frames: int = 60
    fps: float = 20.0

    def validate(self) -> None:
        if len(self.families) < 2:
            raise ConfigurationError("need at least 2 motion families")
        unknown = [f for f in self.families if f not in _SPEED_RANGES]
        if unknown:
            raise ConfigurationError(f"unknown motion families: {unknown}")
        if self.min_frames < 2 or self.max_frames < self.min_frames:
            raise ConfigurationError("invalid frame range")


@dataclass
class CorpusEntry:
    entry_id: str
    motion: MotionSequence
    texts: list[str]
    action_label: str | None
    provenance: dict

    def validate(self) -> None:
        if not self.texts or any(not t.strip() for t in self.texts):
            raise InputError(f"{self.entry_id}: entry needs non-empty texts")
        self.motion.validate()


def speed_bucket(family: str, speed: float) -> str:
    lo, hi = _SPEED_RANGES[family]
    u = (speed - lo) / (hi - lo)
    if u < 1.0 / 3.0:
        return "slow"
    if u < 2.0 / 3.0:
        return "moderate"
    return "fast"


def parse_text(text: str) -> tuple[str, str]:
    """Recover (family, speed bucket) from a templated description."""
    low = text.lower()
    family = next((fam for fam, stem in _FAMILY_STEMS if stem in low), None)
    if family is None:
        raise InputError(f"no motion family recognized in {text!r}")
    if "slow" in low:
        bucket = "slow"
    elif "moderate" in low or "steady" in low:
        bucket = "moderate"
    elif "fast" in low or "quick" in low:
        bucket = "fast"
    else:
        raise InputError(f"no speed bucket recognized in {text!r}")
    return family, bucket


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _foot_track(
    times: np.ndarray,
    speed: float,
    cycle_freq: float,
    duty: float,
    phase_offset: float,
    lift: float,
):
    """Plant-and-swing forward coordinate of one foot along a straight path.

    Returns (s, y_lift, contact): during stance the foot holds its plant
    position exactly (zero world speed), during swing it interpolates to the
    next plant with a vertical lift arc.
    """
    phase = times * cycle_freq - phase_offset
    cycle = np.floor(phase)
    frac = phase - cycle
    contact = frac < duty

    def plant(n):
        # plant at the forward position the root passes mid-stance
        t_mid = (n + phase_offset + duty / 2.0) / cycle_freq
        return speed * t_mid

    s = np.empty_like(times)
    y = np.zeros_like(times)
    cur = plant(cycle)
    nxt = plant(cycle + 1.0)
    u = (frac - duty) / (1.0 - duty)
    swing = _smoothstep(u)
    s = np.where(contact, cur, cur + swing * (nxt - cur))
    y = np.where(contact, 0.0, lift * np.sin(np.pi * np.clip(u, 0.0, 1.0)))
    return s, y, contact.astype(np.float64)


def _arc_map(x_lat: np.ndarray, s: np.ndarray, curvature: float):
    """Map path coordinates (lateral, arc length) to world (x, z)."""
    if abs(curvature) < 1e-9:
        return x_lat, s
    k = curvature
    psi = k * s
    px = (1.0 - np.cos(psi)) / k
    pz = np.sin(psi) / k
    return px + x_lat * np.cos(psi), pz - x_lat * np.sin(psi)


def _locomotion(times, params):
    """Walk / run / turn: straight or curved path with a gait schedule."""
    speed = params["speed"]
    duty = params["duty"]
    freq = params["cycle_freq"]
    lift = params["lift"]
    curvature = params.get("curvature", 0.0)
    num_frames = len(times)

    pos = np.tile(BASE_POSE[None], (num_frames, 1, 1))
    # path coordinates: column 0 lateral, column 2 forward
    s_root = speed * times
    bob = params["bob"] * np.sin(4.0 * np.pi * freq * times)

    s_l, y_l, c_l = _foot_track(times, speed, freq, duty, 0.0, lift)
    s_r, y_r, c_r = _foot_track(times, speed, freq, duty, 0.5, lift)

    lat = np.zeros((num_frames, 22))
    fwd = np.zeros((num_frames, 22))
    lat[:] = BASE_POSE[:, 0]
    fwd[:] = s_root[:, None] + BASE_POSE[:, 2]
    y = np.tile(BASE_POSE[:, 1], (num_frames, 1))

    # trunk and root bob
    trunk = [0, 3, 6, 9, 12, 13, 14, 15, 16, 17, 1, 2]
    y[:, trunk] += bob[:, None]

    # feet and ankles follow the plant/swing schedule
    for foot, ankle, s_f, y_f in ((10, 7, s_l, y_l), (11, 8, s_r, y_r)):
        fwd[:, foot] = s_f + BASE_POSE[foot, 2]
        y[:, foot] = BASE_POSE[foot, 1] + y_f
        fwd[:, ankle] = s_f + BASE_POSE[ankle, 2] - 0.12
        y[:, ankle] = BASE_POSE[ankle, 1] + y_f

    # knees midway between hip and ankle, bulging forward
    for hip, knee, ankle in ((1, 4, 7), (2, 5, 8)):
        fwd[:, knee] = 0.5 * (fwd[:, hip] + fwd[:, ankle]) + 0.08
        y[:, knee] = 0.5 * (y[:, hip] + y[:, ankle])

    # arm swing opposes the same-side leg
    swing = params["arm_swing"] * np.sin(2.0 * np.pi * (freq * times))
    for wrist, elbow, sign in ((20, 18, -1.0), (21, 19, 1.0)):
        fwd[:, wrist] += sign * swing
        fwd[:, elbow] += sign * 0.5 * swing

    x_w, z_w = _arc_map(lat.ravel(), fwd.ravel(), curvature)
    pos[:, :, 0] = x_w.reshape(num_frames, 22)
    pos[:, :, 2] = z_w.reshape(num_frames, 22)
    pos[:, :, 1] = y
    contacts = np.stack([c_l, c_l, c_r, c_r], axis=1)
    return pos, contacts


def _jump(times, params):
    rate = params["speed"]
    num_frames = len(times)
    phase = times * rate
    frac = phase - np.floor(phase)
    ground = frac < 0.6
    u_air = np.clip((frac - 0.6) / 0.4, 0.0, 1.0)
    height = params["jump_height"] * np.sin(np.pi * u_air)
    crouch = -0.12 * np.sin(np.pi * np.clip(frac / 0.6, 0.0, 1.0))
    dy = np.where(ground, crouch, height)

    pos = np.tile(BASE_POSE[None], (num_frames, 1, 1))
    upper = [0, 1, 2, 3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21]
    pos[:, upper, 1] += dy[:, None]
    feet = [7, 8, 10, 11]
    pos[:, feet, 1] += np.where(ground, 0.0, height)[:, None]
    for hip, knee, ankle in ((1, 4, 7), (2, 5, 8)):
        pos[:, knee, 1] = 0.5 * (pos[:, hip, 1] + pos[:, ankle, 1])
        pos[:, knee, 2] = BASE_POSE[knee, 2] + np.where(ground, -2.0 * crouch, 0.0)
    c = ground.astype(np.float64)
    contacts = np.stack([c, c, c, c], axis=1)
    return pos, contacts


def _wave(times, params):
    rate = params["speed"]
    num_frames = len(times)
    pos = np.tile(BASE_POSE[None], (num_frames, 1, 1))
    osc = np.sin(2.0 * np.pi * rate * times)
    # right arm raised, waving laterally
    pos[:, 19] = BASE_POSE[17] + np.array([-0.12, 0.05, 0.10])
    pos[:, 21, 0] = pos[:, 19, 0] - 0.10 + 0.15 * osc
    pos[:, 21, 1] = pos[:, 19, 1] + 0.30
    pos[:, 21, 2] = pos[:, 19, 2] + 0.05
    contacts = np.ones((num_frames, 4))
    return pos, contacts


def _sit(times, params):
    rate = params["speed"]
    num_frames = len(times)
    u = _smoothstep(times * rate * 2.0)
    drop = 0.40 * u
    shift = 0.12 * u  # pelvis moves backward as it lowers
    pos = np.tile(BASE_POSE[None], (num_frames, 1, 1))
    upper = [0, 1, 2, 3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21]
    pos[:, upper, 1] -= drop[:, None]
    pos[:, upper, 2] -= shift[:, None]
    for hip, knee, ankle in ((1, 4, 7), (2, 5, 8)):
        pos[:, knee, 1] = 0.5 * (pos[:, hip, 1] + pos[:, ankle, 1]) + 0.05 * u
        pos[:, knee, 2] = 0.5 * (pos[:, hip, 2] + pos[:, ankle, 2]) + 0.15 * u
    contacts = np.ones((num_frames, 4))
    return pos, contacts


def synthesize_motion(family: str, speed: float, num_frames: int, fps: float,
                      curvature: float = 0.0):
    """Generate (positions [F, 22, 3], contact schedule [F, 4]) for a family."""
    times = np.arange(num_frames) / fps
    if family in ("walk", "run", "turn"):
        running = family == "run"
        params = {
            "speed": speed,
            "duty": 0.4 if running else 0.6,
            "cycle_freq": (1.0 + 0.25 * speed) if running else (0.8 + 0.3 * speed),
            "lift": 0.12 if running else 0.06,
            "bob": 0.04 if running else 0.02,
            "arm_swing": 0.18 if running else 0.10,
            "curvature": curvature if family == "turn" else 0.0,
        }
        return _locomotion(times, params)
    if family == "jump":
        return _jump(times, {"speed": speed, "jump_height": 0.25})
    if family == "wave":
        return _wave(times, {"speed": speed})
    if family == "sit":
        return _sit(times, {"speed": speed})
    raise ConfigurationError(f"unknown motion family {family!r}")


def _make_texts(family: str, bucket: str, rng: np.random.Generator) -> list[str]:
    templates = _TEMPLATES[family]
    count = int(rng.integers(1, 5))
    chosen = rng.choice(len(templates), size=min(count, len(templates)), replace=False)
    adverbs = _ADVERBS[bucket]
    return [
        templates[i].format(adv=adverbs[int(rng.integers(len(adverbs)))])
        for i in chosen
    ]


def generate_entry(
    entry_id: str,
    family: str,
    config: GeneratorConfig,
    seed: int,
    hierarchy: ScaleHierarchy | None = None,
) -> CorpusEntry:
    hierarchy = hierarchy or ScaleHierarchy.default()
    rng = np.random.default_rng(seed)
    lo, hi = _SPEED_RANGES[family]
    speed = float(rng.uniform(lo, hi))
    num_frames = int(rng.integers(config.min_frames, config.max_frames + 1))
    curvature = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0))

    positions, contacts = synthesize_motion(
        family, speed, num_frames, config.fps, curvature
    )
    motion = sequence_from_positions(
        positions, hierarchy, scale=1, fps=config.fps, contacts=contacts
    )
    bucket = speed_bucket(family, speed)
    texts = _make_texts(family, bucket, rng)

    root = positions[:, 0] - positions[0, 0] * np.array([1.0, 0.0, 1.0])
    provenance = {
        "family": family,
        "speed": speed,
        "speed_bucket": bucket,
        "num_frames": num_frames,
        "curvature": curvature if family == "turn" else 0.0,
        "seed": seed,
        "contact_schedule": contacts[:, [0, 2]].astype(int).tolist(),
        "root_trajectory": [[round(float(v), 6) for v in p] for p in root],
    }
    entry = CorpusEntry(
        entry_id=entry_id,
        motion=motion,
        texts=texts,
        action_label=family,
        provenance=provenance,
    )
    entry.validate()
    return entry


def generate_corpus(
    config: GeneratorConfig,
    seed: int,
    num_entries: int,
    hierarchy: ScaleHierarchy | None = None,
) -> list[CorpusEntry]:
    """Deterministic synthetic corpus with a balanced family mixture."""
    config.validate()
    hierarchy = hierarchy or ScaleHierarchy.default()
    root_seq = np.random.SeedSequence(seed)
    order_rng = np.random.default_rng(root_seq.spawn(1)[0])

    families = [config.families[i % len(config.families)] for i in range(num_entries)]
    order_rng.shuffle(families)
    child_seeds = root_seq.spawn(num_entries + 1)[1:]

    entries = []
    for i, family in enumerate(families):
        sub_seed = int(child_seeds[i].generate_state(1)[0])
        entries.append(
            generate_entry(f"entry_{i:05d}", family, config, sub_seed, hierarchy)
        )
    return entries


def split_of(entry_id: str, split_seed: int = 0) -> str:
    """Seed-stable 80/10/10 split by hashing the entry id."""
    digest = hashlib.sha256(f"{split_seed}:{entry_id}".encode()).digest()
    bucket = int.from_bytes(digest[:8], "big") % 100
    if bucket < 80:
        return "train"
    if bucket < 90:
        return "val"
    return "test"


def split_corpus(entries, split_seed: int = 0) -> dict[str, list[CorpusEntry]]:
    splits = {"train": [], "val": [], "test": []}
    for entry in entries:
        splits[split_of(entry.entry_id, split_seed)].append(entry)
    return splits


# ---------------------------------------------------------------------------
# normalization


STD_FLOOR = 1e-8


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "NormalizationStats":
        return cls(mean=np.array(doc["mean"]), std=np.array(doc["std"]))


def compute_normalization(sequences) -> NormalizationStats:
    """Per-dimension mean/std over every frame of same-scale sequences."""
    if not sequences:
        raise InputError("cannot compute statistics over an empty set")
    dims = {seq.dim for seq in sequences}
    if len(dims) != 1:
        raise ShapeError(f"mixed feature dims {sorted(dims)}")
    frames = np.concatenate([seq.features.astype(np.float64) for seq in sequences])
    return NormalizationStats(mean=frames.mean(axis=0), std=frames.std(axis=0))


def normalize(motion: MotionSequence, stats: NormalizationStats) -> MotionSequence:
    if motion.dim != stats.mean.shape[0]:
        raise ShapeError(
            f"stats dim {stats.mean.shape[0]} != motion dim {motion.dim}"
        )
    out = motion.copy()
    out.features = (
        (motion.features.astype(np.float64) - stats.mean) / stats.std
    ).astype(np.float32)
    return out


def denormalize(motion: MotionSequence, stats: NormalizationStats) -> MotionSequence:
    if motion.dim != stats.mean.shape[0]:
        raise ShapeError(
            f"stats dim {stats.mean.shape[0]} != motion dim {motion.dim}"
        )
    out = motion.copy()
    out.features = (
        motion.features.astype(np.float64) * stats.std + stats.mean
    ).astype(np.float32)
    return out


# ---------------------------------------------------------------------------
# corpus persistence


def save_corpus(entries, directory: str | Path) -> None:
    directory = Path(directory)
    (directory / "motions").mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for entry in entries:
            rel = f"motions/{entry.entry_id}.mocb"
            save_motion(entry.motion, directory / rel)
            record = {
                "id": entry.entry_id,
                "motion_path": rel,
                "texts": entry.texts,
                "label": entry.action_label,
                "provenance": entry.provenance,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_corpus(directory: str | Path) -> list[CorpusEntry]:
    directory = Path(directory)
    entries = []
    with open(directory / "manifest.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            entries.append(
                CorpusEntry(
                    entry_id=record["id"],
                    motion=load_motion(directory / record["motion_path"]),
                    texts=record["texts"],
                    action_label=record["label"],
                    provenance=record["provenance"],
                )
            )
    return entries
