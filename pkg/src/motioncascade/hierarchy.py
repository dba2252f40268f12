"""Multi-scale skeleton hierarchy: joint groupings, chains, contact nodes.

The hierarchy is data, not code: it is loaded from a versioned YAML document
so alternate groupings (e.g. an upper/lower body split) can be swapped in
without touching the abstraction operators.
"""
from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError, FormatVersionError

HIERARCHY_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScaleHierarchy:
    """Joint grouping structure mapping fine joints to coarse body-part nodes.

    ``groupings[i]`` partitions the nodes of scale ``i+1`` (1-based) into the
    groups that become the nodes of scale ``i+2``. ``kinematic_chains[i]``,
    ``contact_nodes[i]``, ``facing_pairs[i]`` and ``root_nodes[i]`` describe
    scale ``i+1`` itself.
    """

    joints_per_scale: tuple[int, ...]
    groupings: tuple[tuple[tuple[int, ...], ...], ...]
    kinematic_chains: tuple[tuple[tuple[int, ...], ...], ...]
    contact_nodes: tuple[tuple[int, ...], ...]
    facing_pairs: tuple[tuple[int, int] | None, ...]
    root_nodes: tuple[int, ...] = field(default=())
    schema_version: int = HIERARCHY_SCHEMA_VERSION

    @property
    def num_scales(self) -> int:
        return len(self.joints_per_scale)

    def num_joints(self, scale: int) -> int:
        """Node count of a 1-based scale index."""
        return self.joints_per_scale[scale - 1]

    def grouping(self, scale: int) -> tuple[tuple[int, ...], ...]:
        """Partition used for the transition scale -> scale + 1."""
        return self.groupings[scale - 1]

    def chains(self, scale: int) -> tuple[tuple[int, ...], ...]:
        return self.kinematic_chains[scale - 1]

    def contacts(self, scale: int) -> tuple[int, ...]:
        return self.contact_nodes[scale - 1]

    def facing_pair(self, scale: int) -> tuple[int, int] | None:
        return self.facing_pairs[scale - 1]

    def root_node(self, scale: int) -> int:
        if not self.root_nodes:
            return 0
        return self.root_nodes[scale - 1]

    def chain_segments(self, scale: int) -> list[tuple[int, int]]:
        """All (parent, child) bone segments of a scale, in chain order."""
        segments = []
        for chain in self.chains(scale):
            segments.extend(zip(chain[:-1], chain[1:]))
        return segments

    def validate(self) -> None:
        jps = self.joints_per_scale
        if len(jps) < 2:
            raise ConfigurationError("hierarchy needs at least 2 scales")
        if any(a <= b for a, b in zip(jps, jps[1:])):
            raise ConfigurationError(
                f"joints_per_scale must be strictly decreasing, got {jps}"
            )
        if jps[-1] != 1:
            raise ConfigurationError("coarsest scale must have exactly 1 node")
        if len(self.groupings) != len(jps) - 1:
            raise ConfigurationError(
                f"expected {len(jps) - 1} groupings, got {len(self.groupings)}"
            )
        for i, grouping in enumerate(self.groupings):
            validate_partition(grouping, jps[i])
            if len(grouping) != jps[i + 1]:
                raise ConfigurationError(
                    f"transition {i + 1}->{i + 2}: {len(grouping)} groups "
                    f"but {jps[i + 1]} coarse nodes declared"
                )
        for per_scale, name in (
            (self.kinematic_chains, "kinematic_chains"),
            (self.contact_nodes, "contact_nodes"),
            (self.facing_pairs, "facing_pairs"),
        ):
            if len(per_scale) != len(jps):
                raise ConfigurationError(f"{name} must list every scale")
        for i, chains in enumerate(self.kinematic_chains):
            n = jps[i]
            children = [c for chain in chains for c in chain[1:]]
            flat = [c for chain in chains for c in chain]
            if any(c < 0 or c >= n for c in flat):
                raise ConfigurationError(f"scale {i + 1} chain index out of range")
            if n > 1:
                root = self.root_node(i + 1)
                expected = set(range(n)) - {root}
                if len(children) != len(set(children)) or set(children) != expected:
                    raise ConfigurationError(
                        f"scale {i + 1} chains must form a spanning tree "
                        f"rooted at node {root}"
                    )
        for i, nodes in enumerate(self.contact_nodes):
            if any(c < 0 or c >= jps[i] for c in nodes):
                raise ConfigurationError(f"scale {i + 1} contact node out of range")
        for i, pair in enumerate(self.facing_pairs):
            if pair is not None and any(p < 0 or p >= jps[i] for p in pair):
                raise ConfigurationError(f"scale {i + 1} facing pair out of range")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "joints_per_scale": [int(j) for j in self.joints_per_scale],
            "groupings": [
                [list(g) for g in grouping] for grouping in self.groupings
            ],
            "kinematic_chains": [
                [list(c) for c in chains] for chains in self.kinematic_chains
            ],
            "contact_nodes": [list(c) for c in self.contact_nodes],
            "facing_pairs": [
                list(p) if p is not None else None for p in self.facing_pairs
            ],
            "root_nodes": list(self.root_nodes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScaleHierarchy":
        version = doc.get("schema_version")
        if version != HIERARCHY_SCHEMA_VERSION:
            raise FormatVersionError(
                f"hierarchy schema version {version!r} unsupported "
                f"(current: {HIERARCHY_SCHEMA_VERSION})"
            )
        try:
            h = cls(
                joints_per_scale=tuple(doc["joints_per_scale"]),
                groupings=tuple(
                    tuple(tuple(g) for g in grouping) for grouping in doc["groupings"]
                ),
                kinematic_chains=tuple(
                    tuple(tuple(c) for c in chains)
                    for chains in doc["kinematic_chains"]
                ),
                contact_nodes=tuple(tuple(c) for c in doc["contact_nodes"]),
                facing_pairs=tuple(
                    tuple(p) if p is not None else None for p in doc["facing_pairs"]
                ),
                root_nodes=tuple(doc.get("root_nodes", ())),
                schema_version=version,
            )
        except KeyError as exc:
            raise ConfigurationError(f"hierarchy document missing field {exc}") from exc
        h.validate()
        return h

    @classmethod
    def from_file(cls, path: str | Path) -> "ScaleHierarchy":
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: not a mapping document")
        return cls.from_dict(doc)

    @classmethod
    def default(cls) -> "ScaleHierarchy":
        text = (
            importlib.resources.files("motioncascade.data")
            .joinpath("hierarchy_default.yaml")
            .read_text(encoding="utf-8")
        )
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def upper_lower(cls) -> "ScaleHierarchy":
        """Alternate coarse split: lower/upper body halves, then whole body."""
        text = (
            importlib.resources.files("motioncascade.data")
            .joinpath("hierarchy_upper_lower.yaml")
            .read_text(encoding="utf-8")
        )
        return cls.from_dict(yaml.safe_load(text))


def validate_partition(grouping, num_fine: int) -> None:
    """Check that ``grouping`` is a total partition of ``range(num_fine)``."""
    seen: set[int] = set()
    total = 0
    for group in grouping:
        if len(group) == 0:
            raise ConfigurationError("empty group in partition")
        for idx in group:
            if idx < 0 or idx >= num_fine:
                raise ConfigurationError(
                    f"group index {idx} out of range for {num_fine} fine nodes"
                )
            if idx in seen:
                raise ConfigurationError(f"duplicate index {idx} in partition")
            seen.add(idx)
        total += len(group)
    if total != num_fine:
        missing = sorted(set(range(num_fine)) - seen)
        raise ConfigurationError(f"partition misses fine nodes {missing}")
