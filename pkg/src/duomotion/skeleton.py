"""Skeleton definition and its on-disk text format.

File format (one joint per line, topologically ordered):

    joint <name> <parent-name|-> <off_x> <off_y> <off_z> [left_foot|right_foot]

Lines starting with '#' are comments. Offsets are meters, y-up.
Bundled rigs: ``tiny9`` (9 joints, desk-scale tests) and ``body65``
(65-joint full-body rig with fingers).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonDef:
    names: list[str]
    parents: list[int]                 # -1 for the root
    offsets: np.ndarray                # [J, 3] meters
    foot_indices: tuple[int, int]      # (left, right) end effectors
    _hash: str = field(default="", compare=False)

    def __post_init__(self):
        j = len(self.names)
        if len(self.parents) != j or self.offsets.shape != (j, 3):
            raise SkeletonError("inconsistent joint counts")
        roots = [i for i, p in enumerate(self.parents) if p == -1]
        if roots != [0]:
            raise SkeletonError("exactly one root joint (index 0) required")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise SkeletonError(f"joint {i} has parent {p}; parents must precede children")
        for f in self.foot_indices:
            if not 0 <= f < j:
                raise SkeletonError(f"foot index {f} out of range")

    @property
    def joint_count(self) -> int:
        return len(self.names)

    @property
    def pose_width(self) -> int:
        """Per-frame feature width: J x 6 rotations + 3 root displacement + 2 contacts."""
        return self.joint_count * 6 + 3 + 2

    def rest_height(self, joint: int) -> float:
        """Height (y) of a joint in the rest pose: summed chain offsets."""
        h = 0.0
        while joint != -1:
            h += float(self.offsets[joint, 1])
            joint = self.parents[joint]
        return h

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, parent in zip(self.names, self.parents):
            h.update(f"{name}:{parent};".encode())
        h.update(np.asarray(self.offsets, dtype=np.float64).tobytes())
        h.update(bytes(self.foot_indices))
        return h.hexdigest()[:16]


def parse_skeleton(text: str) -> SkeletonDef:
    names: list[str] = []
    parents: list[int] = []
    offsets: list[list[float]] = []
    left = right = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "joint" or len(parts) not in (6, 7):
            raise SkeletonError(f"line {lineno}: expected 'joint <name> <parent|-> x y z [marker]'")
        _, name, parent_name, *rest = parts
        if name in names:
            raise SkeletonError(f"line {lineno}: duplicate joint name {name!r}")
        if parent_name == "-":
            parent = -1
        else:
            if parent_name not in names:
                raise SkeletonError(f"line {lineno}: unknown parent {parent_name!r}")
            parent = names.index(parent_name)
        try:
            off = [float(v) for v in rest[:3]]
        except ValueError as exc:
            raise SkeletonError(f"line {lineno}: bad offset: {exc}") from None
        if len(rest) == 4:
            marker = rest[3]
            if marker == "left_foot":
                left = len(names)
            elif marker == "right_foot":
                right = len(names)
            else:
                raise SkeletonError(f"line {lineno}: unknown marker {marker!r}")
        names.append(name)
        parents.append(parent)
        offsets.append(off)
    if left < 0 or right < 0:
        raise SkeletonError("skeleton must mark one left_foot and one right_foot joint")
    return SkeletonDef(names, parents, np.asarray(offsets, dtype=np.float64), (left, right))


def load_skeleton(path: str | Path) -> SkeletonDef:
    return parse_skeleton(Path(path).read_text())


def format_skeleton(skel: SkeletonDef) -> str:
    lines = []
    for i, name in enumerate(skel.names):
        parent = "-" if skel.parents[i] == -1 else skel.names[skel.parents[i]]
        off = skel.offsets[i]
        marker = ""
        if i == skel.foot_indices[0]:
            marker = " left_foot"
        elif i == skel.foot_indices[1]:
            marker = " right_foot"
        lines.append(f"joint {name} {parent} {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}{marker}")
    return "\n".join(lines) + "\n"


def builtin_skeleton(name: str) -> SkeletonDef:
    """Load a bundled rig: 'tiny9' or 'body65'."""
    fname = {"tiny9": "skeleton_tiny9.txt", "body65": "skeleton_body65.txt"}.get(name)
    if fname is None:
        raise SkeletonError(f"unknown builtin skeleton {name!r}")
    text = resources.files("duomotion.data").joinpath(fname).read_text()
    return parse_skeleton(text)
