"""BVH import/export. Import matches joints to a target skeleton by name,
converts Euler channels to 6D rotations, resamples to the target frame rate
with rotation-aware interpolation, and derives foot-contact labels."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .kinematics import forward_kinematics
from .motion import MotionClip, detect_foot_contacts
from .rotation import matrix_to_rot6d, rot6d_to_matrix, slerp_rot6d
from .skeleton import SkeletonDef

POSITION_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
ROTATION_CHANNELS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}


class BVHError(ValueError):
    pass


@dataclass
class BVHJoint:
    name: str
    parent: int
    offset: np.ndarray
    channels: list[str] = field(default_factory=list)


@dataclass
class BVHData:
    joints: list[BVHJoint]
    frame_time: float
    frames: np.ndarray        # [N, total_channels]

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time


class _Tokens:
    """Token stream that remembers line numbers for parse errors."""

    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def peek(self) -> str:
        if self.pos >= len(self.items):
            raise BVHError("unexpected end of file")
        return self.items[self.pos][0]

    def next(self) -> str:
        tok = self.peek()
        self.pos += 1
        return tok

    @property
    def line(self) -> int:
        idx = min(self.pos, len(self.items) - 1)
        return self.items[idx][1]

    def expect(self, want: str) -> None:
        got = self.next()
        if got != want:
            raise BVHError(f"line {self.line}: expected {want!r}, got {got!r}")

    def number(self) -> float:
        tok = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BVHError(f"line {self.line}: expected a number, got {tok!r}") from None


def parse_bvh(text: str) -> BVHData:
    toks = _Tokens(text)
    toks.expect("HIERARCHY")
    joints: list[BVHJoint] = []

    def parse_joint(parent: int) -> None:
        kind = toks.next()
        if kind not in ("ROOT", "JOINT"):
            raise BVHError(f"line {toks.line}: expected ROOT/JOINT, got {kind!r}")
        name = toks.next()
        idx = len(joints)
        joints.append(BVHJoint(name, parent, np.zeros(3)))
        toks.expect("{")
        while True:
            tok = toks.peek()
            if tok == "OFFSET":
                toks.next()
                joints[idx].offset = np.array([toks.number() for _ in range(3)])
            elif tok == "CHANNELS":
                toks.next()
                count = int(toks.number())
                chans = [toks.next() for _ in range(count)]
                for c in chans:
                    if c not in POSITION_CHANNELS and c not in ROTATION_CHANNELS:
                        raise BVHError(f"line {toks.line}: unknown channel {c!r}")
                joints[idx].channels = chans
            elif tok == "JOINT":
                parse_joint(idx)
            elif tok == "End":
                toks.next()
                toks.expect("Site")
                toks.expect("{")
                toks.expect("OFFSET")
                for _ in range(3):
                    toks.number()
                toks.expect("}")
            elif tok == "}":
                toks.next()
                return
            else:
                raise BVHError(f"line {toks.line}: unexpected token {tok!r}")

    parse_joint(-1)
    toks.expect("MOTION")
    toks.expect("Frames:")
    n_frames = int(toks.number())
    toks.expect("Frame")
    toks.expect("Time:")
    frame_time = toks.number()
    if frame_time <= 0:
        raise BVHError(f"line {toks.line}: frame time must be positive")
    total = sum(len(j.channels) for j in joints)
    values = np.empty((n_frames, total))
    for f in range(n_frames):
        for c in range(total):
            values[f, c] = toks.number()
    return BVHData(joints, frame_time, values)


def _joint_rotations(data: BVHData) -> np.ndarray:
    """Per-frame local rotation matrices [N, J, 3, 3] from Euler channels."""
    n = len(data.frames)
    j = len(data.joints)
    mats = np.tile(np.eye(3), (n, j, 1, 1))
    col = 0
    for ji, joint in enumerate(data.joints):
        rot_order = "".join(
            ROTATION_CHANNELS[c] for c in joint.channels if c in ROTATION_CHANNELS
        )
        rot_cols = [
            col + k for k, c in enumerate(joint.channels) if c in ROTATION_CHANNELS
        ]
        if rot_order:
            angles = data.frames[:, rot_cols]
            # BVH applies listed channels as successive intrinsic rotations
            mats[:, ji] = Rotation.from_euler(rot_order, angles, degrees=True).as_matrix()
        col += len(joint.channels)
    return mats


def _root_positions(data: BVHData) -> np.ndarray:
    pos = np.tile(data.joints[0].offset, (len(data.frames), 1))
    col = 0
    for k, c in enumerate(data.joints[0].channels):
        if c in POSITION_CHANNELS:
            pos[:, POSITION_CHANNELS[c]] = data.frames[:, col + k]
    return pos


def _resample(rot6d: np.ndarray, root: np.ndarray, src_fps: float, dst_fps: float):
    n = len(rot6d)
    duration = (n - 1) / src_fps
    m = int(np.floor(duration * dst_fps + 1e-6)) + 1
    times = np.arange(m) / dst_fps * src_fps
    lo = np.clip(np.floor(times).astype(int), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    t = times - lo
    out_rot = np.empty((m,) + rot6d.shape[1:])
    for i in range(m):
        if t[i] < 1e-12 or lo[i] == hi[i]:
            out_rot[i] = rot6d[lo[i]]
        else:
            for j in range(rot6d.shape[1]):
                out_rot[i, j] = slerp_rot6d(rot6d[lo[i], j], rot6d[hi[i], j], t[i])
    out_root = root[lo] * (1.0 - t)[:, None] + root[hi] * t[:, None]
    return out_rot, out_root


def import_bvh(
    path: str | Path, skel: SkeletonDef, target_fps: float = 30.0
) -> MotionClip:
    """Read a BVH file whose joints match `skel` by name; returns a clip at
    `target_fps` with contacts detected from foot motion."""
    data = parse_bvh(Path(path).read_text())
    bvh_names = {j.name: i for i, j in enumerate(data.joints)}
    missing = [n for n in skel.names if n not in bvh_names]
    extra = [n for n in bvh_names if n not in skel.names]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing from BVH: {', '.join(missing)}")
        if extra:
            parts.append(f"not in skeleton: {', '.join(extra)}")
        raise BVHError("joint names do not match target skeleton; " + "; ".join(parts))
    order = [bvh_names[n] for n in skel.names]
    mats = _joint_rotations(data)[:, order]
    rot6d = np.stack(
        [[matrix_to_rot6d(mats[f, j]) for j in range(len(order))] for f in range(len(mats))]
    )
    root = _root_positions(data)
    # frame time is stored with finite precision; treat near-equal rates as equal
    if abs(data.fps - target_fps) > 1e-4 * target_fps:
        rot6d, root = _resample(rot6d, root, data.fps, target_fps)
    disp = np.diff(root, axis=0, prepend=root[:1])
    disp[0] = root[0]
    clip = MotionClip(target_fps, rot6d, disp, np.zeros((len(rot6d), 2)))
    contacts = detect_foot_contacts(forward_kinematics(clip, skel), skel)
    return MotionClip(target_fps, rot6d, disp, contacts)


def export_bvh(path: str | Path, clip: MotionClip, skel: SkeletonDef) -> None:
    """Write a clip as BVH (root: 3 position + ZXY rotation channels; other
    joints: ZXY rotation channels)."""
    lines = ["HIERARCHY"]
    children: dict[int, list[int]] = {i: [] for i in range(skel.joint_count)}
    for i, p in enumerate(skel.parents):
        if p >= 0:
            children[p].append(i)

    def emit(idx: int, depth: int) -> None:
        pad = "  " * depth
        kind = "ROOT" if idx == 0 else "JOINT"
        off = skel.offsets[idx]
        lines.append(f"{pad}{kind} {skel.names[idx]}")
        lines.append(pad + "{")
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        if idx == 0:
            lines.append(
                f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
                "Zrotation Xrotation Yrotation"
            )
        else:
            lines.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        if children[idx]:
            for c in children[idx]:
                emit(c, depth + 1)
        else:
            lines.append(pad + "  End Site")
            lines.append(pad + "  {")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(pad + "  }")
        lines.append(pad + "}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {clip.frames}")
    lines.append(f"Frame Time: {1.0 / clip.fps:.8f}")
    root = clip.root_positions()
    for f in range(clip.frames):
        row: list[float] = list(root[f])
        for j in range(skel.joint_count):
            mat = rot6d_to_matrix(clip.rotations[f, j])
            z, x, y = Rotation.from_matrix(mat).as_euler("ZXY", degrees=True)
            row.extend([z, x, y])
        lines.append(" ".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
