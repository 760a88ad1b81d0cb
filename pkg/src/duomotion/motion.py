"""Motion containers: clips, trajectories, two-person pairs, and the
rigid-normalization scheme used for training and runtime conditioning.

World convention: y-up, ground plane spanned by (x, z); planar 2-vectors
are (x, z). A character's forward axis is its root rotation applied to +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rotation
from .skeleton import SkeletonDef


@dataclass
class MotionClip:
    """Fixed-rate motion: per-joint 6D rotations, per-frame root world delta,
    and two foot-contact labels per frame."""
    fps: float
    rotations: np.ndarray         # [N, J, 6]
    root_displacement: np.ndarray  # [N, 3] meters, world-frame delta per frame
    contact_labels: np.ndarray     # [N, 2] in [0, 1]

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root_displacement = np.asarray(self.root_displacement, dtype=np.float64)
        self.contact_labels = np.asarray(self.contact_labels, dtype=np.float64)
        n = self.rotations.shape[0]
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if n < 1:
            raise ValueError("clip needs at least one frame")
        if self.rotations.ndim != 3 or self.rotations.shape[2] != 6:
            raise ValueError(f"rotations must be [N, J, 6], got {self.rotations.shape}")
        if self.root_displacement.shape != (n, 3):
            raise ValueError("root_displacement must be [N, 3]")
        if self.contact_labels.shape != (n, 2):
            raise ValueError("contact_labels must be [N, 2]")
        if np.any(self.contact_labels < -1e-9) or np.any(self.contact_labels > 1 + 1e-9):
            raise ValueError("contact labels must lie in [0, 1]")

    @property
    def frames(self) -> int:
        return self.rotations.shape[0]

    @property
    def joint_count(self) -> int:
        return self.rotations.shape[1]

    @property
    def width(self) -> int:
        return self.joint_count * 6 + 3 + 2

    def to_pose_array(self) -> np.ndarray:
        """Flatten to [N, J*6 + 3 + 2] feature rows."""
        n = self.frames
        return np.concatenate(
            [self.rotations.reshape(n, -1), self.root_displacement, self.contact_labels],
            axis=1,
        )

    @classmethod
    def from_pose_array(cls, pose: np.ndarray, fps: float) -> "MotionClip":
        pose = np.asarray(pose, dtype=np.float64)
        j, rem = divmod(pose.shape[1] - 5, 6)
        if rem != 0:
            raise ValueError(f"width {pose.shape[1]} does not factor as J*6+3+2")
        n = pose.shape[0]
        return cls(
            fps=fps,
            rotations=pose[:, : j * 6].reshape(n, j, 6),
            root_displacement=pose[:, j * 6 : j * 6 + 3],
            contact_labels=np.clip(pose[:, j * 6 + 3 :], 0.0, 1.0),
        )

    def root_positions(self) -> np.ndarray:
        """World root positions: cumulative sum of per-frame displacement."""
        return np.cumsum(self.root_displacement, axis=0)

    def slice(self, start: int, stop: int) -> "MotionClip":
        """Sub-clip whose first displacement row is rewritten to the absolute
        root position of that frame, so sliced windows keep their location."""
        disp = self.root_displacement[start:stop].copy()
        disp[0] = self.root_positions()[start]
        return MotionClip(
            fps=self.fps,
            rotations=self.rotations[start:stop].copy(),
            root_displacement=disp,
            contact_labels=self.contact_labels[start:stop].copy(),
        )


@dataclass
class TrajectorySeq:
    """Planar root path: per-frame ground position and facing yaw (6D encoded)."""
    positions: np.ndarray  # [N, 2] meters (x, z)
    facings: np.ndarray    # [N, 6]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.facings = np.asarray(self.facings, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must be [N, 2]")
        if self.facings.shape != (self.positions.shape[0], 6):
            raise ValueError("facings must be [N, 6]")
        rotation.rot6d_to_matrix(self.facings)  # raises on degenerate rows

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    def yaw_angles(self) -> np.ndarray:
        return rotation.matrix_yaw(rotation.rot6d_to_matrix(self.facings))

    @classmethod
    def from_yaw(cls, positions: np.ndarray, yaw: np.ndarray) -> "TrajectorySeq":
        mats = rotation.yaw_matrix(np.asarray(yaw, dtype=np.float64))
        return cls(np.asarray(positions, dtype=np.float64), rotation.matrix_to_rot6d(mats))

    def to_features(self) -> np.ndarray:
        """[N, 2 + 6] rows: planar position then facing encoding."""
        return np.concatenate([self.positions, self.facings], axis=1)

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "TrajectorySeq":
        feats = np.asarray(feats, dtype=np.float64)
        return cls(feats[:, :2], feats[:, 2:8])


@dataclass
class TwoPersonClip:
    clip_a: MotionClip
    clip_b: MotionClip
    audio_a: object = None   # AudioTrack or path reference
    audio_b: object = None

    def __post_init__(self):
        if self.clip_a.frames != self.clip_b.frames:
            raise ValueError("paired clips must have equal frame counts")
        if self.clip_a.fps != self.clip_b.fps:
            raise ValueError("paired clips must share fps")

    @property
    def frames(self) -> int:
        return self.clip_a.frames


@dataclass(frozen=True)
class PlanarTransform:
    """Rigid ground-plane map: world -> local is rotate by -heading then shift."""
    offset: np.ndarray   # [2] planar translation of the local origin, world coords
    heading: float       # world yaw of the local +z axis... stored as rotation angle

    def apply_planar(self, points: np.ndarray) -> np.ndarray:
        """World planar points [..., 2] into the local frame."""
        pts = np.asarray(points, dtype=np.float64) - self.offset
        c, s = np.cos(-self.heading), np.sin(-self.heading)
        x = c * pts[..., 0] + s * pts[..., 1]
        z = -s * pts[..., 0] + c * pts[..., 1]
        return np.stack([x, z], axis=-1)

    def inverse_planar(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        c, s = np.cos(self.heading), np.sin(self.heading)
        x = c * pts[..., 0] + s * pts[..., 1]
        z = -s * pts[..., 0] + c * pts[..., 1]
        return np.stack([x, z], axis=-1) + self.offset

    def rotation_matrix(self) -> np.ndarray:
        """3x3 world-frame rotation removed by this transform."""
        return rotation.yaw_matrix(self.heading)


def _planar_to_vec3(planar: np.ndarray, y: float | np.ndarray = 0.0) -> np.ndarray:
    out = np.zeros(planar.shape[:-1] + (3,))
    out[..., 0] = planar[..., 0]
    out[..., 2] = planar[..., 1]
    out[..., 1] = y
    return out


def transform_clip(clip: MotionClip, xform: PlanarTransform) -> MotionClip:
    """Apply the world->local rigid map to a clip: rotate root rotations and
    displacements by -heading, and shift the first-frame planar root position."""
    inv_rot = rotation.yaw_matrix(-xform.heading)
    root_mats = rotation.rot6d_to_matrix(clip.rotations[:, 0])
    new_root = rotation.matrix_to_rot6d(np.matmul(inv_rot, root_mats))
    rotations = clip.rotations.copy()
    rotations[:, 0] = new_root

    disp = clip.root_displacement.copy()
    pos = np.cumsum(disp, axis=0)
    planar_local = xform.apply_planar(pos[:, [0, 2]])
    pos_local = pos.copy()
    pos_local[:, 0] = planar_local[:, 0]
    pos_local[:, 2] = planar_local[:, 1]
    disp_local = np.diff(pos_local, axis=0, prepend=np.zeros((1, 3)))
    disp_local[0] = pos_local[0]
    return MotionClip(clip.fps, rotations, disp_local, clip.contact_labels.copy())


def clip_root_trajectory(clip: MotionClip) -> TrajectorySeq:
    """Planar root positions + facing yaw extracted from the root rotation."""
    pos = clip.root_positions()
    yaw = rotation.matrix_yaw(rotation.rot6d_to_matrix(clip.rotations[:, 0]))
    return TrajectorySeq.from_yaw(pos[:, [0, 2]], yaw)


def alternant_normalize(
    pair: TwoPersonClip, primary: str
) -> tuple[TwoPersonClip, PlanarTransform]:
    """Rigidly move the pair so the primary's first-frame root sits at the
    origin facing +z; the secondary gets the same transform, preserving all
    relative geometry. Returns the transform for undoing the move."""
    if primary not in ("A", "B"):
        raise ValueError("primary must be 'A' or 'B'")
    target = pair.clip_a if primary == "A" else pair.clip_b
    first_pos = target.root_displacement[0]
    root_mat = rotation.rot6d_to_matrix(target.rotations[0, 0])
    heading = float(rotation.matrix_yaw(root_mat))
    xform = PlanarTransform(offset=np.array([first_pos[0], first_pos[2]]), heading=heading)
    norm = TwoPersonClip(
        transform_clip(pair.clip_a, xform),
        transform_clip(pair.clip_b, xform),
        pair.audio_a,
        pair.audio_b,
    )
    return norm, xform


def denormalize_clip(clip: MotionClip, xform: PlanarTransform) -> MotionClip:
    """Invert transform_clip."""
    fwd = rotation.yaw_matrix(xform.heading)
    root_mats = rotation.rot6d_to_matrix(clip.rotations[:, 0])
    rotations = clip.rotations.copy()
    rotations[:, 0] = rotation.matrix_to_rot6d(np.matmul(fwd, root_mats))

    pos = clip.root_positions()
    planar_world = xform.inverse_planar(pos[:, [0, 2]])
    pos_world = pos.copy()
    pos_world[:, 0] = planar_world[:, 0]
    pos_world[:, 2] = planar_world[:, 1]
    disp = np.diff(pos_world, axis=0, prepend=np.zeros((1, 3)))
    disp[0] = pos_world[0]
    return MotionClip(clip.fps, rotations, disp, clip.contact_labels.copy())


def transform_trajectory(traj: TrajectorySeq, xform: PlanarTransform) -> TrajectorySeq:
    pos = xform.apply_planar(traj.positions)
    yaw = traj.yaw_angles() - xform.heading
    return TrajectorySeq.from_yaw(pos, yaw)


def untransform_trajectory(traj: TrajectorySeq, xform: PlanarTransform) -> TrajectorySeq:
    pos = xform.inverse_planar(traj.positions)
    yaw = traj.yaw_angles() + xform.heading
    return TrajectorySeq.from_yaw(pos, yaw)


def facing_local_frame(traj: TrajectorySeq, frame: int) -> PlanarTransform:
    """Rigid map whose origin is the trajectory sample at `frame` and whose
    forward axis is its facing."""
    if not 0 <= frame < traj.frames:
        raise IndexError(f"frame {frame} out of range [0, {traj.frames})")
    yaw = float(traj.yaw_angles()[frame])
    return PlanarTransform(offset=traj.positions[frame].copy(), heading=yaw)


def detect_foot_contacts(
    positions: np.ndarray, skel: SkeletonDef, threshold: float = 0.03
) -> np.ndarray:
    """Binary [N, 2] labels: 1 when the foot joint moves less than `threshold`
    meters between consecutive frames. First frame copies the second."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < 2:
        raise ValueError("need at least 2 frames to detect contacts")
    feet = positions[:, list(skel.foot_indices), :]       # [N, 2, 3]
    disp = np.linalg.norm(np.diff(feet, axis=0), axis=-1)  # [N-1, 2]
    labels = (disp < threshold).astype(np.float64)
    return np.concatenate([labels[:1], labels], axis=0)
