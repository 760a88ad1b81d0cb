"""Evaluation metrics: Gaussian Frechet distances over pose features (FPD)
and inter-character distance matrices (FDD), beat alignment, diversity,
foot sliding, dynamism, and a tabular report writer."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.ndimage import gaussian_filter1d
from scipy.signal import argrelextrema

from .kinematics import forward_kinematics
from .motion import MotionClip, TwoPersonClip
from .skeleton import SkeletonDef

BEAT_SIGMA_S = 0.1          # Gaussian kernel width for beat alignment
SPEED_SMOOTH_FRAMES = 3.0   # smoothing before kinematic-beat minima detection
CONTACT_HEIGHT_M = 0.05     # foot counted grounded below this height...
CONTACT_DISP_M = 0.03       # ...and moving less than this per frame


@dataclass(frozen=True)
class GaussianSummary:
    """Moment summary of a point cloud, the carrier for Frechet distances."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least 2 samples to summarize")
        if self.cov.shape != (self.mean.shape[0], self.mean.shape[0]):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")

    @classmethod
    def fit(cls, samples: np.ndarray) -> "GaussianSummary":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be [count, dim]")
        cov = np.cov(samples, rowvar=False)
        cov = np.atleast_2d(cov)
        return cls(mean=samples.mean(axis=0), cov=(cov + cov.T) / 2.0, count=len(samples))


def gaussian_frechet(a: GaussianSummary, b: GaussianSummary) -> float:
    """|mu_a - mu_b|^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}), clamped at 0."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("dimension mismatch between summaries")
    diff = a.mean - b.mean
    prod = a.cov @ b.cov
    sqrt_prod, _ = linalg.sqrtm(prod, disp=False)
    if np.iscomplexobj(sqrt_prod):
        sqrt_prod = sqrt_prod.real
    val = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(sqrt_prod))
    return max(val, 0.0)


# ------------------------------------------------------------ pose features


def local_pose_features(clip: MotionClip, skel: SkeletonDef) -> np.ndarray:
    """Per-frame flattened FK joint positions in the character-local frame
    (root planar position and heading removed frame by frame)."""
    pos = forward_kinematics(clip, skel)          # [N, J, 3] world
    root = clip.root_positions()                  # [N, 3]
    local = pos - root[:, None, :] * np.array([1.0, 0.0, 1.0])
    yaws = _frame_yaws(clip)
    c, s = np.cos(-yaws), np.sin(-yaws)
    x = c[:, None] * local[:, :, 0] + s[:, None] * local[:, :, 2]
    z = -s[:, None] * local[:, :, 0] + c[:, None] * local[:, :, 2]
    out = local.copy()
    out[:, :, 0], out[:, :, 2] = x, z
    return out.reshape(clip.frames, -1)


def _frame_yaws(clip: MotionClip) -> np.ndarray:
    from .rotation import matrix_yaw, rot6d_to_matrix

    return np.array([matrix_yaw(rot6d_to_matrix(r)) for r in clip.rotations[:, 0]])


def fpd(generated: np.ndarray, reference: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two pose-feature sets."""
    if len(generated) < 2 or len(reference) < 2:
        raise ValueError("need at least 2 frames in each set")
    return gaussian_frechet(GaussianSummary.fit(generated), GaussianSummary.fit(reference))


def fpd_clips(
    generated: list[MotionClip], reference: list[MotionClip], skel: SkeletonDef
) -> float:
    gen = np.vstack([local_pose_features(c, skel) for c in generated])
    ref = np.vstack([local_pose_features(c, skel) for c in reference])
    return fpd(gen, ref)


def interaction_features(pair: TwoPersonClip, skel: SkeletonDef) -> np.ndarray:
    """Per-frame flattened J x J matrix of Euclidean distances between
    character A's joints and character B's joints (world frame; the matrix
    is rigid-invariant by construction)."""
    pa = forward_kinematics(pair.clip_a, skel)
    pb = forward_kinematics(pair.clip_b, skel)
    diff = pa[:, :, None, :] - pb[:, None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    return dist.reshape(pair.clip_a.frames, -1)


def fdd(
    generated: list[TwoPersonClip], reference: list[TwoPersonClip], skel: SkeletonDef
) -> float:
    """Frechet distance over inter-character distance-matrix distributions."""
    if not generated or not reference:
        raise ValueError("need at least one pair in each set")
    gen = np.vstack([interaction_features(p, skel) for p in generated])
    ref = np.vstack([interaction_features(p, skel) for p in reference])
    if len(gen) < 2 or len(ref) < 2:
        raise ValueError("need at least 2 frames in each set")
    return gaussian_frechet(GaussianSummary.fit(gen), GaussianSummary.fit(ref))


# -------------------------------------------------------------------- beats


def kinematic_beats(clip: MotionClip, skel: SkeletonDef) -> np.ndarray:
    """Times (seconds) of local minima of smoothed mean joint speed."""
    pos = forward_kinematics(clip, skel)
    speed = np.linalg.norm(np.diff(pos, axis=0), axis=-1).mean(axis=1) * clip.fps
    if len(speed) < 3:
        return np.empty(0)
    smooth = gaussian_filter1d(speed, sigma=SPEED_SMOOTH_FRAMES)
    idx = argrelextrema(smooth, np.less_equal, order=2)[0]
    # drop plateau duplicates: keep the first index of each flat run
    idx = idx[np.concatenate([[True], np.diff(idx) > 1])]
    return (idx + 1) / clip.fps   # speed[i] spans frames i..i+1


def rhythm_beats(rhythm: np.ndarray, fps: float) -> np.ndarray:
    """Times (seconds) of peaks in a rhythm curve."""
    if len(rhythm) < 3:
        return np.empty(0)
    idx = argrelextrema(rhythm, np.greater, order=1)[0]
    idx = idx[rhythm[idx] > 1e-8]
    return idx / fps


def beat_align(
    kinematic_times: np.ndarray, audio_times: np.ndarray, sigma: float = BEAT_SIGMA_S
) -> float:
    """Mean Gaussian-kernel score of each kinematic beat against its nearest
    audio beat. Zero kinematic beats is defined as 0 (with a warning)."""
    kinematic_times = np.asarray(kinematic_times, dtype=np.float64)
    audio_times = np.asarray(audio_times, dtype=np.float64)
    if kinematic_times.size == 0:
        warnings.warn("no kinematic beats found; beat_align = 0", stacklevel=2)
        return 0.0
    if audio_times.size == 0:
        return 0.0
    d = np.abs(kinematic_times[:, None] - audio_times[None, :]).min(axis=1)
    return float(np.mean(np.exp(-(d**2) / (2.0 * sigma**2))))


def beat_align_clip(
    clip: MotionClip, rhythm: np.ndarray, rhythm_fps: float, skel: SkeletonDef
) -> float:
    return beat_align(kinematic_beats(clip, skel), rhythm_beats(rhythm, rhythm_fps))


# ------------------------------------------------------- diversity and feet


def diversity(clips: list[np.ndarray]) -> float:
    """Average pairwise mean-absolute-difference between pose arrays."""
    if len(clips) < 2:
        raise ValueError("need at least 2 clips")
    arrs = [np.asarray(c, dtype=np.float64) for c in clips]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ValueError("clips must share a shape")
    total, pairs = 0.0, 0
    for i in range(len(arrs)):
        for j in range(i + 1, len(arrs)):
            total += float(np.mean(np.abs(arrs[i] - arrs[j])))
            pairs += 1
    return total / pairs


def foot_slide(clip: MotionClip, skel: SkeletonDef) -> float:
    """Mean horizontal foot displacement (meters/frame) over contact frames.

    Contact is segment-based: a segment starts when a foot is within
    CONTACT_HEIGHT_M of its rest height AND moved less than CONTACT_DISP_M
    since the previous frame, and ends when the foot lifts above the height
    gate. Slide accumulates whatever horizontal displacement occurs on frames
    already inside a segment, so a planted foot dragged along with the root
    registers its full drag."""
    pos = forward_kinematics(clip, skel)
    slides: list[float] = []
    for fi in skel.foot_indices:
        p = pos[:, fi]
        thresh = skel.rest_height(fi) + CONTACT_HEIGHT_M
        disp = np.concatenate(
            [[0.0], np.linalg.norm(np.diff(p[:, [0, 2]], axis=0), axis=1)]
        )
        in_contact = False
        for t in range(clip.frames):
            low = p[t, 1] < thresh
            if in_contact and low:
                slides.append(float(disp[t]))
            if not low:
                in_contact = False
            elif disp[t] < CONTACT_DISP_M:
                in_contact = True
    if not slides:
        return 0.0
    return float(np.mean(slides))


def dynamism(clip: MotionClip) -> float:
    """Average planar root speed: total (x, z) path length / duration."""
    root = clip.root_positions()[:, [0, 2]]
    path = float(np.linalg.norm(np.diff(root, axis=0), axis=1).sum())
    duration = (clip.frames - 1) / clip.fps
    return path / duration if duration > 0 else 0.0


# ------------------------------------------------------------------ reports

REPORT_COLUMNS = ("fpd", "fdd", "beat_align", "diversity", "foot_slide", "dynamism")


def write_report(rows: dict[str, dict[str, float]], out_base: str | Path) -> None:
    """Emit a metric table as `<base>.txt` (tab-delimited) and `<base>.json`.

    `rows` maps a method/variant name to its metric dict; missing metrics
    render as '-'. """
    out_base = Path(out_base)
    lines = ["method\t" + "\t".join(REPORT_COLUMNS)]
    for name, vals in rows.items():
        cells = [f"{vals[c]:.6g}" if c in vals else "-" for c in REPORT_COLUMNS]
        lines.append(name + "\t" + "\t".join(cells))
    out_base.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    out_base.with_suffix(".json").write_text(json.dumps(rows, indent=2) + "\n")


def read_report(out_base: str | Path) -> dict[str, dict[str, float]]:
    return json.loads(Path(out_base).with_suffix(".json").read_text())
