"""Procedural two-person sample data: a stationary conversation clip, a
straight-line walking clip, and click-track audio, so every pipeline runs
with no external dataset. Real captures plug in through the BVH/WAV
importers instead.

Every clip starts with LEAD_IN_FRAMES of T-pose (audio silent over the same
span) so the autoregressive runtime's T-pose warm-up state appears in the
training distribution and generation can start cold from the same pose."""
from __future__ import annotations

import numpy as np

from .motion import MotionClip, TwoPersonClip
from .rotation import IDENTITY_6D, axis_angle_matrix, matrix_to_rot6d, yaw_matrix
from .skeleton import SkeletonDef, builtin_skeleton
from .speech import AudioTrack

SAMPLE_FPS = 30.0
SAMPLE_SR = 16000
CLICK_INTERVAL_S = 0.5
LEAD_IN_FRAMES = 10


def click_track(
    duration_s: float,
    sr: int = SAMPLE_SR,
    interval_s: float = CLICK_INTERVAL_S,
    amplitude: float = 0.5,
    phase_s: float = 0.0,
    freq_hz: float = 1500.0,
) -> AudioTrack:
    """Mono click track: short decaying tonal bursts at a fixed interval."""
    n = int(round(duration_s * sr))
    samples = np.zeros(n)
    click_len = int(0.01 * sr)
    burst = amplitude * np.sin(2 * np.pi * freq_hz * np.arange(click_len) / sr)
    burst *= np.exp(-np.arange(click_len) / (0.002 * sr))
    t = phase_s
    while t < duration_s:
        i = int(round(t * sr))
        j = min(i + click_len, n)
        samples[i:j] += burst[: j - i]
        t += interval_s
    return AudioTrack(samples, sr)


def _axis_rot6d(axis: list[float], angle: float) -> np.ndarray:
    return matrix_to_rot6d(axis_angle_matrix(np.asarray(axis, dtype=np.float64), angle))


def _base_rows(skel: SkeletonDef, frames: int) -> np.ndarray:
    return np.tile(IDENTITY_6D, (frames, skel.joint_count, 1))


def _joint(skel: SkeletonDef, name: str) -> int:
    return skel.names.index(name)


def _ramp(t_after_lead: np.ndarray, ramp_s: float = 0.2) -> np.ndarray:
    """0 during the lead-in, smoothstep up to 1 over `ramp_s` afterwards."""
    s = np.clip(t_after_lead / ramp_s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _pair_audio(duration_s: float, lead_s: float) -> tuple[AudioTrack, AudioTrack]:
    # distinct click pitches so character identity is loud in the mel
    # features; amplitude alone is only ~1 dB and too weak to break the
    # left/right leg symmetry of the first step from rest
    return (
        click_track(duration_s, amplitude=0.5, phase_s=lead_s, freq_hz=1500.0),
        click_track(
            duration_s,
            amplitude=0.4,
            phase_s=lead_s + CLICK_INTERVAL_S / 2.0,
            freq_hz=600.0,
        ),
    )


def conversation_clip(
    skel: SkeletonDef | None = None,
    duration_s: float = 6.0,
    fps: float = SAMPLE_FPS,
    seed: int = 0,
) -> TwoPersonClip:
    """Two characters face each other and gesture, one full sway per click so
    the motion phase is readable from the audio alone. Roots never move and
    legs stay straight, so the foot-slide metric is exactly zero."""
    skel = skel or builtin_skeleton("tiny9")
    rng = np.random.default_rng(seed)
    frames = int(round(duration_s * fps))
    lead_s = LEAD_IN_FRAMES / fps
    t = np.arange(frames) / fps - lead_s          # 0 at motion onset
    beat_hz = 1.0 / CLICK_INTERVAL_S
    env = _ramp(t)

    def character(pos_z: float, yaw: float, phase: float) -> MotionClip:
        rot = _base_rows(skel, frames)
        rot[:, 0] = matrix_to_rot6d(yaw_matrix(yaw))
        arm_amp = 0.35 + 0.15 * rng.random()
        nod_amp = 0.10 + 0.05 * rng.random()
        swing = env * np.sin(2 * np.pi * beat_hz * t + phase)
        nod = env * np.sin(2 * np.pi * beat_hz * t / 2.0 + phase)
        for name, sign in (("LeftArm", 1.0), ("RightArm", -1.0)):
            ji = _joint(skel, name)
            for f in range(frames):
                rot[f, ji] = _axis_rot6d([0.0, 0.0, 1.0], sign * arm_amp * swing[f])
        spine = _joint(skel, "Spine")
        for f in range(frames):
            rot[f, spine] = _axis_rot6d([1.0, 0.0, 0.0], nod_amp * nod[f])
        disp = np.zeros((frames, 3))
        disp[0] = [0.0, 0.95, pos_z]
        return MotionClip(fps, rot, disp, np.ones((frames, 2)))

    audio_a, audio_b = _pair_audio(duration_s, lead_s)
    return TwoPersonClip(
        character(-0.75, 0.0, 0.0),
        character(0.75, np.pi, np.pi / 2.0),
        audio_a=audio_a,
        audio_b=audio_b,
    )


def walk_clip(
    skel: SkeletonDef | None = None,
    duration_s: float = 6.0,
    fps: float = SAMPLE_FPS,
    seed: int = 0,
    speed: float = 0.4,
) -> TwoPersonClip:
    """Two characters walk a straight line side by side, one step per click.
    Stance feet are pinned to the ground analytically (hip angle solved so
    the foot's world position is constant), so ground-truth foot slide is
    zero; swing legs kick high enough to clear the contact height gate."""
    skel = skel or builtin_skeleton("tiny9")
    rng = np.random.default_rng(seed)
    frames = int(round(duration_s * fps))
    leg = abs(float(skel.offsets[_joint(skel, "LeftFoot")][1]))
    step_frames = int(round(fps * CLICK_INTERVAL_S))

    def character(x: float, phase_steps: int) -> MotionClip:
        v = speed * (0.9 + 0.2 * rng.random())
        disp = np.zeros((frames, 3))
        disp[0] = [x, 0.95, 0.0]
        disp[LEAD_IN_FRAMES + 1 :, 2] = v / fps
        root_z = np.cumsum(disp[:, 2])

        def root_z_at(f: float) -> float:
            return float(np.interp(f, np.arange(frames), root_z))

        def stance_theta(f: float, seg: int, offset: int) -> float:
            start = LEAD_IN_FRAMES + seg * step_frames - offset
            if start <= LEAD_IN_FRAMES:
                # the foot is already standing under the hip when motion
                # begins; keep it planted there instead of re-planting
                plant = root_z_at(max(start, 0))
            else:
                plant = root_z_at(start + step_frames / 2.0)
            return float(np.arcsin(np.clip((root_z_at(f) - plant) / leg, -1.0, 1.0)))

        rot = _base_rows(skel, frames)
        contacts = np.ones((frames, 2))
        for leg_idx, (hip_name, col) in enumerate((("LeftHip", 0), ("RightHip", 1))):
            hip = _joint(skel, hip_name)
            offset = (leg_idx + phase_steps) * step_frames
            for f in range(LEAD_IN_FRAMES, frames):
                seg, within = divmod(f - LEAD_IN_FRAMES + offset, step_frames)
                if seg % 2 == 0:      # stance
                    theta = stance_theta(f, seg, offset)
                    contacts[f, col] = 1.0
                else:                 # swing between the two adjacent plants
                    f0 = LEAD_IN_FRAMES + seg * step_frames - offset
                    f1 = f0 + step_frames
                    th0 = stance_theta(f0, seg - 1, offset)
                    th1 = stance_theta(f1, seg + 1, offset)
                    s = within / step_frames
                    # steep initial kick so the foot clears the contact
                    # height gate within one frame of leaving the ground
                    theta = th0 + (th1 - th0) * s + 1.25 * np.sin(np.pi * s)
                    contacts[f, col] = 0.0
                rot[f, hip] = _axis_rot6d([1.0, 0.0, 0.0], theta)
        return MotionClip(fps, rot, disp, contacts)

    audio_a, audio_b = _pair_audio(duration_s, LEAD_IN_FRAMES / fps)
    # same gait phase for both characters: which leg swings first is then
    # fully determined by the clip type instead of by character identity
    return TwoPersonClip(
        character(-0.5, 0),
        character(0.5, 0),
        audio_a=audio_a,
        audio_b=audio_b,
    )


def sample_dataset(
    count: int = 5, skel: SkeletonDef | None = None, duration_s: float = 6.0
) -> list[TwoPersonClip]:
    """Deterministic mixed set (conversation/walk alternating) for pipeline
    tests; seeds vary amplitudes, phases, and walking speed."""
    skel = skel or builtin_skeleton("tiny9")
    clips = []
    for i in range(count):
        if i % 2 == 0:
            clips.append(conversation_clip(skel, duration_s, seed=i))
        else:
            clips.append(walk_clip(skel, duration_s, seed=i))
    return clips
