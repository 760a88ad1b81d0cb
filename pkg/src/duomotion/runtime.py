"""Online dual-character generation loop: trajectory self-prediction (HFTE),
control blending, windowed diffusion sampling in the self-local frame, dead
blending at clip seams, and latency accounting."""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import diffusion, rotation
from .denoiser import ConditionSet, MotionDenoiser, TrajectoryDenoiser, TrajectoryConditionSet
from .motion import (
    MotionClip,
    PlanarTransform,
    TrajectorySeq,
    TwoPersonClip,
    clip_root_trajectory,
    transform_clip,
    transform_trajectory,
)
from .skeleton import SkeletonDef
from .speech import SpeechFeatures
from .training import PoseNormalizer


# ---------------------------------------------------------------- pure ops


def hfte_extend(recent: TrajectorySeq, total_frames: int) -> TrajectorySeq:
    """Extend a trajectory to `total_frames` by repeatedly point-mirroring the
    most recent segment through its endpoint (in the endpoint's local frame).
    Output starts with `recent` unchanged; seams are C0 by construction."""
    if recent.frames < 2:
        raise ValueError("need at least 2 trajectory frames to extend")
    pos = list(recent.positions)
    yaw = list(np.unwrap(recent.yaw_angles()))
    seg_len = recent.frames
    while len(pos) < total_frames:
        k = min(seg_len, len(pos))
        end_p = pos[-1]
        end_y = yaw[-1]
        block_p = [2.0 * end_p - pos[-1 - i] for i in range(1, k)]
        block_y = [2.0 * end_y - yaw[-1 - i] for i in range(1, k)]
        if not block_p:
            block_p, block_y = [end_p], [end_y]
        pos.extend(block_p)
        yaw.extend(block_y)
    return TrajectorySeq.from_yaw(np.asarray(pos[:total_frames]), np.asarray(yaw[:total_frames]))


def blend_trajectory(p_input: TrajectorySeq, p_self: TrajectorySeq, alpha: float) -> TrajectorySeq:
    """alpha * input + (1 - alpha) * self; positions lerp, facings slerp."""
    if p_input.frames != p_self.frames:
        raise ValueError("trajectory lengths differ")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        return TrajectorySeq(p_input.positions.copy(), p_input.facings.copy())
    if alpha == 0.0:
        return TrajectorySeq(p_self.positions.copy(), p_self.facings.copy())
    pos = alpha * p_input.positions + (1.0 - alpha) * p_self.positions
    fac = rotation.slerp_rot6d(p_self.facings, p_input.facings, alpha)
    return TrajectorySeq(pos, fac)


def _smoothstep_down(m: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, m)
    return 1.0 - (3 * s**2 - 2 * s**3)


def blend_pose_rows(a: np.ndarray, b: np.ndarray, w_b: np.ndarray, joint_count: int) -> np.ndarray:
    """Per-frame blend of pose rows toward b with weight w_b; rotations on the
    manifold, root displacement and contacts linear."""
    j6 = joint_count * 6
    rot_a = a[:, :j6].reshape(len(a), joint_count, 6)
    rot_b = b[:, :j6].reshape(len(b), joint_count, 6)
    rot = rotation.slerp_rot6d(rot_a, rot_b, w_b[:, None])
    rest = (1.0 - w_b)[:, None] * a[:, j6:] + w_b[:, None] * b[:, j6:]
    return np.concatenate([rot.reshape(len(a), -1), rest], axis=1)


def dead_blend(
    source_tail: np.ndarray,
    dest_head: np.ndarray,
    joint_count: int,
    half_life: float = 5.0,
) -> np.ndarray:
    """Merge a clip seam: extrapolate the source past its end with per-channel
    velocity and exponential decay, then crossfade (smoothstep, 1 -> 0) into
    the destination. Returns M frames replacing dest_head."""
    m = len(dest_head)
    if m < 2 or len(source_tail) < 2:
        raise ValueError("dead blend needs at least 2 frames on each side")
    vel = source_tail[-1] - source_tail[-2]
    decay = 0.5 ** (1.0 / half_life)
    extrap = source_tail[-1][None] + np.cumsum(
        vel[None] * (decay ** np.arange(1, m + 1))[:, None], axis=0
    )
    w_source = _smoothstep_down(m)
    return blend_pose_rows(dest_head, extrap, w_source, joint_count)


def waypoints_to_trajectory(
    start: np.ndarray, waypoints: np.ndarray, frames: int, fps: float, speed: float = 0.8
) -> TrajectorySeq:
    """Window control path: advance from `start` along the waypoint polyline
    at `speed` m/s; facing follows the direction of travel."""
    pts = np.vstack([np.asarray(start, dtype=np.float64)[None], np.asarray(waypoints, dtype=np.float64)])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    dist = np.minimum(np.arange(frames) * speed / fps, cum[-1])
    pos = np.stack([np.interp(dist, cum, pts[:, c]) for c in range(2)], axis=1)
    deltas = np.diff(pos, axis=0)
    yaw = np.zeros(frames)
    for i, d in enumerate(deltas):
        yaw[i + 1] = np.arctan2(d[0], d[1]) if np.linalg.norm(d) > 1e-9 else yaw[i]
    yaw[0] = yaw[1] if frames > 1 else 0.0
    return TrajectorySeq.from_yaw(pos, yaw)


# ---------------------------------------------------------------- session


@dataclass
class ControlInput:
    """Per-step steering knobs. Trajectories/waypoints are world-frame."""
    trajectory_a: TrajectorySeq | None = None
    trajectory_b: TrajectorySeq | None = None
    waypoints_a: np.ndarray | None = None
    waypoints_b: np.ndarray | None = None
    mask_partner: bool = False
    gamma: float | None = None
    alpha: float | None = None
    activity: float = 2.0
    speed: float = 0.8

    def trajectory_for(self, char: str) -> TrajectorySeq | None:
        return self.trajectory_a if char == "A" else self.trajectory_b

    def waypoints_for(self, char: str) -> np.ndarray | None:
        return self.waypoints_a if char == "A" else self.waypoints_b


class SpeechBuffer:
    """Growable per-character feature stream indexed by playback frame."""

    def __init__(self, fps: float):
        self.fps = fps
        self.mel = np.zeros((0, 27))
        self.rhy = np.zeros(0)
        self.sem = np.zeros(0, dtype=np.int64)

    @property
    def frames(self) -> int:
        return len(self.rhy)

    def append(self, feats: SpeechFeatures) -> None:
        self.mel = np.concatenate([self.mel, feats.mel])
        self.rhy = np.concatenate([self.rhy, feats.rhythm])
        self.sem = np.concatenate([self.sem, feats.semantic])

    def window(self, start: int, stop: int) -> SpeechFeatures:
        """Frames [start, stop); negative indices yield silence padding."""
        if stop > self.frames:
            raise RuntimeError(
                f"speech underrun: need features up to frame {stop}, have {self.frames}"
            )
        n = stop - start
        mel = np.zeros((n, 27))
        rhy = np.zeros(n)
        sem = np.zeros(n, dtype=np.int64)
        lo = max(start, 0)
        mel[lo - start : n] = self.mel[lo:stop]
        rhy[lo - start : n] = self.rhy[lo:stop]
        sem[lo - start : n] = self.sem[lo:stop]
        return SpeechFeatures(mel, rhy, sem, self.fps)


@dataclass
class _CharState:
    frames: list[np.ndarray]      # committed world pose rows (incl. warm-up)
    lookahead: np.ndarray         # [L, W] generated but not yet committed
    spawn_pos: np.ndarray
    spawn_yaw: float


def t_pose_rows(skel: SkeletonDef, count: int, pos: np.ndarray, yaw: float) -> list[np.ndarray]:
    rot = np.tile(rotation.IDENTITY_6D, (skel.joint_count, 1))
    rot[0] = rotation.matrix_to_rot6d(rotation.yaw_matrix(yaw))
    rows = []
    for i in range(count):
        disp = (
            np.array([pos[0], skel.rest_height(0), pos[1]]) if i == 0 else np.zeros(3)
        )
        rows.append(np.concatenate([rot.reshape(-1), disp, np.ones(2)]))
    return rows


class GenerationSession:
    """Dual-character autoregressive state. Single owner; every mutation goes
    through session_step. Distinct sessions are fully independent."""

    def __init__(
        self,
        model: MotionDenoiser,
        skel: SkeletonDef,
        sched: diffusion.NoiseSchedule,
        normalizer: PoseNormalizer,
        fps: float = 30.0,
        stride: int = 15,
        gamma: float = 1.0,
        alpha: float = 0.5,
        seed: int = 0,
        dead_blend_frames: int = 10,
        spawn: dict | None = None,
        trajectory_model: tuple[TrajectoryDenoiser, diffusion.NoiseSchedule, PoseNormalizer] | None = None,
    ):
        self.model = model
        self.skel = skel
        self.sched = sched
        self.normalizer = normalizer
        self.fps = fps
        self.window = model.window
        self.past = model.past
        self.future = model.window - model.past
        if not 1 <= stride <= self.future:
            raise ValueError(f"stride must lie in [1, {self.future}]")
        self.stride = stride
        self.gamma = gamma
        self.alpha = alpha
        self.dead_blend_frames = dead_blend_frames
        self.generator = torch.Generator().manual_seed(seed)
        self.trajectory_model = trajectory_model
        self.latency_stats: list[dict] = []
        spawn = spawn or {
            "A": (np.array([0.0, -0.75]), 0.0),
            "B": (np.array([0.0, 0.75]), np.pi),
        }
        self.chars: dict[str, _CharState] = {}
        self.speech: dict[str, SpeechBuffer] = {}
        for c in ("A", "B"):
            pos, yaw = spawn[c]
            self.chars[c] = _CharState(
                frames=t_pose_rows(skel, self.past, np.asarray(pos, dtype=np.float64), yaw),
                lookahead=np.zeros((0, skel.pose_width)),
                spawn_pos=np.asarray(pos, dtype=np.float64),
                spawn_yaw=yaw,
            )
            buf = SpeechBuffer(fps)
            self.speech[c] = buf

    # -- frame index bookkeeping: generated index g, playback frame g - past

    @property
    def playhead(self) -> int:
        """Committed generated-frame count (includes the warm-up padding)."""
        return len(self.chars["A"].frames)

    @property
    def emitted(self) -> int:
        return self.playhead - self.past

    def append_speech(self, char: str, feats: SpeechFeatures) -> None:
        self.speech[char].append(feats)

    def speech_ready(self) -> bool:
        need = self.emitted + self.future
        return all(buf.frames >= need for buf in self.speech.values())

    def _generated(self, char: str) -> np.ndarray:
        st = self.chars[char]
        if len(st.lookahead):
            return np.vstack([np.stack(st.frames), st.lookahead])
        return np.stack(st.frames)

    def _as_clip(self, pose_rows: np.ndarray) -> MotionClip:
        return MotionClip.from_pose_array(pose_rows, self.fps)

    def _self_trajectory(self, char: str) -> TrajectorySeq:
        """HFTE-extended path from the last 10 generated frames (lookahead
        included), covering the window [playhead - past, playhead + future)."""
        gen = self._generated(char)
        traj = clip_root_trajectory(self._as_clip(gen))
        k = min(self.past, traj.frames)
        recent = TrajectorySeq(traj.positions[-k:].copy(), traj.facings[-k:].copy())
        missing = max(self.playhead + self.future - len(gen), 0)
        extended = hfte_extend(recent, k + missing)
        feats = np.vstack([traj.to_features(), extended.to_features()[k:]])
        start = self.playhead - self.past
        stop = self.playhead + self.future
        return TrajectorySeq.from_features(feats[start:stop])

    def session_step(self, controls: ControlInput | None = None) -> dict[str, np.ndarray]:
        """Generate one window for both characters; returns `stride` playable
        world-frame pose rows per character."""
        controls = controls or ControlInput()
        t0 = time.perf_counter()
        gamma = self.gamma if controls.gamma is None else controls.gamma
        start = self.playhead - self.past
        stop = self.playhead + self.future
        # speech is indexed by playback frame: generated index g maps to g - past
        windows = {
            c: self.speech[c].window(start - self.past, stop - self.past) for c in ("A", "B")
        }

        blend_ms = 0.0
        cond_inputs = {}
        for c in ("A", "B"):
            tb0 = time.perf_counter()
            p_self = self._self_trajectory(c)
            alpha = self.alpha if controls.alpha is None else controls.alpha
            p_input = controls.trajectory_for(c)
            if p_input is None and controls.waypoints_for(c) is not None:
                cur = p_self.positions[self.past - 1]
                p_input = waypoints_to_trajectory(
                    cur, controls.waypoints_for(c), self.window, self.fps, controls.speed
                )
                if controls.alpha is None:
                    alpha = 0.9  # explicit waypoint goals get a stronger pull
            if p_input is None:
                p_input, alpha = p_self, 0.0
            if p_input.frames != self.window:
                raise ValueError(
                    f"control trajectory must cover {self.window} frames, got {p_input.frames}"
                )
            p_blend = blend_trajectory(p_input, p_self, alpha)
            cond_inputs[c] = p_blend
            blend_ms += (time.perf_counter() - tb0) * 1000

        td0 = time.perf_counter()
        csets = {}
        xforms = {}
        for c in ("A", "B"):
            partner = "B" if c == "A" else "A"
            full_self = self._as_clip(np.stack(self.chars[c].frames))
            full_partner = self._as_clip(np.stack(self.chars[partner].frames))
            past_self_world = full_self.slice(start, self.playhead)
            past_partner_world = full_partner.slice(start, self.playhead)
            # local frame anchored at the window's first frame of self
            traj_self = clip_root_trajectory(full_self)
            anchor_pos = traj_self.positions[start]
            anchor_yaw = traj_self.yaw_angles()[start]
            xform = PlanarTransform(offset=anchor_pos.copy(), heading=float(anchor_yaw))
            xforms[c] = xform
            past_self = transform_clip(past_self_world, xform)
            past_partner = transform_clip(past_partner_world, xform)
            p_local = transform_trajectory(cond_inputs[c], xform)
            sw, pw = windows[c], windows[partner]
            csets[c] = ConditionSet(
                past_self=torch.as_tensor(past_self.to_pose_array(), dtype=torch.float32)[None],
                trajectory=torch.as_tensor(p_local.to_features(), dtype=torch.float32)[None],
                speech_mel=torch.as_tensor(sw.mel, dtype=torch.float32)[None],
                speech_rhythm=torch.as_tensor(sw.rhythm, dtype=torch.float32)[None],
                speech_sem=torch.as_tensor(sw.semantic)[None],
                partner_past=torch.as_tensor(past_partner.to_pose_array(), dtype=torch.float32)[None],
                partner_mel=torch.as_tensor(pw.mel, dtype=torch.float32)[None],
                partner_rhythm=torch.as_tensor(pw.rhythm, dtype=torch.float32)[None],
                partner_sem=torch.as_tensor(pw.semantic)[None],
                mask_partner=controls.mask_partner,
            )

        out = {}
        denoise_ms = 0.0
        for c in ("A", "B"):
            tdn = time.perf_counter()
            cset = csets[c]

            def cond_fn(x_t, t, _c=cset):
                tv = torch.full((1,), t, dtype=torch.long)
                with torch.no_grad():
                    return self.model(x_t, tv, _c)

            def uncond_fn(x_t, t, _c=cset):
                masked = copy.copy(_c)
                masked.mask_partner = True
                tv = torch.full((1,), t, dtype=torch.long)
                with torch.no_grad():
                    return self.model(x_t, tv, masked)

            x0 = diffusion.sample_loop(
                cond_fn,
                (1, self.future, self.skel.pose_width),
                self.sched,
                generator=self.generator,
                uncond_denoise=None if controls.mask_partner else uncond_fn,
                gamma=gamma,
            )
            local_rows = self.normalizer.decode(x0)[0].numpy().astype(np.float64)
            world_rows = _rotate_pose_rows(local_rows, xforms[c].heading, self.skel.joint_count)
            denoise_ms += (time.perf_counter() - tdn) * 1000

            st = self.chars[c]
            m = min(self.dead_blend_frames, len(world_rows))
            tail = np.stack(st.frames[-max(2, m) :])
            world_rows[:m] = dead_blend(tail, world_rows[:m], self.skel.joint_count)
            st.frames.extend(world_rows[: self.stride])
            st.lookahead = world_rows[self.stride :]
            out[c] = world_rows[: self.stride].copy()

        total_ms = (time.perf_counter() - t0) * 1000
        self.latency_stats.append(
            {"denoise_ms": denoise_ms, "blend_ms": blend_ms, "total_ms": total_ms}
        )
        return out

    @property
    def last_stats(self) -> dict[str, float]:
        return self.latency_stats[-1] if self.latency_stats else {}

    def emitted_clip(self, char: str) -> MotionClip:
        """All played frames (warm-up excluded) as a world-frame clip."""
        st = self.chars[char]
        rows = np.stack(st.frames)
        full = self._as_clip(rows)
        pos = full.root_positions()
        played = rows[self.past :].copy()
        disp = np.diff(pos[self.past - 1 :], axis=0)
        if len(played):
            played[:, self.skel.joint_count * 6 : self.skel.joint_count * 6 + 3] = disp
            played[0, self.skel.joint_count * 6 : self.skel.joint_count * 6 + 3] = pos[self.past]
        return self._as_clip(played)


def _pad_rows(arr: np.ndarray, count: int) -> np.ndarray:
    if len(arr) >= count:
        return arr[:count]
    widths = ((0, count - len(arr)),) + ((0, 0),) * (arr.ndim - 1)
    return np.pad(arr, widths)


def predict_trajectories(
    traj_model: TrajectoryDenoiser,
    sched: diffusion.NoiseSchedule,
    normalizer: PoseNormalizer,
    initial: np.ndarray,          # [2, 8] world start state per character
    feats: dict[str, SpeechFeatures],
    n_frames: int,
    activity: float = 2.0,
    targets: np.ndarray | None = None,
    seed: int = 0,
) -> dict[str, TrajectorySeq]:
    """Two-stage driver, step one: diffuse joint root paths for both
    characters over the whole duration, window by window."""
    window = traj_model.window
    generator = torch.Generator().manual_seed(seed)
    state = np.asarray(initial, dtype=np.float64).copy()
    rows = {"A": [state[0]], "B": [state[1]]}
    start = 0
    while start + 1 < n_frames:
        stop = min(start + window, n_frames)
        mel = np.stack([
            _pad_rows(feats["A"].mel[start:stop], window),
            _pad_rows(feats["B"].mel[start:stop], window),
        ])
        sem = np.stack([
            _pad_rows(feats["A"].semantic[start:stop], window),
            _pad_rows(feats["B"].semantic[start:stop], window),
        ])
        cset = TrajectoryConditionSet(
            initial_state=torch.as_tensor(state, dtype=torch.float32)[None],
            speech_mel=torch.as_tensor(mel, dtype=torch.float32)[None],
            speech_sem=torch.as_tensor(sem)[None],
            activity=torch.as_tensor([activity], dtype=torch.float32),
            targets=torch.zeros(1, 2, 2) if targets is None else torch.as_tensor(targets, dtype=torch.float32)[None],
            mask_targets=targets is None,
        )

        def fn(x_t, t, _c=cset):
            with torch.no_grad():
                return traj_model(x_t, torch.full((1,), t, dtype=torch.long), _c)

        x0 = diffusion.sample_loop(fn, (1, window, 2, 8), sched, generator=generator)
        flat = normalizer.decode(x0.reshape(1, window, -1)).reshape(window, 2, 8).numpy()
        # pin the window start to the current state for continuity
        flat = flat.astype(np.float64)
        flat[:, :, :2] += (state[:, :2] - flat[0, :, :2])[None]
        take = stop - start - (1 if start else 0)
        for ci, c in enumerate(("A", "B")):
            rows[c].extend(flat[1 : 1 + take, ci])
        state = flat[stop - start - 1]
        start = stop - 1
    out = {}
    for c in ("A", "B"):
        arr = np.asarray(rows[c][:n_frames])
        out[c] = TrajectorySeq.from_features(arr)
    return out


def generate_offline(
    session: GenerationSession,
    feats_a: SpeechFeatures,
    feats_b: SpeechFeatures,
    duration: float,
    controls: ControlInput | None = None,
) -> TwoPersonClip:
    """Run the session until `duration` seconds are emitted and package the
    played frames. Without explicit control trajectories, a trajectory model
    attached to the session drives the roots (two-stage generation)."""
    n_frames = int(round(duration * session.fps))
    session.append_speech("A", feats_a)
    session.append_speech("B", feats_b)
    controls = controls or ControlInput()
    auto_traj = None
    if controls.trajectory_a is None and controls.waypoints_a is None and session.trajectory_model:
        tm, tsched, tnorm = session.trajectory_model
        initial = np.stack([
            np.concatenate([
                session.chars[c].spawn_pos,
                rotation.matrix_to_rot6d(rotation.yaw_matrix(session.chars[c].spawn_yaw)),
            ])
            for c in ("A", "B")
        ])
        auto_traj = predict_trajectories(
            tm, tsched, tnorm, initial, {"A": feats_a, "B": feats_b},
            n_frames + session.window, activity=controls.activity,
        )
    steps = int(np.ceil(n_frames / session.stride))
    for _ in range(steps):
        if not session.speech_ready():
            pad = SpeechFeatures(np.zeros((session.window, 27)), np.zeros(session.window),
                                 np.zeros(session.window, dtype=np.int64), session.fps)
            session.append_speech("A", pad)
            session.append_speech("B", pad)
        step_controls = controls
        if auto_traj is not None:
            s = session.emitted
            step_controls = copy.copy(controls)
            step_controls.trajectory_a = _traj_window(auto_traj["A"], s - session.past, session.window)
            step_controls.trajectory_b = _traj_window(auto_traj["B"], s - session.past, session.window)
            if step_controls.alpha is None:
                step_controls.alpha = 0.5
        session.session_step(step_controls)
    clip_a = session.emitted_clip("A")
    clip_b = session.emitted_clip("B")
    return TwoPersonClip(clip_a.slice(0, n_frames), clip_b.slice(0, n_frames))


def _traj_window(traj: TrajectorySeq, start: int, frames: int) -> TrajectorySeq:
    lo = max(start, 0)
    hi = min(start + frames, traj.frames)
    feats = traj.to_features()[lo:hi]
    if start < 0:
        feats = np.vstack([np.repeat(feats[:1], -start, axis=0), feats])
    if len(feats) < frames:
        feats = np.vstack([feats, np.repeat(feats[-1:], frames - len(feats), axis=0)])
    return TrajectorySeq.from_features(feats)


def _rotate_pose_rows(rows: np.ndarray, heading: float, joint_count: int) -> np.ndarray:
    """Local -> world: rotate root rotations and displacement deltas by the
    local frame's heading. Rows are deltas only, so no translation applies."""
    out = rows.copy()
    j6 = joint_count * 6
    rot = rotation.yaw_matrix(heading)
    root6 = rows[:, :6]
    try:
        mats = rotation.rot6d_to_matrix(root6)
    except rotation.DegenerateRotationError:
        # raw network output can momentarily degenerate; snap to identity
        mats = np.tile(np.eye(3), (len(rows), 1, 1))
    out[:, :6] = rotation.matrix_to_rot6d(rot @ mats)
    out[:, j6 : j6 + 3] = rows[:, j6 : j6 + 3] @ rot.T
    out[:, j6 + 3 :] = np.clip(rows[:, j6 + 3 :], 0.0, 1.0)
    return out
