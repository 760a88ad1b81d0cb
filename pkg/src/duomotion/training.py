"""Window dataset assembly, condition masking, the full loss stack, and the
optimization loops for the motion and trajectory denoisers."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import diffusion, motion as motion_mod
from .denoiser import (
    ConditionSet,
    DenoiserConfig,
    MotionDenoiser,
    TrajectoryConditionSet,
    TrajectoryDenoiser,
)
from .kinematics import forward_kinematics_torch
from .motion import MotionClip, TwoPersonClip, alternant_normalize, clip_root_trajectory
from .skeleton import SkeletonDef, format_skeleton, parse_skeleton
from .speech import SpeechFeatures

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class PairedSequence:
    """A two-person clip with per-character speech features at the motion rate."""
    pair: TwoPersonClip
    feats_a: SpeechFeatures
    feats_b: SpeechFeatures
    source_id: str = ""
    single_person: bool = False

    def __post_init__(self):
        n = self.pair.frames
        if self.feats_a.frames != n or self.feats_b.frames != n:
            raise ValueError("speech features must match clip frame count")


def pair_from_single(
    clip: MotionClip, feats: SpeechFeatures, source_id: str = ""
) -> PairedSequence:
    """Single-person data integration: the speaker doubles as their own partner."""
    twin = MotionClip(
        clip.fps,
        clip.rotations.copy(),
        clip.root_displacement.copy(),
        clip.contact_labels.copy(),
    )
    return PairedSequence(TwoPersonClip(clip, twin), feats, feats, source_id, single_person=True)


@dataclass
class TrainingWindow:
    x0: np.ndarray             # [F, W] future frames, local frame
    past_self: np.ndarray      # [P, W]
    partner_past: np.ndarray   # [P, W]
    trajectory: np.ndarray     # [N, 8] self root path over the full window
    self_mel: np.ndarray
    self_rhy: np.ndarray
    self_sem: np.ndarray
    partner_mel: np.ndarray
    partner_rhy: np.ndarray
    partner_sem: np.ndarray
    source_id: str = ""
    character: str = "A"
    masked: bool = False
    single_source: bool = False


@dataclass(frozen=True)
class LossWeights:
    lambda_pos: float = 0.2
    lambda_vel: float = 0.5
    samp: float = 1.0
    smo: float = 1.0
    # kept low: a heavy skate penalty fights root motion whenever stance
    # compensation is imperfect, stalling locomotion before it can be learned
    foot: float = 0.1

    def __post_init__(self):
        if min(self.lambda_pos, self.lambda_vel, self.samp, self.smo, self.foot) < 0:
            raise ValueError("loss weights must be nonnegative")


def _window_from_pair(
    seq: PairedSequence, start: int, char: str, window: int, past: int, yaw: float = 0.0
) -> TrainingWindow:
    stop = start + window
    sub = TwoPersonClip(
        seq.pair.clip_a.slice(start, stop), seq.pair.clip_b.slice(start, stop)
    )
    norm, _ = alternant_normalize(sub, char)
    if yaw != 0.0:
        aug = motion_mod.PlanarTransform(offset=np.zeros(2), heading=-yaw)
        norm = TwoPersonClip(
            motion_mod.transform_clip(norm.clip_a, aug),
            motion_mod.transform_clip(norm.clip_b, aug),
        )
    self_clip = norm.clip_a if char == "A" else norm.clip_b
    partner_clip = norm.clip_b if char == "A" else norm.clip_a
    self_feats = seq.feats_a if char == "A" else seq.feats_b
    partner_feats = seq.feats_b if char == "A" else seq.feats_a
    sf = self_feats.sliced(start, stop)
    pf = partner_feats.sliced(start, stop)
    pose_self = self_clip.to_pose_array()
    return TrainingWindow(
        x0=pose_self[past:],
        past_self=pose_self[:past],
        partner_past=partner_clip.to_pose_array()[:past],
        trajectory=clip_root_trajectory(self_clip).to_features(),
        self_mel=sf.mel, self_rhy=sf.rhythm, self_sem=sf.semantic,
        partner_mel=pf.mel, partner_rhy=pf.rhythm, partner_sem=pf.semantic,
        source_id=seq.source_id,
        character=char,
        single_source=seq.single_person,
    )


def build_window_dataset(
    sequences: list[PairedSequence],
    window: int = 45,
    past: int = 10,
    stride: int = 15,
    rng: np.random.Generator | None = None,
    augment_yaw: bool = False,
) -> list[TrainingWindow]:
    """Overlapping windows with random start offsets; one window per character
    per position. Clips shorter than the window are skipped (logged)."""
    rng = rng or np.random.default_rng(0)
    out: list[TrainingWindow] = []
    skipped = 0
    for seq in sequences:
        n = seq.pair.frames
        if n < window:
            skipped += 1
            continue
        offset = int(rng.integers(0, stride))
        starts = list(range(offset, n - window + 1, stride))
        if not starts:
            starts = [0]
        for start in starts:
            for char in ("A", "B"):
                yaw = float(rng.uniform(-np.pi, np.pi)) if augment_yaw else 0.0
                out.append(_window_from_pair(seq, start, char, window, past, yaw))
    if skipped:
        log.info("skipped %d clips shorter than %d frames", skipped, window)
    return out


def mask_conditions(
    w: TrainingWindow, p_mask: float = 0.15, rng: np.random.Generator | None = None
) -> TrainingWindow:
    """Flag the partner group (motion and speech jointly) masked with
    probability p_mask."""
    rng = rng or np.random.default_rng()
    w.masked = bool(rng.random() < p_mask)
    return w


@dataclass
class PoseNormalizer:
    mean: np.ndarray  # [W]
    std: np.ndarray   # [W], floored away from zero

    @classmethod
    def fit(cls, rows: np.ndarray, floor: float = 1e-3) -> "PoseNormalizer":
        rows = np.asarray(rows, dtype=np.float64)
        return cls(mean=rows.mean(axis=0), std=np.maximum(rows.std(axis=0), floor))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.mean, dtype=x.dtype, device=x.device)
        std = torch.as_tensor(self.std, dtype=x.dtype, device=x.device)
        return (x - mean) / std

    def decode(self, x: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.mean, dtype=x.dtype, device=x.device)
        std = torch.as_tensor(self.std, dtype=x.dtype, device=x.device)
        return x * std + mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseNormalizer":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def collate_conditions(windows: list[TrainingWindow], dtype=torch.float32) -> ConditionSet:
    def stack(attr):
        return torch.as_tensor(np.stack([getattr(w, attr) for w in windows]), dtype=dtype)

    c = ConditionSet(
        past_self=stack("past_self"),
        trajectory=stack("trajectory"),
        speech_mel=stack("self_mel"),
        speech_rhythm=stack("self_rhy"),
        speech_sem=torch.as_tensor(np.stack([w.self_sem for w in windows])),
        partner_past=stack("partner_past"),
        partner_mel=stack("partner_mel"),
        partner_rhythm=stack("partner_rhy"),
        partner_sem=torch.as_tensor(np.stack([w.partner_sem for w in windows])),
    )
    return c


def compute_motion_loss(
    x0: torch.Tensor,
    x0_hat: torch.Tensor,
    prev_last_frame: torch.Tensor,
    skel: SkeletonDef,
    weights: LossWeights = LossWeights(),
    fps: float = 30.0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of sample, FK-position, FK-velocity, seam-smoothness, and
    foot-contact losses. Velocities are fps-scaled so weights are
    frame-rate independent. Contact gating uses ground-truth labels from x0."""
    if x0_hat.shape != x0.shape:
        raise ValueError("prediction/target shape mismatch")
    j = skel.joint_count
    l_samp = torch.mean((x0_hat - x0) ** 2)

    def fk(pose):
        b, f, _ = pose.shape
        rot = pose[..., : j * 6].reshape(b, f, j, 6)
        disp = pose[..., j * 6 : j * 6 + 3]
        return forward_kinematics_torch(rot, disp, skel)

    pos_hat = fk(x0_hat)
    pos_gt = fk(x0)
    l_pos = torch.mean((pos_hat - pos_gt) ** 2)
    vel_hat = (pos_hat[:, 1:] - pos_hat[:, :-1]) * fps
    vel_gt = (pos_gt[:, 1:] - pos_gt[:, :-1]) * fps
    l_vel = torch.mean((vel_hat - vel_gt) ** 2)
    l_smo = torch.mean((x0_hat[:, 0] - prev_last_frame) ** 2)

    contacts = x0[..., j * 6 + 3 :]                       # [B, F, 2] ground truth
    foot_vel = vel_hat[:, :, list(skel.foot_indices), :]  # [B, F-1, 2, 3]
    gate = (contacts[:, 1:] > 0.5).to(foot_vel.dtype)     # contact at the arrival frame
    sq = (foot_vel ** 2).sum(dim=-1)
    denom = gate.sum().clamp(min=1.0)
    l_foot = (sq * gate).sum() / denom

    total = (
        weights.samp * l_samp
        + weights.lambda_pos * l_pos
        + weights.lambda_vel * l_vel
        + weights.smo * l_smo
        + weights.foot * l_foot
    )
    breakdown = {
        "samp": float(l_samp.detach()),
        "pos": float(l_pos.detach()),
        "vel": float(l_vel.detach()),
        "smo": float(l_smo.detach()),
        "foot": float(l_foot.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown


def compute_trajectory_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Joint MSE over both characters' windows: one MSE term per character."""
    if pred.shape != gt.shape:
        raise ValueError("trajectory prediction/target shape mismatch")
    loss_a = torch.mean((pred[..., 0, :] - gt[..., 0, :]) ** 2)
    loss_b = torch.mean((pred[..., 1, :] - gt[..., 1, :]) ** 2)
    return loss_a + loss_b


@dataclass
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_size: int = 32
    lr: float = 5e-4
    p_mask: float = 0.15
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)


def save_checkpoint(path: str | Path, payload: dict) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(Path(path), weights_only=False, map_location="cpu")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    return payload


def build_motion_checkpoint(
    model: MotionDenoiser,
    skel: SkeletonDef,
    sched: diffusion.NoiseSchedule,
    normalizer: PoseNormalizer,
    fps: float,
) -> dict:
    from .denoiser import MOTION_CONDITION_ORDER

    return {
        "version": CHECKPOINT_VERSION,
        "kind": "motion",
        "config": model.cfg.to_dict(),
        "condition_order": list(MOTION_CONDITION_ORDER),
        "window": model.window,
        "past": model.past,
        "fps": fps,
        "schedule": sched.to_dict(),
        "normalizer": normalizer.to_dict(),
        "skeleton": format_skeleton(skel),
        "state_dict": model.state_dict(),
    }


def load_motion_model(payload: dict) -> tuple[MotionDenoiser, SkeletonDef, diffusion.NoiseSchedule, PoseNormalizer]:
    skel = parse_skeleton(payload["skeleton"])
    cfg = DenoiserConfig(**payload["config"])
    model = MotionDenoiser(skel, cfg, window=payload["window"], past=payload["past"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    sched = diffusion.NoiseSchedule.from_dict(payload["schedule"])
    norm = PoseNormalizer.from_dict(payload["normalizer"])
    return model, skel, sched, norm


def train(
    model: MotionDenoiser,
    windows: list[TrainingWindow],
    skel: SkeletonDef,
    sched: diffusion.NoiseSchedule,
    cfg: TrainConfig = TrainConfig(),
    fps: float = 30.0,
    log_rows: list[dict] | None = None,
) -> dict:
    """Optimize the motion denoiser; returns a checkpoint payload."""
    if not windows:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    normalizer = PoseNormalizer.fit(np.concatenate([w.x0 for w in windows], axis=0))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    total_steps = cfg.epochs * cfg.steps_per_epoch
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(total_steps, 1))
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            batch_idx = rng.integers(0, len(windows), size=min(cfg.batch_size, len(windows)))
            batch = [windows[i] for i in batch_idx]
            cset = collate_conditions(batch)
            # the partner group is dropped for whole batches so masked samples
            # contribute exactly zero gradient to the partner tokenizers
            cset.mask_partner = bool(rng.random() < cfg.p_mask)
            x0 = torch.as_tensor(np.stack([w.x0 for w in batch]), dtype=torch.float32)
            prev_last = torch.as_tensor(
                np.stack([w.past_self[-1] for w in batch]), dtype=torch.float32
            )
            x0n = normalizer.encode(x0)
            t = int(rng.integers(0, sched.steps))
            noise = torch.randn(x0n.shape)
            x_t = diffusion.q_sample(x0n, t, noise, sched)
            t_vec = torch.full((x0.shape[0],), t, dtype=torch.long)
            pred = normalizer.decode(model(x_t, t_vec, cset))
            loss, breakdown = compute_motion_loss(
                x0, pred, prev_last, skel, cfg.weights, fps
            )
            if not np.isfinite(breakdown["total"]):
                raise RuntimeError(f"training diverged at step {step}: {breakdown}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            scheduler.step()
            step += 1
            if log_rows is not None:
                log_rows.append({"step": step, "lr": scheduler.get_last_lr()[0], **breakdown})
        log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, breakdown["total"])
    model.eval()
    return build_motion_checkpoint(model, skel, sched, normalizer, fps)


@dataclass
class TrajectoryWindow:
    """One joint two-character trajectory training example."""
    x0: np.ndarray         # [N, 2, 8]
    initial_state: np.ndarray  # [2, 8]
    mel: np.ndarray        # [2, N, 27]
    sem: np.ndarray        # [2, N]
    activity: float
    targets: np.ndarray    # [2, 2] last-frame planar positions


def activity_level(traj_a: np.ndarray, traj_b: np.ndarray, fps: float) -> float:
    """Scalar in [0, 10]: combined path length of both characters normalized
    as meters per second, clamped."""
    travel = 0.0
    for pos in (traj_a, traj_b):
        travel += float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())
    frames = max(len(traj_a) - 1, 1)
    rate = travel * fps / frames  # combined m/s
    return float(np.clip(rate * 2.0, 0.0, 10.0))


def build_trajectory_dataset(
    sequences: list[PairedSequence],
    window: int = 45,
    stride: int = 15,
    rng: np.random.Generator | None = None,
) -> list[TrajectoryWindow]:
    rng = rng or np.random.default_rng(0)
    out: list[TrajectoryWindow] = []
    for seq in sequences:
        n = seq.pair.frames
        if n < window:
            continue
        offset = int(rng.integers(0, stride))
        for start in range(offset, n - window + 1, stride):
            stop = start + window
            primary = "A" if rng.random() < 0.5 else "B"
            sub = TwoPersonClip(
                seq.pair.clip_a.slice(start, stop), seq.pair.clip_b.slice(start, stop)
            )
            norm, _ = alternant_normalize(sub, primary)
            ta = clip_root_trajectory(norm.clip_a).to_features()
            tb = clip_root_trajectory(norm.clip_b).to_features()
            x0 = np.stack([ta, tb], axis=1)
            fa = seq.feats_a.sliced(start, stop)
            fb = seq.feats_b.sliced(start, stop)
            out.append(
                TrajectoryWindow(
                    x0=x0,
                    initial_state=x0[0],
                    mel=np.stack([fa.mel, fb.mel]),
                    sem=np.stack([fa.semantic, fb.semantic]),
                    activity=activity_level(ta[:, :2], tb[:, :2], seq.pair.clip_a.fps),
                    targets=x0[-1, :, :2],
                )
            )
    return out


def collate_trajectory(batch: list[TrajectoryWindow], mask_targets: bool = False) -> TrajectoryConditionSet:
    return TrajectoryConditionSet(
        initial_state=torch.as_tensor(np.stack([w.initial_state for w in batch]), dtype=torch.float32),
        speech_mel=torch.as_tensor(np.stack([w.mel for w in batch]), dtype=torch.float32),
        speech_sem=torch.as_tensor(np.stack([w.sem for w in batch])),
        activity=torch.as_tensor([w.activity for w in batch], dtype=torch.float32),
        targets=torch.as_tensor(np.stack([w.targets for w in batch]), dtype=torch.float32),
        mask_targets=mask_targets,
    )


def build_trajectory_checkpoint(
    model: TrajectoryDenoiser, sched: diffusion.NoiseSchedule, normalizer: PoseNormalizer, fps: float
) -> dict:
    from .denoiser import TRAJ_CONDITION_ORDER

    return {
        "version": CHECKPOINT_VERSION,
        "kind": "trajectory",
        "config": model.cfg.to_dict(),
        "condition_order": list(TRAJ_CONDITION_ORDER),
        "window": model.window,
        "fps": fps,
        "schedule": sched.to_dict(),
        "normalizer": normalizer.to_dict(),
        "state_dict": model.state_dict(),
    }


def load_trajectory_model(payload: dict) -> tuple[TrajectoryDenoiser, diffusion.NoiseSchedule, PoseNormalizer]:
    cfg = DenoiserConfig(**payload["config"])
    model = TrajectoryDenoiser(cfg, window=payload["window"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, diffusion.NoiseSchedule.from_dict(payload["schedule"]), PoseNormalizer.from_dict(payload["normalizer"])


def train_trajectory(
    model: TrajectoryDenoiser,
    windows: list[TrajectoryWindow],
    sched: diffusion.NoiseSchedule,
    cfg: TrainConfig = TrainConfig(),
    fps: float = 30.0,
    p_mask_targets: float = 0.3,
) -> dict:
    if not windows:
        raise ValueError("empty trajectory dataset")
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    rows = np.concatenate([w.x0.reshape(len(w.x0), -1) for w in windows], axis=0)
    normalizer = PoseNormalizer.fit(rows)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(cfg.epochs * cfg.steps_per_epoch, 1)
    )
    model.train()
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            idx = rng.integers(0, len(windows), size=min(cfg.batch_size, len(windows)))
            batch = [windows[i] for i in idx]
            cset = collate_trajectory(batch, mask_targets=bool(rng.random() < p_mask_targets))
            x0 = torch.as_tensor(np.stack([w.x0 for w in batch]), dtype=torch.float32)
            b, n = x0.shape[0], x0.shape[1]
            x0n = normalizer.encode(x0.reshape(b, n, -1)).reshape(x0.shape)
            t = int(rng.integers(0, sched.steps))
            noise = torch.randn(x0n.shape)
            x_t = diffusion.q_sample(x0n, t, noise, sched)
            pred = model(x_t, torch.full((b,), t, dtype=torch.long), cset)
            pred = normalizer.decode(pred.reshape(b, n, -1)).reshape(x0.shape)
            loss = compute_trajectory_loss(pred, x0)
            if not torch.isfinite(loss):
                raise RuntimeError(f"trajectory training diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            scheduler.step()
        log.info("trajectory epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, float(loss.detach()))
    model.eval()
    return build_trajectory_checkpoint(model, sched, normalizer, fps)
