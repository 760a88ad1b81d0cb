"""Multi-conditional transformer denoisers.

Each condition group gets its own per-frame linear tokenizer; group token
runs are concatenated behind a timestep token and encoded together with the
noisy motion tokens. Masked groups are swapped for a learned null embedding
before anything touches their payload, so masked content can never leak.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .skeleton import SkeletonDef

# Fixed token layout for the motion denoiser; serialized with checkpoints.
MOTION_CONDITION_ORDER = ("past_self", "trajectory", "speech", "partner_past", "partner_speech")
TRAJ_CONDITION_ORDER = ("initial_state", "speech", "activity", "targets")

SEM_EMBED_DIM = 16
TRAJ_FEAT_DIM = 8  # planar position (2) + facing 6D


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 4
    heads: int = 4
    hidden: int = 256
    feed_forward: int = 2048
    dropout: float = 0.1
    codebook_size: int = 512

    def __post_init__(self):
        if min(self.layers, self.heads, self.hidden, self.feed_forward) <= 0:
            raise ValueError("dimensions must be positive")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")

    def to_dict(self) -> dict:
        return self.__dict__.copy()


TINY_CONFIG = DenoiserConfig(layers=2, heads=2, hidden=64, feed_forward=128, dropout=0.0, codebook_size=64)


@dataclass
class ConditionSet:
    """The five-group condition bundle for one generation window.

    Time-indexed tensors carry a leading batch dim: past motion [B, P, W],
    trajectory [B, N, 8], speech mel [B, N, 27] / rhythm [B, N] /
    semantic [B, N] (int ids).
    """
    past_self: torch.Tensor
    trajectory: torch.Tensor
    speech_mel: torch.Tensor
    speech_rhythm: torch.Tensor
    speech_sem: torch.Tensor
    partner_past: torch.Tensor
    partner_mel: torch.Tensor
    partner_rhythm: torch.Tensor
    partner_sem: torch.Tensor
    mask_partner: bool = False
    mask_speech: bool = False
    mask_trajectory: bool = False

    def masked_groups(self) -> set[str]:
        out = set()
        if self.mask_partner:
            out |= {"partner_past", "partner_speech"}
        if self.mask_speech:
            out.add("speech")
        if self.mask_trajectory:
            out.add("trajectory")
        return out


@dataclass
class TrajectoryConditionSet:
    """Conditions for joint two-character trajectory prediction."""
    initial_state: torch.Tensor   # [B, 2, 8] per-character start pos+facing
    speech_mel: torch.Tensor      # [B, 2, N, 27]
    speech_sem: torch.Tensor      # [B, 2, N] int ids
    activity: torch.Tensor        # [B] scalar in [0, 10]
    targets: torch.Tensor         # [B, 2, 2] planar goals
    mask_targets: bool = False

    def __post_init__(self):
        act = self.activity
        if torch.any(act < 0) or torch.any(act > 10):
            raise ValueError("activity level must lie in [0, 10]")


class TimestepEmbedding(nn.Module):
    """Sinusoidal step encoding followed by a two-layer SiLU projection."""

    def __init__(self, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.proj = nn.Sequential(nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, hidden))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.hidden // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
        ang = t.float()[:, None] * freqs[None]
        enc = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
        if enc.shape[1] < self.hidden:
            enc = torch.nn.functional.pad(enc, (0, self.hidden - enc.shape[1]))
        return self.proj(enc)


class PositionalEncoding(nn.Module):
    def __init__(self, hidden: int, max_len: int = 512):
        super().__init__()
        pos = torch.arange(max_len)[:, None]
        div = torch.exp(-math.log(10000.0) * torch.arange(0, hidden, 2) / hidden)
        pe = torch.zeros(max_len, hidden)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        self.register_buffer("pe", pe, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.pe[: x.shape[1]]


class GroupTokenizer(nn.Module):
    """Per-frame linear embedding for one condition group, with a learned
    null token substituted when the group is masked."""

    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, hidden)
        self.null_token = nn.Parameter(torch.zeros(hidden))
        nn.init.normal_(self.null_token, std=0.02)

    def forward(self, x: torch.Tensor, masked: bool) -> torch.Tensor:
        if masked:
            b, n = x.shape[0], x.shape[1]
            return self.null_token[None, None].expand(b, n, -1)
        return self.linear(x)


def _build_encoder(cfg: DenoiserConfig) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=cfg.hidden,
        nhead=cfg.heads,
        dim_feedforward=cfg.feed_forward,
        dropout=cfg.dropout,
        activation="gelu",
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)


class MotionDenoiser(nn.Module):
    """Predicts the clean future-motion window from its noisy version, the
    diffusion step, and the five condition groups."""

    def __init__(self, skel: SkeletonDef, cfg: DenoiserConfig, window: int = 45, past: int = 10):
        super().__init__()
        self.cfg = cfg
        self.window = window
        self.past = past
        self.future = window - past
        self.pose_width = skel.pose_width
        h = cfg.hidden
        speech_dim = 27 + 1 + SEM_EMBED_DIM
        self.sem_embed = nn.Embedding(cfg.codebook_size, SEM_EMBED_DIM)
        self.time_embed = TimestepEmbedding(h)
        self.pos_enc = PositionalEncoding(h)
        self.x_in = nn.Linear(self.pose_width, h)
        self.tokenizers = nn.ModuleDict(
            {
                "past_self": GroupTokenizer(self.pose_width, h),
                "trajectory": GroupTokenizer(TRAJ_FEAT_DIM, h),
                "speech": GroupTokenizer(speech_dim, h),
                "partner_past": GroupTokenizer(self.pose_width, h),
                "partner_speech": GroupTokenizer(speech_dim, h),
            }
        )
        self.encoder = _build_encoder(cfg)
        self.x_out = nn.Linear(h, self.pose_width)

    def _speech_feat(self, mel: torch.Tensor, rhy: torch.Tensor, sem: torch.Tensor, masked: bool) -> torch.Tensor:
        if masked:
            # payload must not be touched; tokenizer substitutes the null token
            b, n = mel.shape[0], mel.shape[1]
            return mel.new_zeros(b, n, 27 + 1 + SEM_EMBED_DIM)
        sem_e = self.sem_embed(sem.long().clamp(0, self.cfg.codebook_size - 1))
        return torch.cat([mel, rhy[..., None], sem_e], dim=-1)

    def embed_conditions(self, c: ConditionSet, t: torch.Tensor) -> torch.Tensor:
        """Token sequence: [timestep, past_self*, trajectory*, speech*,
        partner_past*, partner_speech*], positionally encoded per group."""
        masked = c.masked_groups()
        groups = {
            "past_self": c.past_self,
            "trajectory": c.trajectory,
            "speech": self._speech_feat(c.speech_mel, c.speech_rhythm, c.speech_sem, "speech" in masked),
            "partner_past": c.partner_past,
            "partner_speech": self._speech_feat(
                c.partner_mel, c.partner_rhythm, c.partner_sem, "partner_speech" in masked
            ),
        }
        toks = [self.time_embed(t)[:, None]]
        for name in MOTION_CONDITION_ORDER:
            data = groups[name]
            tok = self.tokenizers[name](data, name in masked)
            toks.append(self.pos_enc(tok))
        return torch.cat(toks, dim=1)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, c: ConditionSet) -> torch.Tensor:
        if x_t.shape[-1] != self.pose_width or x_t.shape[-2] != self.future:
            raise ValueError(
                f"expected noisy window [B, {self.future}, {self.pose_width}], got {tuple(x_t.shape)}"
            )
        cond = self.embed_conditions(c, t)
        x_tok = self.pos_enc(self.x_in(x_t))
        seq = torch.cat([cond, x_tok], dim=1)
        out = self.encoder(seq)
        return self.x_out(out[:, -self.future :])


class TrajectoryDenoiser(nn.Module):
    """Predicts clean two-character trajectory windows jointly (characters
    stacked on the feature axis so their relation is modeled in one pass)."""

    def __init__(self, cfg: DenoiserConfig, window: int = 45):
        super().__init__()
        self.cfg = cfg
        self.window = window
        self.feat = 2 * TRAJ_FEAT_DIM
        h = cfg.hidden
        speech_dim = 2 * (27 + SEM_EMBED_DIM)
        self.sem_embed = nn.Embedding(cfg.codebook_size, SEM_EMBED_DIM)
        self.time_embed = TimestepEmbedding(h)
        self.pos_enc = PositionalEncoding(h)
        self.x_in = nn.Linear(self.feat, h)
        self.tokenizers = nn.ModuleDict(
            {
                "initial_state": GroupTokenizer(2 * TRAJ_FEAT_DIM, h),
                "speech": GroupTokenizer(speech_dim, h),
                "activity": GroupTokenizer(1, h),
                "targets": GroupTokenizer(4, h),
            }
        )
        self.encoder = _build_encoder(cfg)
        self.x_out = nn.Linear(h, self.feat)

    def embed_conditions(self, c: TrajectoryConditionSet, t: torch.Tensor) -> torch.Tensor:
        b = c.initial_state.shape[0]
        if c.mask_targets:
            targets = c.targets.new_zeros(b, 1, 4)
        else:
            targets = c.targets.reshape(b, 1, 4)
        sem_e = self.sem_embed(c.speech_sem.long().clamp(0, self.cfg.codebook_size - 1))
        speech = torch.cat([c.speech_mel, sem_e], dim=-1)          # [B, 2, N, 27+E]
        speech = speech.permute(0, 2, 1, 3).reshape(b, speech.shape[2], -1)
        groups = {
            "initial_state": c.initial_state.reshape(b, 1, -1),
            "speech": speech,
            "activity": c.activity.reshape(b, 1, 1),
            "targets": targets,
        }
        toks = [self.time_embed(t)[:, None]]
        for name in TRAJ_CONDITION_ORDER:
            tok = self.tokenizers[name](groups[name], name == "targets" and c.mask_targets)
            toks.append(self.pos_enc(tok))
        return torch.cat(toks, dim=1)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, c: TrajectoryConditionSet) -> torch.Tensor:
        """x_t: [B, N, 2, 8] noisy trajectory pair -> same-shape prediction."""
        b, n = x_t.shape[0], x_t.shape[1]
        if x_t.shape[2:] != (2, TRAJ_FEAT_DIM):
            raise ValueError(f"expected [B, N, 2, {TRAJ_FEAT_DIM}], got {tuple(x_t.shape)}")
        cond = self.embed_conditions(c, t)
        x_tok = self.pos_enc(self.x_in(x_t.reshape(b, n, -1)))
        out = self.encoder(torch.cat([cond, x_tok], dim=1))
        return self.x_out(out[:, -n:]).reshape(b, n, 2, TRAJ_FEAT_DIM)
