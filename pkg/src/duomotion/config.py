"""Flat key=value configuration files.

Format: one `key = value` per line; '#' starts a comment; no nesting.
Unknown keys are rejected by name so typos surface immediately.

Keys (defaults in parentheses):

    skeleton        builtin rig name or skeleton file path   (tiny9)
    fps             motion frame rate                        (30)
    window          diffusion window length N                (45)
    past            past-context frames inside the window    (10)
    stride          frames committed per autoregressive step (15)
    diffusion_steps denoising step count                     (8)
    schedule        noise schedule: linear | cosine          (linear)
    layers          transformer layers                       (4)
    heads           attention heads                          (4)
    hidden          transformer width                        (256)
    feed_forward    feed-forward width                       (2048)
    dropout         transformer dropout                      (0.1)
    p_mask          partner-group mask probability           (0.15)
    lambda_pos      joint-position loss weight               (0.2)
    lambda_vel      joint-velocity loss weight               (0.5)
    epochs          training epochs                          (10)
    steps_per_epoch optimizer steps per epoch                (100)
    batch_size      training batch size                      (32)
    lr              learning rate                            (5e-4)
    seed            master random seed                       (0)
    gamma           guidance scale                           (1.0)
    alpha           trajectory control blend weight          (0.5)
    activity        trajectory-model activity level [0,10]   (2.0)
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    skeleton: str = "tiny9"
    fps: float = 30.0
    window: int = 45
    past: int = 10
    stride: int = 15
    diffusion_steps: int = 8
    schedule: str = "linear"
    layers: int = 4
    heads: int = 4
    hidden: int = 256
    feed_forward: int = 2048
    dropout: float = 0.1
    p_mask: float = 0.15
    lambda_pos: float = 0.2
    lambda_vel: float = 0.5
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_size: int = 32
    lr: float = 5e-4
    seed: int = 0
    gamma: float = 1.0
    alpha: float = 0.5
    activity: float = 2.0


def parse_config(text: str) -> Config:
    types = {f.name: f.type for f in fields(Config)}
    casts = {"str": str, "float": float, "int": int}
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, casts[types[key]](value))
        except ValueError:
            raise ConfigError(
                f"line {lineno}: bad value {value!r} for {key} (expected {types[key]})"
            ) from None
    if cfg.schedule not in ("linear", "cosine"):
        raise ConfigError(f"schedule must be linear or cosine, got {cfg.schedule!r}")
    if not 0 < cfg.past < cfg.window:
        raise ConfigError("need 0 < past < window")
    if not 0 < cfg.stride <= cfg.window - cfg.past:
        raise ConfigError("need 0 < stride <= window - past")
    return cfg


def load_config(path: str | Path) -> Config:
    return parse_config(Path(path).read_text())


def format_config(cfg: Config) -> str:
    return "\n".join(f"{f.name} = {getattr(cfg, f.name)}" for f in fields(Config)) + "\n"
