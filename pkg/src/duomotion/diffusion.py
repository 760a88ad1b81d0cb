"""Model-agnostic DDPM machinery with a clean-sample (x0) parameterization.

The denoiser predicts x0 directly; reverse steps sample the standard
posterior q(x_{t-1} | x_t, x0) and the final step is noiseless. Guidance
combines conditional and condition-masked predictions in x0 space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray       # [T] in (0, 1)
    alpha_bar: np.ndarray  # [T] strictly decreasing, (0, 1)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 1:
            raise ScheduleError("beta must be a nonempty 1D array")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ScheduleError("beta values must lie in (0, 1)")
        if not np.allclose(ab, np.cumprod(1.0 - beta)):
            raise ScheduleError("alpha_bar must equal cumprod(1 - beta)")
        if np.any(np.diff(ab) >= 0):
            raise ScheduleError("alpha_bar must be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.beta)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        beta = np.asarray(d["beta"], dtype=np.float64)
        return cls(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def make_schedule(steps: int = 8, kind: str = "linear") -> NoiseSchedule:
    """Linear betas scaled so alpha_bar[-1] ~ 1e-3, or a cosine schedule."""
    if steps < 1:
        raise ScheduleError("need at least one step")
    if kind == "linear":
        beta = np.linspace(1.0, 2.0, steps)
        # bisection on the global scale so the terminal alpha_bar hits ~1e-3
        lo, hi = 1e-6, 0.999 / beta.max()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.prod(1.0 - mid * beta) > 1e-3:
                lo = mid
            else:
                hi = mid
        beta = np.clip(lo * beta, 1e-6, 0.999)
    elif kind == "cosine":
        s = 0.008
        x = np.linspace(0, 1, steps + 1)
        ab = np.cos((x + s) / (1 + s) * np.pi / 2) ** 2
        ab = ab / ab[0]
        beta = np.clip(1.0 - ab[1:] / ab[:-1], 1e-6, 0.999)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def from_betas(beta: Sequence[float]) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    return NoiseSchedule(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def q_sample(x0: torch.Tensor, t: int, noise: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward noising: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    if not 0 <= t < sched.steps:
        raise ValueError(f"step {t} out of range [0, {sched.steps})")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def posterior_step(
    x_t: torch.Tensor, t: int, x0_hat: torch.Tensor, noise: torch.Tensor | None, sched: NoiseSchedule
) -> torch.Tensor:
    """One reverse step: sample q(x_{t-1} | x_t, x0_hat). t == 0 returns the
    posterior mean (which degenerates to x0_hat) with no noise."""
    if x0_hat.shape != x_t.shape:
        raise ValueError("x0_hat shape mismatch")
    if not 0 <= t < sched.steps:
        raise ValueError(f"step {t} out of range [0, {sched.steps})")
    beta_t = sched.beta[t]
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1] if t > 0 else 1.0
    alpha_t = 1.0 - beta_t
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 0:
        return mean
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    if noise is None:
        return mean
    if noise.shape != x_t.shape:
        raise ValueError("noise shape mismatch")
    return mean + np.sqrt(var) * noise


def cfg_combine(uncond_x0: torch.Tensor, cond_x0: torch.Tensor, gamma: float) -> torch.Tensor:
    """uncond + gamma * (cond - uncond), elementwise."""
    if uncond_x0.shape != cond_x0.shape:
        raise ValueError("guidance operand shapes differ")
    if gamma == 1.0:
        # exact identity: u + (c - u) rounds differently from c in float32
        return cond_x0
    return uncond_x0 + gamma * (cond_x0 - uncond_x0)


@dataclass(frozen=True)
class GuidanceConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError("gamma must be finite and >= 0")


def sample_loop(
    denoise: Callable[[torch.Tensor, int], torch.Tensor],
    shape: tuple[int, ...],
    sched: NoiseSchedule,
    *,
    generator: torch.Generator | None = None,
    seed: int | None = None,
    uncond_denoise: Callable[[torch.Tensor, int], torch.Tensor] | None = None,
    gamma: float = 1.0,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Full reverse loop from unit Gaussian noise. When `uncond_denoise` is
    given, each step applies classifier-free guidance with weight `gamma`.
    Deterministic for a fixed seed/generator."""
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else seed)
    x = torch.randn(shape, generator=generator, dtype=dtype)
    for t in reversed(range(sched.steps)):
        x0_hat = denoise(x, t)
        if x0_hat.shape != x.shape:
            raise ValueError(
                f"denoiser returned shape {tuple(x0_hat.shape)}, expected {tuple(x.shape)}"
            )
        if uncond_denoise is not None and gamma != 1.0:
            # at gamma == 1 cfg_combine returns the conditional estimate
            # verbatim, so the unconditional pass would be discarded anyway;
            # skipping it halves the per-step model cost
            x0_un = uncond_denoise(x, t)
            x0_hat = cfg_combine(x0_un, x0_hat, gamma)
        noise = torch.randn(shape, generator=generator, dtype=dtype) if t > 0 else None
        x = posterior_step(x, t, x0_hat, noise, sched)
    return x
