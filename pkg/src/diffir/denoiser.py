"""Noise-prediction network over the prior vector, and the reverse sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from . import schedule as sch
from .schedule import IPRVector, NoiseSchedule


@dataclass
class DenoiserConfig:
    ipr_dim: int = 256
    hidden_width: int = 1024
    num_layers: int = 4
    t_embed: str = "scalar_append"
    t_embed_dim: int = 16

    def __post_init__(self):
        if self.t_embed not in ("scalar_append", "sinusoidal"):
            raise ValueError(f"unknown timestep encoding {self.t_embed!r}")

    @property
    def t_width(self) -> int:
        return 1 if self.t_embed == "scalar_append" else self.t_embed_dim

    @property
    def in_width(self) -> int:
        return 2 * self.ipr_dim + self.t_width


def sinusoidal(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return torch.cat([ang.sin(), ang.cos()], dim=-1)


class Denoiser(nn.Module):
    """MLP eps_theta(Concat(Z_t, t, D)) with LeakyReLU hidden layers."""

    def __init__(self, cfg: DenoiserConfig, T: int):
        super().__init__()
        self.cfg = cfg
        self.T = T
        widths = [cfg.in_width] + [cfg.hidden_width] * cfg.num_layers
        self.hidden = nn.ModuleList([nn.Linear(a, b) for a, b in zip(widths, widths[1:])])
        self.head = nn.Linear(widths[-1], cfg.ipr_dim)
        self.calls = 0

    def encode_t(self, t: int, n: int, dtype) -> torch.Tensor:
        tt = torch.full((n,), float(t), dtype=dtype)
        if self.cfg.t_embed == "scalar_append":
            return (tt / self.T)[:, None]
        return sinusoidal(tt, self.cfg.t_embed_dim)

    def forward(self, z_t: torch.Tensor, t: int, d: torch.Tensor) -> torch.Tensor:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        if z_t.shape[-1] != self.cfg.ipr_dim or d.shape[-1] != self.cfg.ipr_dim:
            raise ValueError("prior/condition width does not match the denoiser")
        self.calls += 1
        x = torch.cat([z_t, self.encode_t(t, z_t.shape[0], z_t.dtype), d], dim=-1)
        for layer in self.hidden:
            x = F.leaky_relu(layer(x), 0.2)
        return self.head(x)


def denoise_eps(net: Denoiser, z_t: IPRVector, t: int, d: torch.Tensor) -> torch.Tensor:
    return net(z_t.values, t, d)


def reverse_loop(
    net: Denoiser,
    s: NoiseSchedule,
    z_T: torch.Tensor,
    d: torch.Tensor,
    noise_mode: str = sch.DETERMINISTIC,
    rng: Optional[torch.Generator] = None,
    detach_steps: bool = False,
) -> torch.Tensor:
    """Run t = T..1, substituting eps_theta at every step.

    ``detach_steps`` cuts the graph between steps so only the last step
    backpropagates into earlier states.
    """
    state = IPRVector(z_T, s.T)
    for t in range(s.T, 0, -1):
        eps_hat = net(state.values, t, d)
        state = sch.reverse_step(s, state, t, eps_hat, noise_mode, rng)
        if detach_steps and t > 1:
            state = IPRVector(state.values.detach(), state.timestep)
    return state.values


def sample_ipr(
    net: Denoiser,
    cpen_s2,
    s: NoiseSchedule,
    lq: torch.Tensor,
    rng: torch.Generator,
    noise_mode: str = sch.DETERMINISTIC,
) -> IPRVector:
    """Inference: D = CPEN_S2(LQ) once, Z_T ~ N(0, I), then T reverse steps."""
    d = cpen_s2(lq)
    z_T = torch.randn(d.shape, generator=rng, dtype=d.dtype)
    return IPRVector(reverse_loop(net, s, z_T, d, noise_mode, rng), 0)
