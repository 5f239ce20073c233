"""Diffusion-process math over the compact prior vector.

Forward process (closed form):
    Z_t = sqrt(abar_t) * Z + sqrt(1 - abar_t) * eps

Reverse step without variance injection:
    Z_{t-1} = (Z_t - eps_hat * (1 - alpha_t) / sqrt(1 - abar_t)) / sqrt(alpha_t)

The stochastic variant adds sigma_t * xi with
sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t and abar_0 = 1.

Timesteps are 1-based throughout: ``betas[t - 1]`` holds beta_t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_vars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """abar_t with the convention abar_0 = 1."""
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "betas": [float(b) for b in self.betas]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return schedule_from_betas(d["betas"])


@dataclass
class IPRVector:
    """A (batch of) prior vectors tagged with their diffusion timestep.

    ``values`` has shape (4C',) or (B, 4C'); 0 is the clean state.
    """

    values: torch.Tensor
    timestep: int = 0

    def __len__(self) -> int:
        return self.values.shape[-1]


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0:
        raise ValueError("betas must be a non-empty 1-D sequence")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior_vars = (1.0 - prev) / (1.0 - alpha_bars) * betas
    for arr in (betas, alphas, alpha_bars, posterior_vars):
        arr.flags.writeable = False
    return NoiseSchedule(len(betas), betas, alphas, alpha_bars, posterior_vars)


def make_schedule(T: int = 4, beta_start: float = 0.1, beta_end: float = 0.99) -> NoiseSchedule:
    """Linear beta schedule from ``beta_start`` (t=1) to ``beta_end`` (t=T).

    A single-step schedule uses ``beta_end`` so that abar_1 stays small.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    T = int(T)
    if T == 1:
        betas = np.array([beta_end], dtype=np.float64)
    else:
        steps = np.arange(T, dtype=np.float64)
        betas = beta_start + steps * (beta_end - beta_start) / (T - 1)
        betas[-1] = beta_end
    return schedule_from_betas(betas)


def _check_t(s: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= s.T:
        raise ValueError(f"timestep {t} outside [1, {s.T}]")


def _check_len(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def diffuse_to(s: NoiseSchedule, Z: IPRVector, t: int, eps: torch.Tensor) -> IPRVector:
    """Sample q(Z_t | Z) in one shot with the supplied noise."""
    if Z.timestep != 0:
        raise ValueError("diffusion starts from the clean state (timestep 0)")
    _check_t(s, t)
    _check_len(Z.values, eps)
    ab = s.alpha_bar(t)
    return IPRVector(ab**0.5 * Z.values + (1.0 - ab) ** 0.5 * eps, t)


def diffuse(s: NoiseSchedule, Z: IPRVector, eps: torch.Tensor) -> IPRVector:
    return diffuse_to(s, Z, s.T, eps)


def diffuse_step(s: NoiseSchedule, Z_prev: IPRVector, t: int, eps: torch.Tensor) -> IPRVector:
    """One Markov step q(Z_t | Z_{t-1})."""
    _check_t(s, t)
    if Z_prev.timestep != t - 1:
        raise ValueError(f"expected state at {t - 1}, got {Z_prev.timestep}")
    _check_len(Z_prev.values, eps)
    beta = float(s.betas[t - 1])
    return IPRVector((1.0 - beta) ** 0.5 * Z_prev.values + beta**0.5 * eps, t)


def posterior_mean(s: NoiseSchedule, Z_t: torch.Tensor, t: int, eps_hat: torch.Tensor) -> torch.Tensor:
    _check_t(s, t)
    alpha = float(s.alphas[t - 1])
    ab = float(s.alpha_bars[t - 1])
    return (Z_t - eps_hat * ((1.0 - alpha) / (1.0 - ab) ** 0.5)) / alpha**0.5


def reverse_step(
    s: NoiseSchedule,
    Z_t: IPRVector,
    t: int,
    eps_hat: torch.Tensor,
    noise_mode: str = DETERMINISTIC,
    rng: Optional[torch.Generator] = None,
) -> IPRVector:
    """Map Z_t to Z_{t-1} given a noise estimate.

    ``stochastic`` mode adds N(0, sigma_t^2) noise drawn from ``rng``.
    """
    _check_t(s, t)
    if Z_t.timestep != t:
        raise ValueError(f"expected state at {t}, got {Z_t.timestep}")
    _check_len(Z_t.values, eps_hat)
    mean = posterior_mean(s, Z_t.values, t, eps_hat)
    if noise_mode == DETERMINISTIC:
        return IPRVector(mean, t - 1)
    if noise_mode != STOCHASTIC:
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    if rng is None:
        raise ValueError("stochastic reverse step needs an rng")
    xi = torch.randn(mean.shape, generator=rng, dtype=mean.dtype, device=mean.device)
    return IPRVector(mean + float(s.posterior_vars[t - 1]) ** 0.5 * xi, t - 1)
