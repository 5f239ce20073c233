"""Model configuration and the stage-1 / stage-2 assemblies."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
from torch import nn

from . import losses
from . import schedule as sch
from .cpen import CPENS1, CPENS2, CpenConfig
from .denoiser import Denoiser, DenoiserConfig, reverse_loop
from .dirformer import TASK_BLOCKS, DIRformer, DirformerConfig


@dataclass
class ModelConfig:
    task: str = "inpainting"
    cpen: CpenConfig = field(default_factory=CpenConfig)
    dirformer: DirformerConfig = field(default_factory=DirformerConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    T: int = 4
    beta_start: float = 0.1
    beta_end: float = 0.99

    def __post_init__(self):
        if isinstance(self.cpen, dict):
            self.cpen = CpenConfig(**self.cpen)
        if isinstance(self.dirformer, dict):
            self.dirformer = DirformerConfig(**self.dirformer)
        if isinstance(self.denoiser, dict):
            self.denoiser = DenoiserConfig(**self.denoiser)
        ipr = self.cpen.ipr_dim
        if self.dirformer.ipr_dim != ipr or self.denoiser.ipr_dim != ipr:
            raise ValueError(f"prior width mismatch: CPEN gives {ipr}")

    def schedule(self) -> sch.NoiseSchedule:
        return sch.make_schedule(self.T, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def full(cls, task: str = "inpainting", **kw) -> "ModelConfig":
        """Full-size configuration for ``task``."""
        cp = CpenConfig(c_prime=64)
        df = DirformerConfig(
            blocks=list(TASK_BLOCKS[task]),
            in_channels=4 if task == "inpainting" else 3,
            ipr_dim=cp.ipr_dim,
            composite_known=task == "inpainting",
        )
        return cls(task=task, cpen=cp, dirformer=df, denoiser=DenoiserConfig(ipr_dim=cp.ipr_dim), **kw)

    @classmethod
    def toy(cls, task: str = "inpainting", width: int = 8, c_prime: int = 8, blocks=(1, 1, 1, 1), **kw) -> "ModelConfig":
        cp = CpenConfig(c_prime=c_prime, num_res_blocks=1)
        df = DirformerConfig(
            channels=[width, 2 * width, 4 * width, 8 * width],
            heads=[1, 2, 4, 8],
            blocks=list(blocks),
            ffn_expansion=2.0,
            refinement_blocks=0,
            in_channels=4 if task == "inpainting" else 3,
            ipr_dim=cp.ipr_dim,
            composite_known=task == "inpainting",
        )
        den = DenoiserConfig(ipr_dim=cp.ipr_dim, hidden_width=4 * cp.ipr_dim, num_layers=2)
        return cls(task=task, cpen=cp, dirformer=df, denoiser=den, **kw)


class DiffIRS1(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.cpen_s1 = CPENS1(cfg.cpen)
        self.dirformer = DIRformer(cfg.dirformer)

    def forward(self, inputs, gt, mask=None):
        z = self.cpen_s1(gt, inputs[:, :3])
        return self.dirformer(inputs, z, mask), z


class DiffIRS2(nn.Module):
    """Stage-2 model. ``cpen_s1`` is kept only to produce training targets
    and is never updated."""

    def __init__(self, cfg: ModelConfig, s1: Optional[DiffIRS1] = None):
        super().__init__()
        self.cfg = cfg
        self.schedule = cfg.schedule()
        if s1 is None:
            s1 = DiffIRS1(cfg)
        self.cpen_s1 = copy.deepcopy(s1.cpen_s1)
        self.cpen_s1.requires_grad_(False)
        self.dirformer = copy.deepcopy(s1.dirformer)
        self.cpen_s2 = CPENS2.from_s1(s1.cpen_s1)
        self.denoiser = Denoiser(cfg.denoiser, cfg.T).to(next(s1.parameters()).dtype)

    def trainable(self, mode: str):
        groups = {
            "v1_no_dm": [self.cpen_s2, self.dirformer],
            "v2_traditional": [self.cpen_s2, self.denoiser],
            "v3_joint": [self.cpen_s2, self.denoiser, self.dirformer],
            "v4_joint_noise": [self.cpen_s2, self.denoiser, self.dirformer],
        }[mode]
        return [p for m in groups for p in m.parameters()]

    def estimate_ipr(self, lq_rgb, z_T, noise_mode=sch.DETERMINISTIC, rng=None, detach_steps=False):
        d = self.cpen_s2(lq_rgb)
        return reverse_loop(self.denoiser, self.schedule, z_T, d, noise_mode, rng, detach_steps)

    @torch.no_grad()
    def restore(self, inputs, mask, rng: torch.Generator, mode: str = "v3_joint"):
        """Inference (LQ only): sample Z_T ~ N(0, I) and run the reverse loop."""
        lq = inputs[:, :3]
        if mode == "v1_no_dm":
            return self.dirformer(inputs, self.cpen_s2(lq), mask)
        d = self.cpen_s2(lq)
        z_T = torch.randn(d.shape, generator=rng, dtype=d.dtype)
        noise = sch.STOCHASTIC if mode == "v4_joint_noise" else sch.DETERMINISTIC
        z_hat = reverse_loop(self.denoiser, self.schedule, z_T, d, noise, rng)
        return self.dirformer(inputs, z_hat, mask)


def joint_loss(model: DiffIRS2, inputs, gt, mask, eps, noise_mode=sch.DETERMINISTIC, rng=None,
               diff_loss: str = "l_diff", detach_steps: bool = False, rec_weight: float = 1.0, diff_weight: float = 1.0):
    """One joint-optimization objective: Z from CPEN_S1, diffuse to Z_T with
    ``eps``, full reverse loop, restore, L_rec + L_diff.

    The weights exist only for tests that isolate one term; training uses 1, 1.
    """
    lq = inputs[:, :3]
    with torch.no_grad():
        z = model.cpen_s1(gt, lq)
    z_T = sch.diffuse(model.schedule, sch.IPRVector(z, 0), eps).values
    z_hat = model.estimate_ipr(lq, z_T, noise_mode, rng, detach_steps)
    out = model.dirformer(inputs, z_hat, mask)
    rec = losses.l_rec(out, gt)
    dif = losses.VECTOR_LOSSES[diff_loss](z_hat, z)
    return rec_weight * rec + diff_weight * dif, rec, dif
