"""Stage-1 pretraining and stage-2 diffusion training (all ablation modes)."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, List, Optional

import torch

from . import losses
from . import schedule as sch
from .checkpoint import Checkpoint, from_module, load_into
from .data import PairDataset, batch_iter
from .losses import LossReport
from .model import DiffIRS1, DiffIRS2, ModelConfig, joint_loss

log = logging.getLogger(__name__)

MODES = ("v1_no_dm", "v2_traditional", "v3_joint", "v4_joint_noise")
SMOOTH_WINDOW = 20


class NumericError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: str = "s1"
    mode: str = "v3_joint"
    lr: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    batch_size: int = 8
    patch_size: int = 16
    steps: int = 100
    seed: int = 0
    diff_loss: str = "l_diff"
    backprop_all_steps: bool = True
    # stage 2 only: override the diffusion step count of the stage-1 config
    T: Optional[int] = None

    def __post_init__(self):
        if self.stage not in ("s1", "s2"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.diff_loss not in losses.VECTOR_LOSSES:
            raise ValueError(f"unknown diff loss {self.diff_loss!r}")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[LossReport]
    model: torch.nn.Module


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2))


def _check_finite(loss: torch.Tensor, step: int) -> None:
    if not math.isfinite(loss.item()):
        raise NumericError(f"non-finite loss {loss.item()} at step {step}")


def smoothed(values, window: int = SMOOTH_WINDOW):
    """(mean of the first window, mean of the last window)."""
    if len(values) < window:
        raise ValueError(f"need at least {window} values")
    return sum(values[:window]) / window, sum(values[-window:]) / window


def _meta(model_cfg: ModelConfig, cfg: TrainConfig, step: int, mode=None):
    return dict(
        config={"model": model_cfg.to_dict(), "train": asdict(cfg)},
        schedule=model_cfg.schedule().to_dict(),
        seed=cfg.seed,
        stage=cfg.stage,
        mode=mode,
        step=step,
    )


def build_s1(model_cfg: ModelConfig, seed: int) -> DiffIRS1:
    torch.manual_seed(seed)
    return DiffIRS1(model_cfg)


def pretrain_stage1(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    data: PairDataset,
    on_step: Optional[Callable[[int, LossReport, float], None]] = None,
) -> TrainResult:
    """Train CPEN_S1 and DIRformer together on L_rec."""
    if cfg.stage != "s1":
        raise ValueError("pretrain_stage1 needs stage='s1'")
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = build_s1(model_cfg, cfg.seed)
    opt = _adam(model.parameters(), cfg)
    batches = batch_iter(data, cfg.batch_size, cfg.patch_size, cfg.seed)
    history = []
    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter()
        b = next(batches)
        out, _ = model(b.inputs, b.gt, b.mask)
        loss = losses.l_rec(out, b.gt)
        _check_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        rep = LossReport(l_rec=loss.item(), l_diff=0.0, l_all=loss.item())
        history.append(rep)
        if on_step:
            on_step(step, rep, (time.perf_counter() - t0) * 1e3)
    ckpt = from_module(model, **_meta(model_cfg, cfg, cfg.steps))
    return TrainResult(ckpt, history, model)


def s1_from_checkpoint(ckpt: Checkpoint) -> DiffIRS1:
    model_cfg = ModelConfig.from_dict(ckpt.config["model"])
    model = DiffIRS1(model_cfg)
    load_into(model, ckpt)
    return model


def init_stage2(ckpt_s1: Checkpoint, seed: int, T: Optional[int] = None) -> DiffIRS2:
    """DIRformer and CPEN_S1 copy the stage-1 weights; CPEN_S2 copies CPEN_S1
    except its stem; the denoiser starts fresh."""
    if ckpt_s1 is None:
        raise ValueError("stage 2 needs a stage-1 checkpoint")
    if ckpt_s1.stage != "s1":
        raise ValueError(f"expected a stage-1 checkpoint, got stage {ckpt_s1.stage!r}")
    s1 = s1_from_checkpoint(ckpt_s1)
    model_cfg = s1.cfg if T is None else replace(s1.cfg, T=T)
    torch.manual_seed(seed + 1)
    return DiffIRS2(model_cfg, s1)


def s2_from_checkpoint(ckpt: Checkpoint) -> DiffIRS2:
    model_cfg = ModelConfig.from_dict(ckpt.config["model"])
    model = DiffIRS2(model_cfg)
    load_into(model, ckpt)
    return model


def train_stage2(
    cfg: TrainConfig,
    ckpt_s1: Checkpoint,
    data: PairDataset,
    on_step: Optional[Callable[[int, LossReport, float], None]] = None,
) -> TrainResult:
    if cfg.stage != "s2":
        raise ValueError("train_stage2 needs stage='s2'")
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = init_stage2(ckpt_s1, cfg.seed, cfg.T)
    s = model.schedule
    opt = _adam(model.trainable(cfg.mode), cfg)
    batches = batch_iter(data, cfg.batch_size, cfg.patch_size, cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 2)
    history = []
    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter()
        b = next(batches)
        lq = b.lq_rgb
        if cfg.mode == "v1_no_dm":
            out = model.dirformer(b.inputs, model.cpen_s2(lq), b.mask)
            total = rec = losses.l_rec(out, b.gt)
            dif = torch.zeros(())
        elif cfg.mode == "v2_traditional":
            with torch.no_grad():
                z = model.cpen_s1(b.gt, lq)
            t = int(torch.randint(1, s.T + 1, (1,), generator=gen))
            eps = torch.randn(z.shape, generator=gen)
            z_t = sch.diffuse_to(s, sch.IPRVector(z, 0), t, eps).values
            eps_hat = model.denoiser(z_t, t, model.cpen_s2(lq))
            total = dif = ((eps - eps_hat) ** 2).mean()
            rec = torch.tensor(float("nan"))
        else:
            eps = torch.randn((lq.shape[0], model.cfg.cpen.ipr_dim), generator=gen)
            noise = sch.STOCHASTIC if cfg.mode == "v4_joint_noise" else sch.DETERMINISTIC
            total, rec, dif = joint_loss(
                model, b.inputs, b.gt, b.mask, eps, noise, gen, cfg.diff_loss,
                detach_steps=not cfg.backprop_all_steps,
            )
        _check_finite(total, step)
        opt.zero_grad()
        total.backward()
        opt.step()
        rep = LossReport(l_rec=rec.item(), l_diff=dif.item(), l_all=total.item())
        history.append(rep)
        if on_step:
            on_step(step, rep, (time.perf_counter() - t0) * 1e3)
    ckpt = from_module(model, **_meta(model.cfg, cfg, cfg.steps, cfg.mode))
    return TrainResult(ckpt, history, model)
