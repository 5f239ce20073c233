"""Training objectives.

All vector losses average over the last axis (4C') and then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch


@dataclass
class LossReport:
    l_rec: float = 0.0
    l_diff: float = 0.0
    l_all: float = 0.0
    l2: Optional[float] = None
    l_kl: Optional[float] = None


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _abs(x: torch.Tensor) -> torch.Tensor:
    # torch.abs already uses sign(0) = 0 as the subgradient at the kink
    return x.abs()


def l_rec(restored: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel error."""
    _same_shape(restored, gt)
    return _abs(gt - restored).mean()


def l_diff(z_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    _same_shape(z_hat, z)
    return _abs(z_hat - z).mean()


def l2(z_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    _same_shape(z_hat, z)
    return ((z_hat - z) ** 2).mean()


def l_kl(z_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """KL(softmax(z) || softmax(z_hat)), natural log, summed over the vector."""
    _same_shape(z_hat, z)
    log_p = torch.log_softmax(z, dim=-1)
    log_q = torch.log_softmax(z_hat, dim=-1)
    kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
    return kl.mean()


VECTOR_LOSSES = {"l_diff": l_diff, "l2": l2, "l_kl": l_kl}
