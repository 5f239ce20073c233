"""Compact prior extraction networks (CPEN).

CPEN_S1 sees ground truth and LQ together and produces the prior vector Z;
CPEN_S2 sees only the LQ image and produces the condition vector D. Both
share one layout and differ only in the stem's input channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .schedule import IPRVector


@dataclass
class CpenConfig:
    c_prime: int = 64
    unshuffle_factor: int = 4
    num_res_blocks: int = 4
    image_channels: int = 3

    @property
    def in_channels_s2(self) -> int:
        return self.image_channels * self.unshuffle_factor**2

    @property
    def in_channels_s1(self) -> int:
        return 2 * self.in_channels_s2

    @property
    def ipr_dim(self) -> int:
        return 4 * self.c_prime


def pixel_unshuffle(img: torch.Tensor, r: int) -> torch.Tensor:
    """Space-to-depth on (N, C, H, W): output channel c*r*r + i*r + j
    holds offset (i, j) of each r x r block of input channel c."""
    if r < 1:
        raise ValueError("unshuffle factor must be positive")
    h, w = img.shape[-2:]
    if h % r or w % r:
        raise ValueError(f"spatial size {h}x{w} not divisible by {r}")
    return F.pixel_unshuffle(img, r)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    return F.pixel_shuffle(x, r)


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(x), 0.2))


class CPEN(nn.Module):
    """Pixel-unshuffled input -> 1x1 stem -> residual blocks -> two stride-2
    stages (C' -> 2C' -> 4C') -> global average pool -> two linear layers."""

    def __init__(self, cfg: CpenConfig, in_channels: int):
        super().__init__()
        self.cfg = cfg
        c = cfg.c_prime
        self.stem = nn.Conv2d(in_channels, c, 1)
        self.body = nn.Sequential(*[ResBlock(c) for _ in range(cfg.num_res_blocks)])
        self.down1 = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1)
        self.fc1 = nn.Linear(4 * c, 4 * c)
        self.fc2 = nn.Linear(4 * c, 4 * c)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        x = pixel_unshuffle(x, self.cfg.unshuffle_factor)
        x = F.leaky_relu(self.stem(x), 0.2)
        x = self.body(x)
        x = F.leaky_relu(self.down1(x), 0.2)
        x = F.leaky_relu(self.down2(x), 0.2)
        x = x.mean(dim=(-2, -1))
        return self.fc2(F.leaky_relu(self.fc1(x), 0.2))


class CPENS1(CPEN):
    def __init__(self, cfg: CpenConfig):
        super().__init__(cfg, cfg.in_channels_s1)

    def forward(self, gt: torch.Tensor, lq: torch.Tensor) -> torch.Tensor:
        if gt.shape != lq.shape:
            raise ValueError(f"GT {tuple(gt.shape)} and LQ {tuple(lq.shape)} differ")
        return self.encode(torch.cat([gt, lq], dim=1))


class CPENS2(CPEN):
    def __init__(self, cfg: CpenConfig):
        super().__init__(cfg, cfg.in_channels_s2)

    def forward(self, lq: torch.Tensor) -> torch.Tensor:
        return self.encode(lq)

    @classmethod
    def from_s1(cls, s1: CPENS1) -> "CPENS2":
        """Warm start: copy every CPEN_S1 tensor except the stem, which keeps
        its fresh initialization."""
        s2 = cls(s1.cfg).to(next(s1.parameters()).dtype)
        state = {k: v for k, v in s1.state_dict().items() if not k.startswith("stem.")}
        s2.load_state_dict(state, strict=False)
        return s2


def cpen_s1_forward(net: CPENS1, gt: torch.Tensor, lq: torch.Tensor) -> IPRVector:
    return IPRVector(net(gt, lq), 0)


def cpen_s2_forward(net: CPENS2, lq: torch.Tensor) -> torch.Tensor:
    return net(lq)
