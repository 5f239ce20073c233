"""Dynamic restoration transformer (DIRformer).

Every block is conditioned on the prior vector Z through a modulated layer
norm, then runs transposed (channel) attention and a gated feed-forward
network, both residual. Blocks are arranged in a 4-level Unet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .cpen import pixel_shuffle

TASK_BLOCKS = {
    "inpainting": [1, 1, 1, 9],
    "sr": [13, 1, 1, 1],
    "deblur": [3, 5, 6, 6],
}


@dataclass
class DirformerConfig:
    channels: List[int] = field(default_factory=lambda: [48, 96, 192, 384])
    heads: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    blocks: List[int] = field(default_factory=lambda: [1, 1, 1, 9])
    gamma_init: float = 1.0
    ffn_expansion: float = 2.66
    refinement_blocks: int = 4
    in_channels: int = 3
    out_channels: int = 3
    ipr_dim: int = 256
    # inpainting only: paste known pixels back over the prediction
    composite_known: bool = False
    # L2-normalize q and k over space so logits stay in [-1/gamma, 1/gamma]
    qk_norm: bool = True

    def __post_init__(self):
        for name in ("channels", "heads", "blocks"):
            if len(getattr(self, name)) != 4:
                raise ValueError(f"{name} needs one entry per level (4)")
        for c, h in zip(self.channels, self.heads):
            if c % h:
                raise ValueError(f"{c} channels not divisible by {h} heads")
        for lo, hi in zip(self.channels, self.channels[1:]):
            if hi != 2 * lo:
                raise ValueError("channels must double from level to level")

    @property
    def ffn_hidden(self) -> List[int]:
        return [int(c * self.ffn_expansion) for c in self.channels]


def layer_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalize over channels at each pixel of an (N, C, H, W) map."""
    mu = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, keepdim=True, unbiased=False)
    return (x - mu) / torch.sqrt(var + eps)


class Modulation(nn.Module):
    """F' = (W1 Z) * Norm(F) + W2 Z, scale and shift broadcast over space."""

    def __init__(self, ipr_dim: int, dim: int):
        super().__init__()
        self.w1 = nn.Linear(ipr_dim, dim)
        self.w2 = nn.Linear(ipr_dim, dim)
        nn.init.ones_(self.w1.bias)
        nn.init.zeros_(self.w2.bias)

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.w1.out_features:
            raise ValueError(f"feature width {x.shape[1]} != modulation width {self.w1.out_features}")
        scale = self.w1(z)[:, :, None, None]
        shift = self.w2(z)[:, :, None, None]
        return scale * layer_norm(x) + shift


class DMTA(nn.Module):
    def __init__(self, dim: int, heads: int, ipr_dim: int, gamma_init: float = 1.0, qk_norm: bool = True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"{dim} channels not divisible by {heads} heads")
        self.heads = heads
        self.qk_norm = qk_norm
        self.mod = Modulation(ipr_dim, dim)
        self.qkv = nn.Conv2d(dim, 3 * dim, 1)
        self.qkv_dw = nn.Conv2d(3 * dim, 3 * dim, 3, padding=1, groups=3 * dim)
        self.proj = nn.Conv2d(dim, dim, 1)
        self.gamma = nn.Parameter(torch.tensor(float(gamma_init)))
        self.last_attention: Optional[torch.Tensor] = None

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(self.mod(x, z))).chunk(3, dim=1)
        q = q.reshape(n, self.heads, c // self.heads, h * w)
        k = k.reshape(n, self.heads, c // self.heads, h * w)
        v = v.reshape(n, self.heads, c // self.heads, h * w)
        if self.qk_norm:
            q = F.normalize(q, dim=-1)
            k = F.normalize(k, dim=-1)
        # attn[j, i] weighs input channel i for output channel j; each row sums to 1
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.gamma, dim=-1)
        self.last_attention = attn.detach()
        out = (attn @ v).reshape(n, c, h, w)
        return self.proj(out) + x


class DGFN(nn.Module):
    def __init__(self, dim: int, hidden: int, ipr_dim: int):
        super().__init__()
        self.mod = Modulation(ipr_dim, dim)
        self.proj_in = nn.Conv2d(dim, 2 * hidden, 1)
        self.dw = nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden)
        self.proj_out = nn.Conv2d(hidden, dim, 1)

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        gate, value = self.dw(self.proj_in(self.mod(x, z))).chunk(2, dim=1)
        return self.proj_out(F.gelu(gate) * value) + x


class DynamicBlock(nn.Module):
    def __init__(self, dim: int, heads: int, hidden: int, ipr_dim: int, gamma_init: float = 1.0, qk_norm: bool = True):
        super().__init__()
        self.attn = DMTA(dim, heads, ipr_dim, gamma_init, qk_norm)
        self.ffn = DGFN(dim, hidden, ipr_dim)

    def forward(self, x, z):
        return self.ffn(self.attn(x, z), z)


class Stage(nn.Module):
    def __init__(self, n: int, *args, **kwargs):
        super().__init__()
        self.blocks = nn.ModuleList([DynamicBlock(*args, **kwargs) for _ in range(n)])

    def forward(self, x, z):
        for blk in self.blocks:
            x = blk(x, z)
        return x


class Downsample(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(dim, 2 * dim, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(dim, 2 * dim, 1)

    def forward(self, x):
        return pixel_shuffle(self.conv(x), 2)


class DIRformer(nn.Module):
    def __init__(self, cfg: DirformerConfig):
        super().__init__()
        self.cfg = cfg
        ch, hd, nb, hid = cfg.channels, cfg.heads, cfg.blocks, cfg.ffn_hidden
        kw = dict(ipr_dim=cfg.ipr_dim, gamma_init=cfg.gamma_init, qk_norm=cfg.qk_norm)
        self.embed = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        self.encoders = nn.ModuleList([Stage(nb[i], ch[i], hd[i], hid[i], **kw) for i in range(3)])
        self.downs = nn.ModuleList([Downsample(ch[i]) for i in range(3)])
        self.latent = Stage(nb[3], ch[3], hd[3], hid[3], **kw)
        # decoder modules are indexed by level 0..2 and run from deep to shallow
        self.ups = nn.ModuleList([Upsample(ch[i + 1]) for i in range(3)])
        self.fuse = nn.ModuleList([nn.Conv2d(2 * ch[i], ch[i], 1) for i in range(3)])
        self.decoders = nn.ModuleList([Stage(nb[i], ch[i], hd[i], hid[i], **kw) for i in range(3)])
        self.refine = Stage(cfg.refinement_blocks, ch[0], hd[0], hid[0], **kw)
        self.out = nn.Conv2d(ch[0], cfg.out_channels, 3, padding=1)

    def zero_output(self) -> None:
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def all_blocks(self):
        for stage in [*self.encoders, self.latent, *self.decoders, self.refine]:
            yield from stage.blocks

    def forward(self, lq: torch.Tensor, z: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """``lq`` carries the model input channels (RGB, plus the mask channel
        for inpainting); the output has ``out_channels`` channels."""
        h, w = lq.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 8")
        x = self.embed(lq)
        skips = []
        for enc, down in zip(self.encoders, self.downs):
            x = enc(x, z)
            skips.append(x)
            x = down(x)
        x = self.latent(x, z)
        for i in reversed(range(3)):
            x = self.ups[i](x)
            x = self.fuse[i](torch.cat([x, skips[i]], dim=1))
            x = self.decoders[i](x, z)
        x = self.refine(x, z)
        base = lq[:, : self.cfg.out_channels]
        out = base + self.out(x)
        if self.cfg.composite_known and mask is not None:
            out = base * (1 - mask) + out * mask
        return out


def modulate(F_: torch.Tensor, z: torch.Tensor, mod: Modulation) -> torch.Tensor:
    return mod(F_, z)


def dirformer_forward(net: DIRformer, lq: torch.Tensor, z: torch.Tensor, mask=None) -> torch.Tensor:
    return net(lq, z, mask)
