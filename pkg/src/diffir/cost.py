"""Analytic parameter and Mult-Adds accounting.

Convention: one multiply-accumulate is one Mult-Add; biases, activations,
normalization and elementwise products are not counted. Counts are per
single image (batch 1).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

from .cpen import CpenConfig
from .denoiser import DenoiserConfig
from .dirformer import DirformerConfig


@dataclass
class CostReport:
    total_params: int = 0
    mult_adds: int = 0
    input_size: int = 0
    params: Dict[str, int] = field(default_factory=OrderedDict)
    macs: Dict[str, int] = field(default_factory=OrderedDict)

    def add(self, name: str, params: int = 0, macs: int = 0) -> None:
        self.params[name] = self.params.get(name, 0) + params
        self.macs[name] = self.macs.get(name, 0) + macs
        self.total_params += params
        self.mult_adds += macs

    def merge(self, prefix: str, other: "CostReport") -> None:
        for k in other.params:
            self.add(f"{prefix}.{k}" if prefix else k, other.params[k], other.macs[k])

    def rows(self):
        for k in self.params:
            yield k, self.params[k], self.macs[k]


def conv(cin: int, cout: int, k: int, hout: int, wout: int, groups: int = 1, bias: bool = True):
    p = k * k * (cin // groups) * cout + (cout if bias else 0)
    return p, k * k * (cin // groups) * cout * hout * wout


def linear(a: int, b: int, bias: bool = True):
    return a * b + (b if bias else 0), a * b


def _modulation(ipr: int, dim: int):
    p1, m1 = linear(ipr, dim)
    return 2 * p1, 2 * m1


def dmta_cost(dim: int, heads: int, ipr: int, h: int, w: int):
    p, m = _modulation(ipr, dim)
    for pp, mm in (
        conv(dim, 3 * dim, 1, h, w),
        conv(3 * dim, 3 * dim, 3, h, w, groups=3 * dim),
        conv(dim, dim, 1, h, w),
    ):
        p += pp
        m += mm
    p += 1  # temperature
    m += 2 * (dim // heads) ** 2 * heads * h * w  # q k^T and attn v
    return p, m


def dgfn_cost(dim: int, hidden: int, ipr: int, h: int, w: int):
    p, m = _modulation(ipr, dim)
    for pp, mm in (
        conv(dim, 2 * hidden, 1, h, w),
        conv(2 * hidden, 2 * hidden, 3, h, w, groups=2 * hidden),
        conv(hidden, dim, 1, h, w),
    ):
        p += pp
        m += mm
    return p, m


def block_cost(dim, heads, hidden, ipr, h, w):
    a = dmta_cost(dim, heads, ipr, h, w)
    b = dgfn_cost(dim, hidden, ipr, h, w)
    return a[0] + b[0], a[1] + b[1]


def dirformer_cost(cfg: DirformerConfig, size: int) -> CostReport:
    r = CostReport(input_size=size)
    ch, hd, nb, hid, ipr = cfg.channels, cfg.heads, cfg.blocks, cfg.ffn_hidden, cfg.ipr_dim
    res = [size // 2**i for i in range(4)]
    r.add("embed", *conv(cfg.in_channels, ch[0], 3, size, size))
    for i in range(3):
        bp, bm = block_cost(ch[i], hd[i], hid[i], ipr, res[i], res[i])
        r.add(f"encoder{i + 1}", nb[i] * bp, nb[i] * bm)
        r.add(f"down{i + 1}", *conv(ch[i], 2 * ch[i], 3, res[i + 1], res[i + 1]))
    bp, bm = block_cost(ch[3], hd[3], hid[3], ipr, res[3], res[3])
    r.add("latent", nb[3] * bp, nb[3] * bm)
    for i in reversed(range(3)):
        r.add(f"up{i + 1}", *conv(ch[i + 1], 2 * ch[i + 1], 1, res[i + 1], res[i + 1]))
        r.add(f"fuse{i + 1}", *conv(2 * ch[i], ch[i], 1, res[i], res[i]))
        bp, bm = block_cost(ch[i], hd[i], hid[i], ipr, res[i], res[i])
        r.add(f"decoder{i + 1}", nb[i] * bp, nb[i] * bm)
    bp, bm = block_cost(ch[0], hd[0], hid[0], ipr, size, size)
    r.add("refine", cfg.refinement_blocks * bp, cfg.refinement_blocks * bm)
    r.add("out", *conv(ch[0], cfg.out_channels, 3, size, size))
    return r


def cpen_cost(cfg: CpenConfig, size: int, in_channels: int) -> CostReport:
    r = CostReport(input_size=size)
    c = cfg.c_prime
    s0 = size // cfg.unshuffle_factor
    s1 = (s0 + 1) // 2
    s2 = (s1 + 1) // 2
    r.add("stem", *conv(in_channels, c, 1, s0, s0))
    rp, rm = conv(c, c, 3, s0, s0)
    r.add("res_blocks", 2 * cfg.num_res_blocks * rp, 2 * cfg.num_res_blocks * rm)
    r.add("down1", *conv(c, 2 * c, 3, s1, s1))
    r.add("down2", *conv(2 * c, 4 * c, 3, s2, s2))
    p1, m1 = linear(4 * c, 4 * c)
    r.add("head", 2 * p1, 2 * m1)
    return r


def denoiser_cost(cfg: DenoiserConfig) -> CostReport:
    r = CostReport()
    widths = [cfg.in_width] + [cfg.hidden_width] * cfg.num_layers + [cfg.ipr_dim]
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        r.add(f"fc{i + 1}", *linear(a, b))
    return r


def count_params(cpen: CpenConfig, dirf: DirformerConfig, den: DenoiserConfig = None, size: int = 256) -> CostReport:
    """Parameters of the stage-2 model: CPEN_S2 + denoiser + DIRformer."""
    return model_cost(cpen, dirf, den, size, variant="s2", T=1)


def model_cost(
    cpen: CpenConfig,
    dirf: DirformerConfig,
    den: DenoiserConfig = None,
    size: int = 256,
    variant: str = "s2",
    T: int = 4,
) -> CostReport:
    """Cost of one inference-style forward pass.

    ``s1``: CPEN_S1 + DIRformer. ``s2``: CPEN_S2 + T denoiser calls +
    DIRformer. Parameters are counted once regardless of T.
    """
    if size % 8:
        raise ValueError("input size must be divisible by 8")
    r = CostReport(input_size=size)
    if variant == "s1":
        r.merge("cpen_s1", cpen_cost(cpen, size, cpen.in_channels_s1))
    elif variant == "s2":
        r.merge("cpen_s2", cpen_cost(cpen, size, cpen.in_channels_s2))
        d = denoiser_cost(den or DenoiserConfig(ipr_dim=cpen.ipr_dim))
        for k, p, m in d.rows():
            r.add(f"denoiser.{k}", p, T * m)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    r.merge("dirformer", dirformer_cost(dirf, size))
    return r


def count_mult_adds(cpen, dirf, den=None, size: int = 256, variant: str = "s2", T: int = 4) -> CostReport:
    return model_cost(cpen, dirf, den, size, variant, T)
