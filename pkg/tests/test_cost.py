import pytest
import torch
from torch import nn

from diffir import cost
from diffir.denoiser import DenoiserConfig
from diffir.dirformer import DMTA
from diffir.model import DiffIRS1, DiffIRS2, ModelConfig


def test_linear_and_conv_examples():
    assert cost.linear(4, 4)[0] == 20
    assert cost.conv(1, 1, 3, 8, 8)[1] == 576
    r = cost.CostReport()
    assert r.total_params == 0 and r.mult_adds == 0 and list(r.rows()) == []


def test_zero_layer_denoiser():
    r = cost.denoiser_cost(DenoiserConfig(ipr_dim=4, hidden_width=8, num_layers=0))
    # one input->output linear only
    assert r.mult_adds == (4 + 1 + 4) * 4


class MacCounter:
    """Count multiply-accumulates from the shapes seen by real modules."""

    def __init__(self, model: nn.Module):
        self.total = 0
        self.handles = []
        for m in model.modules():
            if isinstance(m, nn.Conv2d):
                self.handles.append(m.register_forward_hook(self._conv))
            elif isinstance(m, nn.Linear):
                self.handles.append(m.register_forward_hook(self._linear))
            elif isinstance(m, DMTA):
                self.handles.append(m.register_forward_hook(self._attn))

    def _conv(self, m, inp, out):
        k = m.kernel_size[0] * m.kernel_size[1]
        self.total += k * (m.in_channels // m.groups) * out.shape[1] * out.shape[2] * out.shape[3]

    def _linear(self, m, inp, out):
        self.total += m.in_features * m.out_features

    def _attn(self, m, inp, out):
        _, c, h, w = out.shape
        self.total += 2 * (c // m.heads) ** 2 * m.heads * h * w


@pytest.mark.parametrize("size", [32, 48])
def test_analytic_mult_adds_match_traced_modules(size):
    cfg = ModelConfig.full("inpainting")
    torch.manual_seed(0)
    s1 = DiffIRS1(cfg).eval()
    s2 = DiffIRS2(cfg, s1).eval()
    x = torch.rand(1, 4, size, size)
    gt = torch.rand(1, 3, size, size)
    c1 = MacCounter(s1)
    with torch.no_grad():
        s1(x, gt)
    analytic = cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, size, "s1", cfg.T)
    assert c1.total == analytic.mult_adds
    c2 = MacCounter(nn.ModuleList([s2.cpen_s2, s2.denoiser, s2.dirformer]))
    s2.restore(x, None, torch.Generator().manual_seed(0))
    analytic = cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, size, "s2", cfg.T)
    assert c2.total == analytic.mult_adds


@pytest.mark.parametrize("task", ["inpainting", "sr", "deblur"])
def test_analytic_params_match_modules(task):
    cfg = ModelConfig.full(task)
    s2 = DiffIRS2(cfg)
    real = sum(p.numel() for m in (s2.cpen_s2, s2.denoiser, s2.dirformer) for p in m.parameters())
    assert cost.count_params(cfg.cpen, cfg.dirformer, cfg.denoiser).total_params == real
    s1 = DiffIRS1(cfg)
    assert cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, 256, "s1").total_params == sum(
        p.numel() for p in s1.parameters())


def test_breakdown_sums_to_totals():
    cfg = ModelConfig.full("inpainting")
    for variant in ("s1", "s2"):
        r = cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, 256, variant)
        rows = list(r.rows())
        assert sum(p for _, p, _ in rows) == r.total_params
        assert sum(m for _, _, m in rows) == r.mult_adds


def test_attention_cost_is_linear_in_pixels():
    a = cost.dmta_cost(48, 1, 256, 32, 32)[1]
    b = cost.dmta_cost(48, 1, 256, 64, 64)[1]
    assert b / a == pytest.approx(4.0, abs=0.1)


def test_denoiser_calls_scale_with_T():
    cfg = ModelConfig.full("inpainting")
    d = cost.denoiser_cost(cfg.denoiser).mult_adds
    r4 = cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, 64, "s2", 4)
    r8 = cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, 64, "s2", 8)
    assert r8.mult_adds - r4.mult_adds == 4 * d
    assert r8.total_params == r4.total_params


def test_size_must_be_divisible_by_8():
    cfg = ModelConfig.full("inpainting")
    with pytest.raises(ValueError):
        cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, 60)
    with pytest.raises(ValueError):
        cost.model_cost(cfg.cpen, cfg.dirformer, cfg.denoiser, 64, "s3")
