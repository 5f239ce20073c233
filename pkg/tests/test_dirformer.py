import numpy as np
import pytest
import torch

from diffir.dirformer import DGFN, DIRformer, DMTA, DirformerConfig, Modulation, layer_norm

from conftest import central_diff, rel_err


def toy_cfg(**kw):
    base = dict(channels=[8, 16, 32, 64], heads=[1, 2, 4, 8], blocks=[1, 1, 1, 1],
                ffn_expansion=2.0, refinement_blocks=1, ipr_dim=32)
    base.update(kw)
    return DirformerConfig(**base)


def _zero(module):
    for p in module.parameters():
        torch.nn.init.zeros_(p)


def test_layer_norm_per_pixel(rng):
    x = torch.from_numpy(rng.standard_normal((2, 8, 4, 4)))
    y = layer_norm(x).numpy()
    np.testing.assert_allclose(y.mean(1), 0, atol=1e-12)
    xn = x.numpy()
    ref = (xn - xn.mean(1, keepdims=True)) / np.sqrt(xn.var(1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(y, ref, rtol=1e-12)


def test_identity_modulation_is_norm(rng):
    mod = Modulation(32, 8).double()
    _zero(mod)
    torch.nn.init.ones_(mod.w1.bias)
    x = torch.from_numpy(rng.standard_normal((1, 8, 5, 5)))
    z = torch.from_numpy(rng.standard_normal((1, 32)))
    torch.testing.assert_close(mod(x, z), layer_norm(x), rtol=0, atol=0)


def test_channel_constant_features_give_shift(rng):
    mod = Modulation(32, 8).double()
    x = torch.ones(1, 8, 3, 3, dtype=torch.float64) * torch.arange(9, dtype=torch.float64).reshape(1, 1, 3, 3)
    z = torch.from_numpy(rng.standard_normal((1, 32)))
    shift = mod.w2(z)[0]
    out = mod(x, z)
    torch.testing.assert_close(out, shift[None, :, None, None].expand_as(out), rtol=0, atol=1e-12)


def test_modulation_width_mismatch():
    with pytest.raises(ValueError):
        Modulation(32, 8)(torch.zeros(1, 6, 2, 2), torch.zeros(1, 32))


def test_modulation_gradient_wrt_prior(rng):
    torch.manual_seed(0)
    mod = Modulation(16, 8).double()
    x = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
    z = torch.from_numpy(rng.standard_normal((1, 16))).requires_grad_()
    w = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
    f = lambda: (mod(x, z) * w).sum()  # noqa: E731
    f().backward()
    d = torch.from_numpy(rng.standard_normal((1, 16)))
    assert rel_err(float((z.grad * d).sum()), central_diff(f, z.data, d)) <= 1e-4


def test_dmta_zero_weights_is_passthrough(rng):
    attn = DMTA(8, 2, 32).double()
    for m in (attn.qkv, attn.qkv_dw, attn.proj):
        _zero(m)
    x = torch.from_numpy(rng.standard_normal((2, 8, 4, 4)))
    z = torch.from_numpy(rng.standard_normal((2, 32)))
    assert torch.equal(attn(x, z), x)
    np.testing.assert_allclose(attn.last_attention.numpy(), 0.25)


def test_dmta_attention_shape_and_rows(rng):
    torch.manual_seed(0)
    attn = DMTA(8, 2, 32).double()
    x = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
    z = torch.from_numpy(rng.standard_normal((1, 32)))
    out = attn(x, z)
    assert out.shape == x.shape
    a = attn.last_attention
    assert a.shape == (1, 2, 4, 4)
    # two 4x4 maps versus one 16x16 spatial map
    assert a[0].numel() == 32 and (4 * 4) ** 2 == 256
    np.testing.assert_allclose(a.sum(-1).numpy(), 1.0, atol=1e-6)


@pytest.mark.parametrize("qk_norm", [True, False])
def test_dmta_matches_reference(rng, qk_norm):
    """Explicit per-head einsum with softmax over the axis contracted with V."""
    torch.manual_seed(5)
    attn = DMTA(8, 2, 16, qk_norm=qk_norm).double()
    x = torch.from_numpy(rng.standard_normal((1, 8, 3, 5)))
    z = torch.from_numpy(rng.standard_normal((1, 16)))
    f = attn.qkv_dw(attn.qkv(attn.mod(x, z)))[0].detach().numpy()
    q, k, v = f[:8], f[8:16], f[16:]
    out = np.zeros((8, 15))
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        Qh = q[sl].reshape(4, 15).T  # HW x c
        Kh = k[sl].reshape(4, 15)  # c x HW
        Vh = v[sl].reshape(4, 15).T  # HW x c
        if qk_norm:  # unit L2 norm of each channel over space
            Qh = Qh / np.linalg.norm(Qh, axis=0, keepdims=True)
            Kh = Kh / np.linalg.norm(Kh, axis=1, keepdims=True)
        A = Kh @ Qh / attn.gamma.item()  # c x c, A[i, j]
        A = np.exp(A - A.max(0, keepdims=True))
        A /= A.sum(0, keepdims=True)  # columns sum to 1
        out[sl] = (Vh @ A).T
    w = attn.proj.weight.detach().numpy()[:, :, 0, 0]
    b = attn.proj.bias.detach().numpy()
    ref = (w @ out + b[:, None]).reshape(8, 3, 5) + x[0].numpy()
    np.testing.assert_allclose(attn(x, z)[0].detach().numpy(), ref, rtol=1e-10, atol=1e-12)


def test_dmta_heads_divisibility():
    with pytest.raises(ValueError):
        DMTA(6, 4, 8)


def test_dgfn_zero_branches(rng):
    x = torch.from_numpy(rng.standard_normal((1, 8, 6, 6)))
    z = torch.from_numpy(rng.standard_normal((1, 32)))
    ffn = DGFN(8, 16, 32).double()
    _zero(ffn.proj_in)
    _zero(ffn.dw)
    torch.nn.init.zeros_(ffn.proj_out.bias)
    assert torch.equal(ffn(x, z), x)
    torch.manual_seed(0)
    ffn = DGFN(8, 16, 32).double()
    with torch.no_grad():
        # gate half only
        ffn.proj_in.weight[:16] = 0
        ffn.proj_in.bias[:16] = 0
        ffn.dw.weight[:16] = 0
        ffn.dw.bias[:16] = 0
        ffn.proj_out.bias.zero_()
    assert torch.equal(ffn(x, z), x)


@pytest.mark.parametrize("hw", [(4, 4), (5, 9), (12, 7)])
def test_dgfn_shape(hw):
    ffn = DGFN(8, 16, 32)
    x = torch.rand(2, 8, *hw)
    assert ffn(x, torch.rand(2, 32)).shape == x.shape


def test_dirformer_shapes_and_identity():
    torch.manual_seed(0)
    net = DIRformer(toy_cfg())
    lq, z = torch.rand(2, 3, 16, 16), torch.rand(2, 32)
    assert net(lq, z).shape == lq.shape
    net.zero_output()
    assert torch.equal(net(lq, z), lq)
    with pytest.raises(ValueError):
        net(torch.rand(1, 3, 12, 16), torch.rand(1, 32))


def test_dirformer_runs_at_other_sizes():
    torch.manual_seed(0)
    net = DIRformer(toy_cfg())
    z = torch.rand(1, 32)
    assert net(torch.rand(1, 3, 64, 64), z).shape == (1, 3, 64, 64)
    assert net(torch.rand(1, 3, 96, 96), z).shape == (1, 3, 96, 96)


def test_inpainting_composite_keeps_known_pixels():
    torch.manual_seed(0)
    net = DIRformer(toy_cfg(in_channels=4, composite_known=True))
    img = torch.rand(1, 3, 16, 16)
    mask = (torch.rand(1, 1, 16, 16) > 0.5).float()
    lq = torch.cat([img * (1 - mask), mask], 1)
    out = net(lq, torch.rand(1, 32), mask)
    keep = mask.expand_as(out) == 0
    assert torch.equal(out[keep], lq[:, :3][keep])


def test_inpainting_block_counts():
    cfg = DirformerConfig(blocks=[1, 1, 1, 9], refinement_blocks=0)
    net = DIRformer(cfg)
    assert [len(s.blocks) for s in net.encoders] == [1, 1, 1]
    assert len(net.latent.blocks) == 9
    assert [len(s.blocks) for s in net.decoders] == [1, 1, 1]
    assert sum(1 for _ in net.all_blocks()) == 15


def test_every_block_is_identity_when_zeroed(rng):
    torch.manual_seed(0)
    net = DIRformer(toy_cfg()).double()
    z = torch.from_numpy(rng.standard_normal((1, 32)))
    for blk in net.all_blocks():
        dim = blk.attn.qkv.in_channels
        x = torch.from_numpy(rng.standard_normal((1, dim, 4, 4)))
        for m in (blk.attn.qkv, blk.attn.qkv_dw, blk.attn.proj, blk.ffn.proj_in, blk.ffn.dw, blk.ffn.proj_out):
            _zero(m)
        assert torch.equal(blk(x, z), x)
