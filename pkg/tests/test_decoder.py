import math

import pytest
import torch

from dirl.decoder import Decoder
from dirl.model import DIRLNet, count_parameters
from dirl.types import DecoderVariant, ModelConfig

CH = [4, 6, 8, 8, 8]
VARIANTS = list(DecoderVariant)


def refined(size=32, batch=1, seed=0, requires_grad=False):
    g = torch.Generator().manual_seed(seed)
    return [torch.rand(batch, c, size >> k, size >> k, generator=g).requires_grad_(requires_grad)
            for k, c in enumerate(CH)]


@pytest.mark.parametrize("variant", VARIANTS)
def test_mask_shape_and_range(variant):
    torch.manual_seed(0)
    mask, logits, d = Decoder(CH, variant)(refined(batch=2))
    assert mask.shape == logits.shape == (2, 1, 32, 32)
    assert bool(((mask > 0) & (mask < 1)).all())
    assert [x.shape[1:] for x in d] == [(c, 32 >> k, 32 >> k) for k, c in enumerate(CH)]


def test_ggd_sim_constant_field_when_finest_feature_is_zero():
    torch.manual_seed(0)
    dec = Decoder(CH, DecoderVariant.GGD_SIM)
    with torch.no_grad():
        dec.fuse[0].bias.uniform_(-1, 1)
    a = refined()
    a[0] = torch.zeros_like(a[0])
    with torch.no_grad():
        mask, _, _ = dec(a)
    # d_1 = relu(bias_1) everywhere, then the 1x1 head
    d1 = [max(0.0, b) for b in dec.fuse[0].bias.tolist()]
    w = dec.head.weight[0, :, 0, 0].tolist()
    z = sum(wi * di for wi, di in zip(w, d1)) + dec.head.bias.item()
    expected = 1 / (1 + math.exp(-z))
    assert torch.allclose(mask, torch.full_like(mask, expected), atol=1e-6)


@pytest.mark.parametrize("level", range(4))
def test_multiplicative_zero_annihilation(level):
    torch.manual_seed(0)
    dec = Decoder(CH, DecoderVariant.GGD_SIM, bias=False)
    a = refined()
    a[level] = torch.zeros_like(a[level])
    with torch.no_grad():
        _, logits, d = dec(a)
    assert bool((d[0] == 0).all())
    assert bool((logits == 0).all())


def test_variants_produce_different_outputs():
    a = refined(seed=4)
    outs = []
    for v in VARIANTS:
        torch.manual_seed(1)
        with torch.no_grad():
            outs.append(Decoder(CH, v)(a)[0])
    for i in range(3):
        for j in range(i + 1, 3):
            assert not torch.allclose(outs[i], outs[j])


def test_parameter_count_ordering():
    n = {v: count_parameters(Decoder(CH, v)) for v in VARIANTS}
    assert n[DecoderVariant.GGD_SIM] < n[DecoderVariant.GGD]
    assert n[DecoderVariant.REG] < n[DecoderVariant.GGD]
    assert n[DecoderVariant.GGD_SIM] < n[DecoderVariant.REG]


def test_ggd_reaches_deepest_feature_through_shortcut():
    torch.manual_seed(0)
    dec = Decoder(CH, DecoderVariant.GGD)
    a = refined(requires_grad=True)
    mask, _, _ = dec(a)
    g_total = torch.autograd.grad(mask.sum(), a[-1], retain_graph=True)[0]
    # the shortcut alone: gradient through the context chain with the cascade detached
    g = dec.global_context(a[-1])
    shortcut = sum((gk * torch.randn_like(gk)).sum() for gk in g[:-1])
    g_short = torch.autograd.grad(shortcut, a[-1])[0]
    assert g_total.abs().sum() > 0 and g_short.abs().sum() > 0


@pytest.mark.parametrize("variant", VARIANTS)
def test_decoder_gradcheck(variant, f64):
    torch.manual_seed(0)
    ch = [2, 2, 2, 2, 2]
    dec = Decoder(ch, variant)
    a = tuple(torch.rand(1, 2, 16 >> k, 16 >> k, requires_grad=True) for k in range(5))
    assert torch.autograd.gradcheck(lambda *x: dec(list(x))[0], a, eps=1e-6, atol=1e-8, rtol=1e-3)


def test_full_network_gradcheck_wrt_parameters(f64):
    torch.manual_seed(0)
    cfg = ModelConfig(base_width=1, input_size=(16, 16), reduction=1)
    net = DIRLNet(cfg).eval()
    x = torch.rand(1, 3, 16, 16)
    params = [p for p in net.parameters()]
    # perturb a handful of scalar parameters in the encoder, fusion, attention and decoder
    picks = [net.encoder.stem[0].weight, net.fusion.agg_up[0].conv.weight,
             net.refine.blocks[2].spatial.conv.weight, net.decoder.fuse[1].weight]
    assert all(any(p is q for q in params) for p in picks)
    out = net(x).sum()
    grads = torch.autograd.grad(out, picks)
    h = 1e-6
    for p, g in zip(picks, grads):
        idx = (0,) * p.dim()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = net(x).sum().item()
            p[idx] = orig - h
            down = net(x).sum().item()
            p[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(fd - g[idx].item()) <= 1e-3 * max(abs(fd), 1e-8)
