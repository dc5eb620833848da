import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from carikit.synthesis import (
    SynthesisStack,
    broadcast_w,
    random_noise,
    sample_codes,
    scale_resolution,
    truncate,
    zero_noise,
)

from conftest import fd_grad, rel_err, tiny_model_cfg


def test_scale_resolution_schedule():
    assert [scale_resolution(i) for i in range(1, 8)] == [4, 8, 16, 32, 64, 128, 256]


def test_map_latent_zero_weights(photo_stack):
    import copy

    stack = copy.deepcopy(photo_stack)
    for p in stack.mapping.parameters():
        torch.nn.init.zeros_(p)
    z = torch.randn(5, stack.cfg.d_z, generator=torch.Generator().manual_seed(0))
    assert torch.equal(stack.map_latent(z), torch.zeros(5, stack.cfg.d_w))


def test_map_latent_deterministic(photo_stack):
    z = torch.randn(4, photo_stack.cfg.d_z, generator=torch.Generator().manual_seed(1))
    assert torch.equal(photo_stack.map_latent(z), photo_stack.map_latent(z))


def test_map_latent_rejects_wrong_dim(photo_stack):
    with pytest.raises(ValueError, match="latent dimension"):
        photo_stack.map_latent(torch.zeros(3, photo_stack.cfg.d_z + 1))


def test_mean_w_monte_carlo(photo_stack):
    # fresh 10k-sample estimate must sit within 3 sigma / sqrt(n) of the stored
    # mean per coordinate (deterministic under the committed seed)
    n = 10_000
    z = torch.randn(n, photo_stack.cfg.d_z, generator=torch.Generator().manual_seed(123))
    w = photo_stack.map_latent(z)
    mean = w.mean(dim=0)
    sigma = w.std(dim=0)
    bound = 3 * sigma / math.sqrt(n)
    assert ((mean - photo_stack.mean_w).abs() <= bound).all()


def test_estimate_mean_w_requires_10k(photo_stack):
    import copy

    with pytest.raises(ValueError, match="10,000"):
        copy.deepcopy(photo_stack).estimate_mean_w(500)


def test_truncate_endpoints(photo_stack):
    w = torch.randn(photo_stack.cfg.d_w, generator=torch.Generator().manual_seed(2))
    m = photo_stack.mean_w
    assert torch.equal(truncate(w, m, 1.0), m + 1.0 * (w - m))
    assert torch.allclose(truncate(w, m, 1.0), w, atol=1e-6)
    assert torch.equal(truncate(w, m, 0.0), m + 0.0 * (w - m))
    assert torch.allclose(truncate(w, m, 0.0), m, atol=1e-7)


def test_truncate_rejects_psi_out_of_range(photo_stack):
    w = torch.zeros(photo_stack.cfg.d_w)
    for psi in (-0.1, 1.1):
        with pytest.raises(ValueError, match="psi"):
            truncate(w, photo_stack.mean_w, psi)


@settings(max_examples=30, deadline=None)
@given(psi1=st.floats(0, 1), psi2=st.floats(0, 1), seed=st.integers(0, 10_000))
def test_truncation_affine(psi1, psi2, seed):
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(16, generator=gen)
    m = torch.randn(16, generator=gen)
    twice = truncate(truncate(w, m, psi1), m, psi2)
    once = truncate(w, m, psi1 * psi2)
    assert torch.allclose(twice, once, atol=1e-5)


def test_broadcast_w_definition():
    w = torch.randn(16, generator=torch.Generator().manual_seed(3))
    code = broadcast_w(w, 8)
    assert code.shape == (8, 16)
    for j in range(8):
        assert torch.equal(code[j], w)


def test_broadcast_truncate_commute(photo_stack):
    w = torch.randn(photo_stack.cfg.d_w, generator=torch.Generator().manual_seed(4))
    m = photo_stack.mean_w
    a = broadcast_w(truncate(w, m, 0.7), 8)
    b = truncate(broadcast_w(w, 8), m, 0.7)
    assert torch.allclose(a, b, atol=1e-6)


def test_synthesize_deterministic_bitexact(photo_stack):
    code = sample_codes(photo_stack, 2, torch.Generator().manual_seed(5))
    noise = random_noise(photo_stack.n_scales, 2, torch.Generator().manual_seed(6))
    img1, feats1 = photo_stack.synthesize(code, noise)
    img2, feats2 = photo_stack.synthesize(code, noise)
    assert torch.equal(img1, img2)
    for f1, f2 in zip(feats1, feats2):
        assert torch.equal(f1, f2)


def test_synthesize_resolution_schedule(photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(7))
    img, feats = photo_stack.synthesize(code, zero_noise(photo_stack.n_scales))
    assert [f.shape[-1] for f in feats] == [4, 8, 16, 32]
    assert img.shape == (1, 3, 32, 32)
    assert img.min() >= -1 and img.max() <= 1
    for f, c in zip(feats, photo_stack.cfg.channels):
        assert f.shape[1] == c


def test_feature_resolution_doubling(photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(8))
    _, feats = photo_stack.synthesize(code, zero_noise(photo_stack.n_scales))
    for a, b in zip(feats, feats[1:]):
        assert b.shape[-1] == 2 * a.shape[-1]


def test_synthesize_rejects_bad_inputs(photo_stack):
    code = sample_codes(photo_stack, 1, torch.Generator().manual_seed(9))
    noise = zero_noise(photo_stack.n_scales)
    with pytest.raises(ValueError, match="code"):
        photo_stack.synthesize(code[:, :5], noise)
    with pytest.raises(ValueError, match="noise"):
        photo_stack.synthesize(code, noise[:-1])
    bad = [n.clone() for n in noise]
    bad[2] = torch.zeros(1, 1, 4, 4)
    with pytest.raises(ValueError, match="noise\\[2\\]"):
        photo_stack.synthesize(code, bad)


def test_style_locality(photo_stack):
    # editing a style layer of scale i leaves feature maps below scale i bit-identical
    gen = torch.Generator().manual_seed(10)
    code = sample_codes(photo_stack, 1, gen)
    noise = random_noise(photo_stack.n_scales, 1, gen)
    _, base = photo_stack.synthesize(code, noise)
    for layer, scale in ((4, 3), (6, 4)):
        edited = code.clone()
        edited[:, layer] += torch.randn(photo_stack.cfg.d_w, generator=gen)
        _, feats = photo_stack.synthesize(edited, noise)
        for i in range(scale - 1):
            assert torch.equal(feats[i], base[i]), f"scale {i + 1} changed by layer {layer}"
        assert not torch.equal(feats[scale - 1], base[scale - 1])


def test_image_grad_matches_finite_differences():
    torch.manual_seed(11)
    stack = SynthesisStack(tiny_model_cfg(), "photo").double().eval()
    gen = torch.Generator().manual_seed(12)
    code = sample_codes(stack, 1, gen).double().requires_grad_(True)
    noise = random_noise(stack.n_scales, 1, gen, dtype=torch.float64)
    probe = torch.randn(1, 3, 32, 32, generator=gen, dtype=torch.float64)

    def scalar():
        img, _ = stack.synthesize(code, noise)
        return (img * probe).sum()

    loss = scalar()
    (auto,) = torch.autograd.grad(loss, code)
    flat_idx = torch.linspace(0, code.numel() - 1, 12).long().tolist()
    fd = fd_grad(scalar, code, flat_idx, h=1e-5)
    assert rel_err(auto.reshape(-1)[flat_idx], fd) < 1e-3


def test_full_scale_seven_scale_schedule():
    # the 256x256 configuration: 7 scales, feature maps 4..256
    from carikit.config import ModelConfig

    cfg = ModelConfig(d_z=8, d_w=8, n_scales=7, channels=(8, 8, 8, 8, 8, 8, 8), mapping_layers=1)
    torch.manual_seed(20)
    stack = SynthesisStack(cfg, "photo")
    code = sample_codes(stack, 1, torch.Generator().manual_seed(21))
    with torch.no_grad():
        img, feats = stack.synthesize(code, zero_noise(7))
    assert len(feats) == 7
    assert [f.shape[-1] for f in feats] == [4, 8, 16, 32, 64, 128, 256]
    assert img.shape == (1, 3, 256, 256)


def test_noise_contributes_after_weight_update(photo_stack):
    import copy

    stack = copy.deepcopy(photo_stack)
    for block in stack.blocks:
        with torch.no_grad():
            block.noise1.weight.fill_(0.5)
            block.noise2.weight.fill_(0.5)
    code = sample_codes(stack, 1, torch.Generator().manual_seed(13))
    img_a, _ = stack.synthesize(code, zero_noise(stack.n_scales))
    img_b, _ = stack.synthesize(code, random_noise(stack.n_scales, 1, torch.Generator().manual_seed(14)))
    assert not torch.equal(img_a, img_b)
