import math

import pytest
import torch
from torch import nn

from mdcnet.errors import ConfigError, ShapeError
from mdcnet.model import (
    Denoiser,
    ModelConfig,
    TimeEmbedding,
    gate_combine,
    parameter_count,
    sinusoid_features,
)
from oracles import finite_difference_check

GRAD_TOY = ModelConfig(n_frames=10, n_feats=6, n_blocks=2, latent_dim=8, n_heads=2, ff_dim=16,
                       dropout=0.0, n_time_scales=2)


def toy(**kw):
    return Denoiser(ModelConfig(**{**GRAD_TOY.to_dict(), **kw})).eval()


def test_output_shape_and_finite():
    net = toy()
    x = torch.randn(3, 10, 6)
    out = net(x, torch.tensor([0, 5, 99]))
    assert out.shape == x.shape and torch.isfinite(out).all()


def test_fewer_tokens_than_frames_allowed():
    assert toy()(torch.randn(2, 7, 6), torch.tensor([1, 2])).shape == (2, 7, 6)


def test_shape_errors():
    net = toy()
    with pytest.raises(ShapeError):
        net(torch.randn(2, 10, 5), torch.tensor([1, 2]))
    with pytest.raises(ShapeError):
        net(torch.randn(2, 11, 6), torch.tensor([1, 2]))
    with pytest.raises(ShapeError):
        net(torch.randn(2, 10, 6), torch.tensor([1, 2, 3]))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(n_blocks=3)
    with pytest.raises(ConfigError):
        ModelConfig(latent_dim=30, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"latent": 4})
    cfg = ModelConfig(n_blocks=8)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    net = toy().double()
    x = torch.randn(2, 10, 6, dtype=torch.float64)
    t = torch.tensor([3, 40])
    target = torch.randn_like(x)
    bad = finite_difference_check(net, (x, t), lambda out: ((out - target) ** 2).mean())
    assert not bad, bad[:5]


def test_every_parameter_group_receives_gradient():
    net = toy()
    net(torch.randn(2, 10, 6), torch.tensor([1, 2])).pow(2).mean().backward()
    groups = {name.split(".")[0] for name, p in net.named_parameters() if p.grad is not None and p.grad.abs().sum() > 0}
    assert {"input_proj", "pos_embed", "time_embed", "blocks", "output_proj"} <= groups


def test_batch_independence():
    net = toy()
    x = torch.randn(1, 10, 6)
    out = net(x.repeat(2, 1, 1), torch.tensor([4, 4]))
    assert torch.equal(out[0], out[1])
    assert torch.allclose(out[:1], net(x, torch.tensor([4])), atol=1e-6)


def test_deterministic_in_eval():
    net = toy(dropout=0.2)
    x = torch.randn(2, 10, 6)
    assert torch.equal(net(x, torch.tensor([1, 2])), net(x, torch.tensor([1, 2])))


# gate


def test_gate_zero_weights_is_mean():
    g = nn.Linear(4, 4)
    nn.init.zeros_(g.weight)
    nn.init.zeros_(g.bias)
    a, f, x = torch.randn(3, 5, 4)
    assert torch.allclose(gate_combine(a, f, x, g), (a + f) / 2)


def test_gate_saturates_to_ffn():
    g = nn.Linear(4, 4)
    nn.init.zeros_(g.weight)
    nn.init.constant_(g.bias, 50.0)
    a, f, x = torch.randn(3, 5, 4)
    assert torch.allclose(gate_combine(a, f, x, g), f, atol=1e-6)


def test_gate_is_convex_combination():
    torch.manual_seed(1)
    g = nn.Linear(8, 8)
    for _ in range(200):
        a, f, x = torch.randn(3, 6, 8) * 5
        out = gate_combine(a, f, x, g)
        assert (out >= torch.minimum(a, f) - 1e-6).all() and (out <= torch.maximum(a, f) + 1e-6).all()
        bias = torch.sigmoid(g(x))
        assert ((bias > 0) & (bias < 1)).all()


def test_gate_shape_mismatch():
    with pytest.raises(ShapeError):
        gate_combine(torch.zeros(2, 4), torch.zeros(2, 4), torch.zeros(3, 4), nn.Linear(4, 4))


def test_no_gate_has_no_gate_layer():
    assert all(b.gate is None for b in toy(use_gate=False).blocks)


# time embedding


def test_sinusoid_at_zero_is_fixed_pattern():
    v = sinusoid_features(torch.tensor([0]), 8)
    assert torch.equal(v, torch.tensor([[1.0, 1, 1, 1, 0, 0, 0, 0]], dtype=torch.float64))


def test_sinusoid_matches_formula():
    dim, t = 16, 37
    v = sinusoid_features(torch.tensor([t]), dim)[0]
    for i in range(dim // 2):
        w = 10000 ** (-i / (dim // 2))
        assert v[i].item() == pytest.approx(math.cos(t * w))
        assert v[dim // 2 + i].item() == pytest.approx(math.sin(t * w))


def test_slowest_scale_similarity_decays():
    dim = 64
    half = dim // 2
    slow = [half - 1, dim - 1]
    base = sinusoid_features(torch.tensor([0]), dim)[0, slow]
    sims = []
    for d in (1, 10, 100, 1000):
        v = sinusoid_features(torch.tensor([d]), dim)[0, slow]
        sims.append(torch.nn.functional.cosine_similarity(base, v, dim=0).item())
    assert all(a > b for a, b in zip(sims, sims[1:]))


@pytest.mark.parametrize("multiscale", [True, False])
def test_time_embedding_distinct(multiscale):
    torch.manual_seed(0)
    emb = TimeEmbedding(16, multiscale, 2)
    e = emb(torch.arange(100))
    d = torch.cdist(e, e) + torch.eye(100)
    assert (d > 0).all()


# parameter count


def test_parameter_count_matches_modules():
    for kw in ({}, {"use_gate": False}, {"multiscale_time": False}, {"n_blocks": 4}):
        cfg = ModelConfig(**{**GRAD_TOY.to_dict(), **kw})
        assert parameter_count(cfg) == sum(p.numel() for p in Denoiser(cfg).parameters())


def test_parameter_count_by_hand():
    # latent 8, 2 blocks, heads 2, ff 16, 10 frames, 6 feats, 2 time scales
    inp = 6 * 8 + 8
    pos = 10 * 8
    time = 2 * (8 // 2 * 8 + 8) + 2 + (8 * 8 + 8)
    ln = 2 * 8
    attn = 3 * 8 * 8 + 3 * 8 + 8 * 8 + 8
    ffn = (8 * 16 + 16) + (16 * 8 + 8)
    gate = 8 * 8 + 8
    block = 2 * ln + attn + ffn + gate
    out = ln + 8 * 6 + 6
    assert inp + pos + time + 2 * block + out == 1704
    assert parameter_count(GRAD_TOY) == 1704


def test_parameter_count_monotone_in_ff_dim():
    assert parameter_count(ModelConfig(ff_dim=2048)) > parameter_count(ModelConfig(ff_dim=1024))


def test_default_size_near_reported_model():
    four = parameter_count(ModelConfig())
    assert 15.1e6 <= four <= 18.6e6
    assert parameter_count(ModelConfig(n_blocks=8)) > four
