import pytest
import torch

from xvguard.defenses import DefenseChain, VaeConfig, VaeModel, VaeStage
from xvguard.errors import GradientModeError
from xvguard.model import XVectorConfig, build_classifier, grad_input
from xvguard.types import GradientRequest, ThreatMode


def _central_differences(loss, x, coords, h=1e-6):
    flat = x.flatten()
    values = []
    for i in coords:
        plus, minus = flat.clone(), flat.clone()
        plus[i] += h
        minus[i] -= h
        values.append((loss(plus.view_as(x)) - loss(minus.view_as(x))) / (2 * h))
    return torch.stack(values)


def _check(target, x, label, rtol, mode=ThreatMode.E2ED):
    generator_seed = 11

    def loss(z):
        logits = target.attack_logits(z, mode, torch.Generator().manual_seed(generator_seed))
        return torch.nn.functional.cross_entropy(logits, torch.tensor([label]), reduction="sum")

    grad = grad_input(target, x, label, mode=mode, generator=torch.Generator().manual_seed(generator_seed))
    coords = torch.randperm(x.numel(), generator=torch.Generator().manual_seed(0))[:20]
    numeric = _central_differences(loss, x, coords.tolist())
    analytic = grad.flatten()[coords]
    scale = float(grad.abs().max())
    assert torch.allclose(analytic, numeric, rtol=rtol, atol=rtol * scale)


def test_model_gradient_matches_finite_differences():
    """Test analytic input gradients of a small classifier in float64"""
    model = build_classifier(XVectorConfig(n_speakers=3, widths=(2, 2, 2, 2), embed_dim=8), seed=0).double().eval()
    assert sum(p.numel() for p in model.parameters()) <= 10_000
    x = 0.1 * torch.randn(1, 3200, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    _check(DefenseChain([], model), x, 1, rtol=1e-4)


def test_e2ed_vae_chain_gradient_matches_finite_differences():
    """Test exact gradients through a VAE stage"""
    model = build_classifier(XVectorConfig(n_speakers=3, widths=(2, 2, 2, 2), embed_dim=8), seed=0).double().eval()
    torch.manual_seed(0)
    vae = VaeModel(VaeConfig(hidden=8, latent=2)).double()
    chain = DefenseChain([VaeStage(vae)], model, ThreatMode.E2ED)
    x = 0.1 * torch.randn(1, 3200, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    _check(chain, x, 0, rtol=1e-3)


def test_gradient_shape_follows_input(tiny_model, waveforms):
    """Test that single waveforms and batches keep their shape"""
    assert grad_input(tiny_model, waveforms[0], 1).shape == waveforms[0].shape
    assert grad_input(tiny_model, waveforms, torch.tensor([0, 1])).shape == waveforms.shape


def test_satisfied_cw_margin_has_zero_gradient(tiny_model, waveforms):
    """Test that a kappa-satisfied margin is flat"""
    label = int(tiny_model(waveforms[:1]).argmin())
    grad = grad_input(tiny_model, waveforms[:1], label, GradientRequest(loss_kind="cw_margin"))
    assert torch.count_nonzero(grad) == 0


def test_illegal_mode_raises(tiny_model):
    """Test that E2ED through a non-differentiable stage is refused"""
    from xvguard.defenses import DefenseGanStage, GanGenerator

    chain = DefenseChain([DefenseGanStage(GanGenerator())], tiny_model, ThreatMode.E2ED)
    with pytest.raises(GradientModeError, match="BPDA"):
        grad_input(chain, torch.zeros(1, 1600), 0, mode=ThreatMode.E2ED)
