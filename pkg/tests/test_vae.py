import pytest
import torch

from xvguard.defenses import VaeConfig, VaeModel, VaeStage, gaussian_kl, train_vae, vae_denoise
from xvguard.dsp import LogMelExtractor


def test_kl_of_identical_gaussians_is_zero():
    """Test KL vanishes for coinciding distributions."""
    mu, logvar = torch.randn(3, 5), torch.randn(3, 5)
    torch.testing.assert_close(gaussian_kl(mu, logvar, mu, logvar), torch.zeros(3, 5))


def test_kl_is_non_negative():
    """Test KL against a standard normal never goes below zero."""
    generator = torch.Generator().manual_seed(0)
    mu, logvar = 3 * torch.randn(100, generator=generator), 3 * torch.randn(100, generator=generator)
    assert (gaussian_kl(mu, logvar) >= 0).all()


def test_kl_known_value():
    """Test KL(N(1, 1) || N(0, 1)) = 1/2."""
    assert gaussian_kl(torch.tensor([1.0]), torch.tensor([0.0])).item() == pytest.approx(0.5)


def test_shapes():
    """Test encoder downsampling and decoder cropping."""
    vae = VaeModel(VaeConfig(hidden=8, latent=3)).eval()
    features = torch.randn(2, 45, 80)

    mu, logvar = vae.encode(features)

    assert mu.shape == (2, 3, 6)
    assert logvar.shape == mu.shape
    assert vae(features).shape == features.shape
    assert vae_denoise(vae, features[0]).shape == (45, 80)


def test_elbo_kl_term(waveforms):
    """Test the ELBO reports a per-utterance non-negative KL."""
    vae = VaeModel(VaeConfig(hidden=8, latent=2))
    features = LogMelExtractor()(waveforms)

    elbo, kl = vae.elbo(features, features, torch.Generator().manual_seed(0))

    assert elbo.shape == kl.shape == (2,)
    assert (kl >= 0).all()
    assert torch.isfinite(elbo).all()


def test_train_vae_trace(waveforms):
    """Test training records one ELBO per epoch and is seeded."""
    config = VaeConfig(hidden=8, latent=2, epochs=3, batch_size=2)
    data = torch.cat([waveforms, waveforms.flip(-1)])
    trace_a, trace_b = [], []

    first = train_vae(data, config, seed=0, trace=trace_a)
    second = train_vae(data, config, seed=0, trace=trace_b)

    assert len(trace_a) == 3
    assert trace_a == trace_b
    assert not first.training
    for a, b in zip(first.parameters(), second.parameters()):
        assert torch.equal(a, b)


def test_stage_is_differentiable(waveforms):
    """Test gradients reach the features through the VAE stage."""
    stage = VaeStage(VaeModel(VaeConfig(hidden=8, latent=2)))
    features = LogMelExtractor()(waveforms).requires_grad_(True)

    (grad,) = torch.autograd.grad(stage(features, torch.Generator().manual_seed(0)).sum(), features)

    assert grad.abs().sum() > 0
