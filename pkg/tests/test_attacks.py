import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from xvguard.attacks import (
    apply_universal,
    bim,
    cosine_objective,
    cw_l2,
    fgsm,
    fit_to_length,
    pgd,
    run_attack,
    universal_perturbation,
)
from xvguard.core import lp_norm
from xvguard.errors import UnsupportedNormError
from xvguard.model import make_objective
from xvguard.types import Algorithm, AttackConfig, CwConfig, UniversalConfig


def _linear_logits(x: torch.Tensor) -> torch.Tensor:
    score = x.sum(dim=-1) + 2
    return torch.stack([score, torch.zeros_like(score)], dim=-1)


def test_fgsm_on_a_linear_model(linear_model):
    """Test that FGSM steps against the weight sign by exactly eps"""
    x = torch.zeros(1, 16)
    result = fgsm(linear_model, x, 0, 0.05)
    assert torch.allclose(result.adversarial, torch.full((1, 16), -0.05))
    assert float(result.linf[0]) == pytest.approx(0.05)
    assert result.iterations_used == 1


def test_single_step_bim_equals_fgsm(tiny_model, waveforms):
    """Test that one BIM step of size eps is FGSM"""
    one = bim(tiny_model, waveforms, torch.tensor([0, 1]), 0.01, alpha=0.01, iterations=1)
    assert torch.equal(one.adversarial, fgsm(tiny_model, waveforms, torch.tensor([0, 1]), 0.01).adversarial)


def test_zero_budget_returns_the_input(tiny_model, waveforms):
    """Test eps = 0 for FGSM and PGD"""
    assert torch.equal(fgsm(tiny_model, waveforms, 0, 0.0).adversarial, waveforms)
    assert torch.equal(pgd(tiny_model, waveforms, 0, eps=0.0).adversarial, waveforms)


@settings(max_examples=500, deadline=None)
@given(
    st.sampled_from(["fgsm", "bim", "pgd", "universal"]),
    st.sampled_from([2, math.inf]),
    st.floats(1e-4, 2.0),
    st.integers(0, 2),
    st.integers(0, 2**31),
)
def test_budget_soundness(algorithm, p, eps, restarts, seed):
    """Test that realized perturbations never leave the ball"""
    generator = torch.Generator().manual_seed(seed)
    x = 2 * torch.rand(3, 16, generator=generator) - 1
    if algorithm == "universal":
        config = UniversalConfig(max_epochs=1, steps_per_radius=2, radius_levels=2)
        delta = universal_perturbation(_linear_logits, x, p=p, eps=eps, config=config, generator=generator).perturbation.delta
        assert float(lp_norm(delta, p)) <= eps + 1e-6
        adversarial = apply_universal(x, delta)
    else:
        if algorithm != "pgd":
            p, restarts = math.inf, 0
        config = AttackConfig(algorithm=Algorithm(algorithm), epsilon=eps, p=p, iterations=3, restarts=restarts)
        adversarial = run_attack(config, _linear_logits, x, 0, generator=generator).adversarial
    assert float(lp_norm(adversarial - x, p).max()) <= eps + 1e-6
    assert bool((adversarial.abs() <= 1).all())


def test_more_restarts_never_lower_the_loss(tiny_model, waveforms):
    """Test that the best-of-R restart is at least as strong as the first restart"""
    labels = torch.tensor([0, 1])
    objective = make_objective(tiny_model, labels)
    runs = [
        pgd(tiny_model, waveforms, labels, eps=0.01, iterations=3, restarts=r, generator=torch.Generator().manual_seed(5))
        for r in (1, 3)
    ]
    one, three = (objective(r.adversarial) for r in runs)
    assert bool((three >= one - 1e-6).all())


def test_unsupported_norm(tiny_model, waveforms):
    """Test that L1 is refused"""
    with pytest.raises(UnsupportedNormError):
        pgd(tiny_model, waveforms, 0, p=1, eps=0.1)


def test_cw_matches_the_analytic_boundary(linear_model):
    """Test CW on a linear model whose decision boundary is 0.5 away in L2"""
    config = CwConfig(lr=0.01, inner_iters=100, outer_iters=10)
    result = cw_l2(linear_model, torch.zeros(1, 16), 0, config)
    assert bool(result.success[0])
    assert float(result.l2[0]) == pytest.approx(0.5, rel=0.2)
    assert result.perturbation.budget is None


def test_cw_defaults_reach_the_boundary(one_second_linear_model):
    """Test default CW settings land within 20% of the boundary on a one-second utterance"""
    result = cw_l2(one_second_linear_model, torch.zeros(1, 16000), 0, CwConfig())

    assert bool(result.success[0])
    assert float(result.l2[0]) == pytest.approx(2 / math.sqrt(16000), rel=0.2)


def test_cw_shrinking_never_grows_the_perturbation(one_second_linear_model):
    """Test the scale bisection only replaces the best success with a smaller one"""
    x = torch.zeros(1, 16000)
    plain = cw_l2(one_second_linear_model, x, 0, CwConfig(refine_steps=0))
    shrunk = cw_l2(one_second_linear_model, x, 0, CwConfig())

    assert bool(plain.success[0]) and bool(shrunk.success[0])
    assert float(shrunk.l2[0]) <= float(plain.l2[0])


def test_cw_failure_is_a_result(linear_model):
    """Test that an unreachable boundary yields success=False instead of an error"""
    config = CwConfig(lr=1e-5, inner_iters=2, outer_iters=1)
    result = cw_l2(linear_model, torch.zeros(1, 16), 0, config)
    assert not bool(result.success[0])


def test_fit_to_length_tiles_and_crops():
    """Test tiling of short and cropping of long universal perturbations"""
    delta = torch.tensor([1.0, 2.0, 3.0])
    assert fit_to_length(delta, 7).tolist() == [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]
    assert fit_to_length(delta, 2).tolist() == [1.0, 2.0]
    assert apply_universal(torch.zeros(1, 2), torch.tensor([5.0, -5.0])).tolist() == [[1.0, -1.0]]


def test_universal_perturbation_fools_a_linear_model(linear_model):
    """Test that one perturbation fools the whole set within budget"""
    x = 0.05 * torch.rand(8, 16, generator=torch.Generator().manual_seed(0))
    result = universal_perturbation(
        linear_model, x, eps=0.5, config=UniversalConfig(fool_rate=0.8), labels=torch.zeros(8, dtype=torch.long)
    )
    assert result.converged
    assert result.fooled_fraction >= 0.8
    assert float(result.perturbation.delta.abs().max()) <= 0.5 + 1e-6


def test_run_attack_dispatch(linear_model):
    """Test configured attacks and the universal precondition"""
    x = torch.zeros(1, 16)
    result = run_attack(AttackConfig(Algorithm.BIM, epsilon=0.2), linear_model, x, 0)
    assert bool(result.success[0])
    assert result.iterations_used == 7

    universal = AttackConfig(Algorithm.UNIVERSAL, epsilon=0.2)
    with pytest.raises(ValueError, match="universal_delta"):
        run_attack(universal, linear_model, x, 0)
    applied = run_attack(universal, linear_model, x, 0, universal_delta=torch.full((4,), -0.2))
    assert torch.allclose(applied.adversarial, torch.full((1, 16), -0.2))


def test_cosine_objective_signs():
    """Test that target trials are pushed apart and non-targets together"""
    enroll = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
    objective = cosine_objective(lambda x: x, enroll, torch.tensor([True, False]))
    assert objective(torch.tensor([[1.0, 0.0], [1.0, 0.0]])).tolist() == [-1.0, 1.0]
