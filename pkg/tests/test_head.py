# tests/test_head.py
import math

import pytest
import torch

from ccvec.errors import ConfigurationError, ShapeError
from ccvec.head import (
    PROB_EPS,
    WordPredictionHead,
    fuse_files,
    l2_penalty,
    loss,
    loss_from_logits,
    predict_word_probs,
)


def test_fuse_files():
    assert fuse_files([torch.ones(18), torch.zeros(18)], 2).shape == (36,)
    single = torch.randn(5)
    assert torch.equal(fuse_files([single], 1), single)
    with pytest.raises(ShapeError):
        fuse_files([torch.ones(3), torch.ones(3)], 3)


def test_zero_weights_predict_one_half():
    head = WordPredictionHead(6, 4, 9)
    with torch.no_grad():
        for param in head.parameters():
            param.zero_()
    probs = predict_word_probs(torch.randn(2, 6), head)
    assert torch.allclose(probs, torch.full((2, 9), 0.5))


def test_single_hidden_unit_toy():
    head = WordPredictionHead(3, 1, 2)
    with torch.no_grad():
        head.hidden.weight.zero_()
        head.hidden.bias.fill_(1.0)
        head.output.weight.fill_(math.log(3.0))
    probs = predict_word_probs(torch.randn(3), head)
    assert probs.tolist() == pytest.approx([0.75, 0.75], abs=1e-6)


def test_head_rejects_wrong_width():
    with pytest.raises(ShapeError):
        WordPredictionHead(6, 4, 9)(torch.randn(5))


def test_dropout_only_in_training_mode():
    torch.manual_seed(0)
    head = WordPredictionHead(8, 16, 4, dropout=0.5)
    e_p = torch.randn(3, 8)
    head.eval()
    assert torch.equal(head(e_p), head(e_p))
    head.train()
    assert not torch.equal(head(e_p), head(e_p))


def test_loss_single_word():
    assert loss(torch.tensor([0.5]), torch.tensor([1.0])).item() == pytest.approx(0.693147, abs=1e-6)


def test_loss_perfect_prediction_is_clamped_near_zero():
    value = loss(torch.tensor([1.0], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64))
    assert value.item() == pytest.approx(-math.log(1 - PROB_EPS), abs=1e-9)
    assert value.item() < 1e-6


def test_loss_with_l2_term():
    theta = [torch.tensor([2.0])]
    value = loss(torch.tensor([0.5, 0.5]), torch.tensor([1.0, 0.0]), theta, lam=2.0)
    assert value.item() == pytest.approx(2 * math.log(2) + 4, abs=1e-4)
    assert value.item() == pytest.approx(5.3863, abs=1e-4)


def test_loss_averages_over_batch():
    probs = torch.tensor([[0.5, 0.5], [0.5, 0.5]])
    labels = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
    assert loss(probs, labels).item() == pytest.approx(2 * math.log(2), abs=1e-6)


def test_loss_rejects_negative_lambda():
    with pytest.raises(ConfigurationError):
        loss(torch.tensor([0.5]), torch.tensor([1.0]), lam=-1.0)
    with pytest.raises(ConfigurationError):
        loss_from_logits(torch.zeros(1, 2), torch.zeros(1, 2), lam=-0.1)


def test_logit_loss_matches_probability_loss():
    torch.manual_seed(1)
    logits = torch.randn(4, 6, dtype=torch.float64)
    labels = (torch.rand(4, 6) > 0.5).double()
    params = [torch.randn(3, dtype=torch.float64)]
    expected = loss(torch.sigmoid(logits), labels, params, lam=0.3)
    assert loss_from_logits(logits, labels, params, lam=0.3).item() == pytest.approx(expected.item(), abs=1e-9)


def test_l2_gradient_shrinks_weights():
    weight = torch.randn(5, requires_grad=True)
    logits = weight.sum().reshape(1, 1)
    labels = torch.ones(1, 1)
    plain = torch.autograd.grad(loss_from_logits(logits, labels, [weight], lam=0.0), weight)[0]
    logits = weight.sum().reshape(1, 1)
    regularised = torch.autograd.grad(loss_from_logits(logits, labels, [weight], lam=0.5), weight)[0]
    assert torch.allclose(regularised - plain, 0.5 * weight.detach(), atol=1e-6)


def test_l2_penalty():
    assert l2_penalty([torch.tensor([1.0, 2.0]), torch.tensor([[2.0]])]).item() == 9.0
    assert l2_penalty([]).item() == 0.0
