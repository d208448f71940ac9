import math

import numpy as np
import pytest

from focusseg.errors import ConfigurationError, ContractViolation
from focusseg.gradcheck import grad_check
from focusseg.losses import LossWeights, boundary_map, ce_loss, dice_loss, loss_terms, selector_bce, total_loss
from focusseg.tensor import Tensor, backward

from oracles import boundary_scan, softmax_rows


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# -- boundary targets ----------------------------------------------------------

def test_uniform_labels_have_no_boundary():
    np.testing.assert_array_equal(boundary_map(np.full((6, 6), 2)), 0.0)


def test_vertical_halves():
    lab = np.zeros((4, 4), dtype=int)
    lab[:, 2:] = 1
    expected = np.zeros((4, 4))
    expected[:, 1:3] = 1.0
    np.testing.assert_array_equal(boundary_map(lab, 1), expected)


@pytest.mark.parametrize("radius", [1, 2])
def test_boundary_matches_scan(radius, rng):
    for _ in range(30):
        lab = rng.integers(0, 3, size=(9, 7))
        lab[rng.uniform(size=lab.shape) < 0.1] = 255
        np.testing.assert_array_equal(boundary_map(lab, radius), boundary_scan(lab, radius))


def test_boundary_pooled_is_binary(rng):
    lab = rng.integers(0, 4, size=(16, 16))
    b = boundary_map(lab, 1, (2, 2))
    assert b.shape == (2, 2)
    assert set(np.unique(b)) <= {0.0, 1.0}


def test_boundary_bad_target_shape():
    with pytest.raises(ConfigurationError):
        boundary_map(np.zeros((16, 16), dtype=int), 1, (3, 3))


# -- cross-entropy -------------------------------------------------------------

def test_ce_uniform_logits():
    lab = np.array([[0, 1], [2, 3]])
    assert abs(ce_loss(Tensor(np.zeros((4, 2, 2))), lab).item() - math.log(4)) < 1e-12


def test_ce_confident_correct_goes_to_zero():
    lab = np.array([[0, 1]])
    logits = np.zeros((2, 1, 2))
    logits[0, 0, 0] = logits[1, 0, 1] = 60.0
    assert ce_loss(Tensor(logits), lab).item() < 1e-20


def test_ce_two_pixel_hand_case():
    z = np.array([[1.0, -0.5], [0.2, 2.0], [-1.0, 0.3]])   # 3 classes x 2 pixels
    lab = np.array([[2, 1]])
    p = softmax_rows(z)
    expected = -(math.log(p[2, 0]) + math.log(p[1, 1])) / 2
    assert abs(ce_loss(Tensor(z.reshape(3, 1, 2)), lab).item() - expected) < 1e-12


def test_ce_ignores_pixels():
    z = np.random.default_rng(0).normal(size=(3, 1, 3))
    full = ce_loss(Tensor(z[:, :, :2]), np.array([[0, 2]])).item()
    assert abs(ce_loss(Tensor(z), np.array([[0, 2, 255]])).item() - full) < 1e-15
    assert ce_loss(Tensor(z), np.full((1, 3), 255)).item() == 0.0


def test_ce_label_out_of_range():
    with pytest.raises(ContractViolation):
        ce_loss(Tensor(np.zeros((2, 1, 1))), np.array([[5]]))


def test_ce_gradcheck(rng):
    z = leaf(rng.uniform(-2, 2, size=(2, 3, 4, 4)))
    lab = rng.integers(0, 3, size=(2, 4, 4))
    lab[0, 0, 0] = 255
    assert grad_check(lambda: ce_loss(z, lab), [z]).passed


# -- dice ----------------------------------------------------------------------

def test_dice_perfect_prediction():
    lab = np.array([[0, 1], [2, 1]])
    p = np.eye(3)[lab].transpose(2, 0, 1)
    logits = np.where(p > 0, 800.0, -800.0)
    assert dice_loss(Tensor(logits), lab).item() == 0.0


def test_dice_single_pixel_hand_case():
    # class 0: (2*0.5 + 1) / (0.5 + 1 + 1) = 0.8; class 1: (0 + 1) / (0.5 + 0 + 1) = 2/3
    out = dice_loss(Tensor(np.zeros((2, 1, 1))), np.array([[0]]), eps=1.0).item()
    assert abs(out - (1 - (0.8 + 2 / 3) / 2)) < 1e-15
    assert abs(out - 4 / 15) < 1e-15


def test_dice_gradcheck(rng):
    z = leaf(rng.uniform(-2, 2, size=(3, 4, 4)))
    lab = rng.integers(0, 3, size=(4, 4))
    report = grad_check(lambda: dice_loss(z, lab), [z])
    assert report.passed, report.format()


def test_dice_bad_eps():
    with pytest.raises(ConfigurationError):
        dice_loss(Tensor(np.zeros((2, 1, 1))), np.array([[0]]), eps=0.0)


# -- selector BCE --------------------------------------------------------------

def test_bce_at_half_is_ln2(rng):
    b = (rng.uniform(size=(1, 3, 3)) > 0.5).astype(float)
    assert abs(selector_bce(Tensor(np.full((1, 3, 3), 0.5)), b).item() - math.log(2)) < 1e-15
    assert abs(math.log(2) - 0.6931472) < 1e-7


def test_bce_perfect_selector_near_zero():
    b = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert selector_bce(Tensor(b), b).item() < 1e-6


def test_bce_hand_case():
    s = np.array([[[0.9, 0.2], [0.6, 0.3]]])
    b = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    expected = -(math.log(0.9) + math.log(0.8) + math.log(0.4) + math.log(0.3)) / 4
    assert abs(selector_bce(Tensor(s), b).item() - expected) < 1e-12


def test_bce_gradcheck(rng):
    s = leaf(rng.uniform(0.05, 0.95, size=(1, 4, 4)))
    b = (rng.uniform(size=(1, 4, 4)) > 0.5).astype(float)
    assert grad_check(lambda: selector_bce(s, b), [s]).passed


# -- combined objective --------------------------------------------------------

def _random_inputs(rng):
    logits = leaf(rng.normal(size=(2, 3, 8, 8)))
    scores = leaf(rng.uniform(0.05, 0.95, size=(2, 1, 1, 1)))
    labels = rng.integers(0, 3, size=(2, 8, 8))
    return logits, labels, scores, boundary_map(labels, 1, (1, 1))


def test_zero_weights_equal_ce(rng):
    logits, labels, scores, b = _random_inputs(rng)
    tot = total_loss(logits, labels, scores, b, LossWeights(0.0, 0.0)).item()
    assert abs(tot - ce_loss(logits, labels).item()) < 1e-12


def test_total_is_weighted_sum(rng):
    logits, labels, scores, b = _random_inputs(rng)
    parts = ce_loss(logits, labels).item() + dice_loss(logits, labels).item() + selector_bce(scores, b).item()
    assert abs(total_loss(logits, labels, scores, b, LossWeights(1.0, 1.0)).item() - parts) < 1e-12


def test_default_weights_positive_finite(rng):
    terms = loss_terms(*_random_inputs(rng))
    total = terms.total.item()
    assert math.isfinite(total) and total > 0
    assert LossWeights() == LossWeights(1.0, 0.4)


def test_zero_weight_term_sends_no_gradient(rng):
    logits, labels, scores, b = _random_inputs(rng)
    backward(total_loss(logits, labels, scores, b, LossWeights(1.0, 0.0)))
    assert scores.grad is None
    assert logits.grad is not None


def test_negative_weights_rejected():
    with pytest.raises(ConfigurationError):
        LossWeights(-1.0, 0.4)
