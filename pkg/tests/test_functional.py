import numpy as np
import pytest

from focusseg import functional as F
from focusseg.errors import ConfigurationError, ContractViolation
from focusseg.gradcheck import grad_check
from focusseg.tensor import Tensor, backward

from oracles import conv2d_loops


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# -- convolution ---------------------------------------------------------------

def test_identity_1x1_conv(rng):
    x = rng.normal(size=(4, 5, 6))
    w = np.eye(4).reshape(4, 4, 1, 1)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, x)


def test_ones_kernel_on_constant_input_interior():
    out = F.conv2d(Tensor(np.full((1, 5, 5), 2.5)), Tensor(np.ones((1, 1, 3, 3))))
    assert out.data[0, 2, 2] == 9 * 2.5
    assert out.data[0, 0, 0] == 4 * 2.5   # corner sees 4 real pixels


def test_receptive_span_of_widest_branch():
    assert F.receptive_span(7, 16) == 97
    assert F.receptive_span(3, 1) == 3


@pytest.mark.parametrize("k,d,stride", [(1, 1, 1), (3, 1, 1), (3, 2, 1), (5, 2, 1), (3, 1, 2), (5, 3, 2), (7, 16, 1)])
def test_conv_matches_loop_oracle(k, d, stride, rng):
    x = rng.normal(size=(2, 7, 6))
    w = rng.normal(size=(3, 2, k, k))
    b = rng.normal(size=3)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, dilation=d)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, stride, d), atol=1e-12)


def test_conv_batched_matches_per_sample(rng):
    x = rng.normal(size=(3, 2, 6, 6))
    w = rng.normal(size=(4, 2, 3, 3))
    out = F.conv2d(Tensor(x), Tensor(w), dilation=2)
    for n in range(3):
        np.testing.assert_allclose(out.data[n], F.conv2d(Tensor(x[n]), Tensor(w), dilation=2).data, atol=1e-13)


@pytest.mark.parametrize("d", [1, 2, 3, 16])
def test_same_padding_keeps_shape(d, rng):
    out = F.conv2d(Tensor(rng.normal(size=(2, 9, 7))), Tensor(rng.normal(size=(2, 2, 5, 5))), dilation=d)
    assert out.shape == (2, 9, 7)


def test_dilation_does_not_change_weight_shape():
    shapes = {F.tap_plan(8, 8, 7, d).kernel for d in (1, 2, 4, 8, 16)}
    assert shapes == {7}


def test_tap_plan_drops_padding_only_taps():
    assert F.tap_plan(8, 8, 7, 16).taps == ((3, 3),)
    assert len(F.tap_plan(64, 64, 7, 16).taps) == 49
    assert len(F.tap_plan(8, 8, 3, 1).taps) == 9


def test_conv3x3_dilation2_gradcheck(rng):
    x = leaf(rng.uniform(-2, 2, size=(1, 8, 8)))
    w = leaf(rng.uniform(-2, 2, size=(2, 1, 3, 3)))
    b = leaf(rng.uniform(-2, 2, size=(2,)))
    probe = Tensor(rng.normal(size=(2, 8, 8)))
    report = grad_check(lambda: (F.conv2d(x, w, b, dilation=2) * probe).sum(), [x, w, b])
    assert report.passed, report.format()


def test_strided_conv_gradcheck(rng):
    x = leaf(rng.uniform(-2, 2, size=(2, 2, 7, 6)))
    w = leaf(rng.uniform(-2, 2, size=(3, 2, 3, 3)))
    probe = Tensor(rng.normal(size=(2, 3, 4, 3)))
    report = grad_check(lambda: (F.conv2d(x, w, stride=2) * probe).sum(), [x, w])
    assert report.passed, report.format()


@pytest.mark.parametrize("k,stride,d", [(2, 1, 1), (3, 3, 1), (3, 1, 0)])
def test_bad_conv_config_rejected(k, stride, d):
    with pytest.raises(ConfigurationError):
        F.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, k, k))), stride=stride, dilation=d)


def test_channel_mismatch_rejected():
    with pytest.raises(ContractViolation):
        F.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


# -- pooling and resampling ----------------------------------------------------

def test_gap_constant_and_hand_mean():
    np.testing.assert_array_equal(F.global_avg_pool(Tensor(np.full((3, 4, 4), 1.5))).data, 1.5)
    out = F.global_avg_pool(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
    assert out.shape == (1, 1, 1) and out.item() == 2.5


def test_gap_backward_is_uniform():
    x = leaf(np.zeros((2, 3, 5)))
    backward(F.global_avg_pool(x).sum())
    np.testing.assert_allclose(x.grad, 1.0 / 15)


def test_upsample_identity_and_constant(rng):
    x = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(F.bilinear_upsample(Tensor(x), 1).data, x)
    np.testing.assert_allclose(F.bilinear_upsample(Tensor(np.full((1, 3, 3), 0.7)), 4).data, 0.7, atol=1e-15)


def test_upsample_ramp():
    out = F.bilinear_upsample(Tensor(np.array([[[0.0, 1.0]]])), 2).data
    np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0])


def test_upsample_gradcheck(rng):
    x = leaf(rng.uniform(-2, 2, size=(2, 3, 4)))
    probe = Tensor(rng.normal(size=(2, 12, 16)))
    assert grad_check(lambda: (F.bilinear_upsample(x, 4) * probe).sum(), [x]).passed


def test_max_pool_examples():
    np.testing.assert_array_equal(F.max_pool(np.zeros((4, 4)), 2), np.zeros((2, 2)))
    assert F.max_pool(np.array([[0.0, 1.0], [0.0, 0.0]]), 2)[0, 0] == 1.0
    assert F.max_pool(np.ones((5, 5)), 2).shape == (3, 3)


# -- log-softmax ---------------------------------------------------------------

def test_log_softmax_uniform():
    out = F.log_softmax(Tensor(np.zeros((4, 2, 2)))).data
    np.testing.assert_allclose(out, np.log(0.25), atol=1e-15)
    assert abs(out[0, 0, 0] - (-1.3862944)) < 1e-7


def test_log_softmax_large_logits():
    out = F.log_softmax(Tensor(np.array([1000.0, 0.0]).reshape(2, 1, 1))).data.ravel()
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, -1000.0], atol=1e-12)


def test_log_softmax_gradcheck(rng):
    z = leaf(rng.uniform(-2, 2, size=(2, 4, 3, 3)))
    probe = Tensor(rng.normal(size=(2, 4, 3, 3)))
    assert grad_check(lambda: (F.log_softmax(z) * probe).sum(), [z]).passed


def test_log_softmax_single_class_rejected():
    with pytest.raises(ContractViolation):
        F.log_softmax(Tensor(np.zeros((1, 2, 2))))
