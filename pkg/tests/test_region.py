import numpy as np
import pytest

from focusseg import losses
from focusseg.errors import ConfigurationError, ContractViolation
from focusseg.gradcheck import grad_check
from focusseg.region import (DEFAULT_BRANCHES, BranchConfig, aggregate, apply_mask, branch_forward, global_context,
                             param_shapes, region_focus, selector_forward, topk_count, topk_mask)
from focusseg.tensor import Tensor, backward

from oracles import topk_sort_oracle


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def random_params(channels, branches, rng, scale=0.3):
    return {g: {k: leaf(rng.normal(scale=scale, size=s)) for k, s in entries.items()}
            for g, entries in param_shapes(channels, branches).items()}


def zero_params(channels, branches):
    return {g: {k: leaf(np.zeros(s)) for k, s in entries.items()}
            for g, entries in param_shapes(channels, branches).items()}


# -- selector ------------------------------------------------------------------

def test_zero_selector_gives_half():
    p = zero_params(8, DEFAULT_BRANCHES)["selector"]
    s = selector_forward(Tensor(np.random.default_rng(0).normal(size=(8, 4, 4))), p)
    assert s.shape == (1, 4, 4)
    np.testing.assert_array_equal(s.data, 0.5)


def test_selector_range(rng):
    p = random_params(8, DEFAULT_BRANCHES, rng, scale=0.3)["selector"]
    s = selector_forward(Tensor(rng.normal(scale=3, size=(8, 6, 6))), p).data
    assert np.all((s > 0) & (s < 1))


def test_selector_saturation_stays_in_closed_interval(rng):
    # float64 sigmoid rounds to exactly 1.0 past ~37; the BCE clamp covers that
    p = random_params(8, DEFAULT_BRANCHES, rng, scale=50.0)["selector"]
    s = selector_forward(Tensor(rng.normal(scale=50, size=(8, 6, 6))), p).data
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))


def test_selector_bce_gradcheck(rng):
    p = random_params(8, DEFAULT_BRANCHES, rng)["selector"]
    for t in p.values():
        t.data += rng.uniform(-0.1, 0.1, size=t.shape)
    feat = Tensor(rng.uniform(-2, 2, size=(8, 4, 4)))
    b = (rng.uniform(size=(1, 4, 4)) > 0.6).astype(float)
    report = grad_check(lambda: losses.selector_bce(selector_forward(feat, p), b), p)
    assert report.passed, report.format()


# -- top-k ---------------------------------------------------------------------

def test_full_ratio_selects_everything(rng):
    m = topk_mask(rng.uniform(size=(1, 5, 3)), 1.0)
    np.testing.assert_array_equal(m.mask, 1.0)
    assert m.k == 15


def test_topk_hand_case():
    m = topk_mask(np.array([[[0.9, 0.1], [0.5, 0.7]]]), 0.5)
    np.testing.assert_array_equal(m.mask[0], [[1, 0], [0, 1]])


def test_topk_tie_goes_to_lowest_index():
    m = topk_mask(np.full((1, 2, 2), 0.5), 0.25)
    np.testing.assert_array_equal(m.mask.ravel(), [1, 0, 0, 0])


def test_topk_count_rounding():
    assert topk_count(0.1, 64) == 6       # 6.4
    assert topk_count(0.3, 5) == 2        # 1.5 rounds up
    assert topk_count(0.01, 4) == 1       # floor of one selection
    with pytest.raises(ConfigurationError):
        topk_count(0.0, 4)
    with pytest.raises(ConfigurationError):
        topk_count(1.5, 4)


def test_topk_matches_sort_oracle(rng):
    for _ in range(200):
        h, w = rng.integers(1, 9, size=2)
        s = np.round(rng.uniform(size=(1, h, w)), 1)   # plenty of ties
        ratio = float(rng.choice([0.1, 0.2, 0.3, 0.4, 1.0]))
        expected, k = topk_sort_oracle(s, ratio)
        got = topk_mask(s, ratio)
        assert got.k == k
        np.testing.assert_array_equal(got.mask, expected)


def test_topk_batched_is_per_map(rng):
    s = rng.uniform(size=(3, 1, 4, 4))
    m = topk_mask(s, 0.3)
    for n in range(3):
        np.testing.assert_array_equal(m.mask[n], topk_mask(s[n], 0.3).mask)


def test_topk_rejects_multichannel():
    with pytest.raises(ContractViolation):
        topk_mask(np.zeros((2, 4, 4)), 0.5)


# -- masking and context -------------------------------------------------------

def test_apply_mask_ones_and_zeros(rng):
    f = rng.normal(size=(3, 4, 4))
    np.testing.assert_array_equal(apply_mask(Tensor(f), np.ones((1, 4, 4))).data, f)
    np.testing.assert_array_equal(apply_mask(Tensor(f), np.zeros((1, 4, 4))).data, 0.0)


def test_apply_mask_gradient_is_mask(rng):
    f = leaf(rng.normal(size=(3, 4, 4)))
    m = (rng.uniform(size=(1, 4, 4)) > 0.5).astype(float)
    backward(apply_mask(f, m).sum())
    np.testing.assert_array_equal(f.grad, np.broadcast_to(m, (3, 4, 4)))


def test_apply_mask_shape_check():
    with pytest.raises(ContractViolation):
        apply_mask(Tensor(np.zeros((3, 4, 4))), np.ones((1, 2, 2)))


def test_zero_psi_is_identity(rng):
    f = rng.normal(size=(4, 3, 3))
    p = {"weight": Tensor(np.zeros((4, 4, 1, 1))), "bias": Tensor(np.zeros(4))}
    np.testing.assert_array_equal(global_context(Tensor(f), p).data, f)


def test_identity_psi_doubles_constant_channels():
    c = np.array([1.0, -2.0, 3.5])
    f = np.broadcast_to(c[:, None, None], (3, 4, 4)).copy()
    p = {"weight": Tensor(np.eye(3).reshape(3, 3, 1, 1)), "bias": Tensor(np.zeros(3))}
    np.testing.assert_allclose(global_context(Tensor(f), p).data, 2 * f, atol=1e-15)


def test_context_shift_is_constant_per_channel(rng):
    f = rng.normal(size=(4, 5, 5))
    p = {"weight": Tensor(rng.normal(size=(4, 4, 1, 1))), "bias": Tensor(rng.normal(size=4))}
    diff = global_context(Tensor(f), p).data - f
    np.testing.assert_allclose(diff, diff[:, :1, :1] * np.ones_like(diff), atol=1e-14)


# -- branches and aggregation --------------------------------------------------

def test_identity_branch_passes_context(rng):
    ctx = Tensor(rng.normal(size=(3, 4, 4)))
    p = {"weight": Tensor(np.eye(3).reshape(3, 3, 1, 1)), "bias": Tensor(np.zeros(3))}
    out = branch_forward(ctx, Tensor(rng.uniform(size=(1, 4, 4))), BranchConfig(1, 1, 1.0), p)
    np.testing.assert_array_equal(out.data, ctx.data)


def test_default_branch_schedule():
    assert [b.kernel for b in DEFAULT_BRANCHES] == [1, 3, 5, 7]
    assert [b.topk_ratio for b in DEFAULT_BRANCHES] == [0.10, 0.20, 0.30, 0.40]
    assert [b.dilation for b in DEFAULT_BRANCHES] == [1, 1, 2, 16]


def test_zero_weight_branch_is_zero(rng):
    p = {"weight": Tensor(np.zeros((3, 3, 5, 5))), "bias": Tensor(np.zeros(3))}
    out = branch_forward(Tensor(rng.normal(size=(3, 6, 6))), Tensor(rng.uniform(size=(1, 6, 6))),
                         BranchConfig(5, 2, 0.3), p)
    np.testing.assert_array_equal(out.data, 0.0)


def test_aggregate_identities(rng):
    f = Tensor(rng.normal(size=(2, 3, 3)))
    np.testing.assert_array_equal(aggregate(f, [Tensor(np.zeros((2, 3, 3)))] * 2).data, f.data)
    np.testing.assert_allclose(aggregate(f, [f, f]).data, 3 * f.data, atol=1e-15)
    with pytest.raises(ContractViolation):
        aggregate(f, [Tensor(np.zeros((2, 2, 2)))])


def test_block_is_identity_with_zero_params(rng):
    f = rng.normal(size=(8, 6, 6))
    out, s = region_focus(Tensor(f), zero_params(8, DEFAULT_BRANCHES), DEFAULT_BRANCHES)
    np.testing.assert_array_equal(out.data, f)
    assert s.shape == (1, 6, 6)


@pytest.mark.parametrize("kernel,dilation", [(1, 1), (3, 2), (5, 3), (7, 16)])
def test_block_keeps_shape(kernel, dilation, rng):
    branches = (BranchConfig(kernel, dilation, 0.5),)
    out, _ = region_focus(Tensor(rng.normal(size=(4, 5, 7))), random_params(4, branches, rng), branches)
    assert out.shape == (4, 5, 7)


def test_block_gradcheck_wrt_features(rng):
    branches = (BranchConfig(1, 1, 0.25), BranchConfig(3, 1, 0.5), BranchConfig(5, 2, 0.75))
    params = random_params(4, branches, rng)
    f = leaf(rng.uniform(-2, 2, size=(4, 4, 4)))
    probe = Tensor(rng.normal(size=(4, 4, 4)))
    # perturbing F moves S, so keep the masks fixed by scoring from a frozen copy
    frozen = {g: {k: Tensor(v.data) for k, v in e.items()} for g, e in params.items()}
    s = selector_forward(Tensor(f.data), frozen["selector"])

    def f_agg():
        ctx = global_context(f, params["psi"])
        outs = [branch_forward(ctx, s, cfg, params[f"branch{i}"]) for i, cfg in enumerate(branches)]
        return (aggregate(f, outs) * probe).sum()

    report = grad_check(f_agg, {"F": f, **{f"{g}.{k}": v for g, e in params.items() if g != "selector"
                                            for k, v in e.items()}})
    assert report.passed, report.format()


def test_no_gradient_reaches_selector_through_masks(rng):
    params = random_params(4, DEFAULT_BRANCHES, rng)
    out, _ = region_focus(Tensor(rng.normal(size=(4, 5, 5))), params, DEFAULT_BRANCHES)
    backward(out.sum())
    for t in params["selector"].values():
        assert t.grad is None or not np.any(t.grad)
    assert params["branch0"]["weight"].grad is not None


def test_straight_through_option_reaches_selector(rng):
    params = random_params(4, DEFAULT_BRANCHES, rng)
    out, _ = region_focus(Tensor(rng.normal(size=(4, 5, 5))), params, DEFAULT_BRANCHES, use_ste=True)
    backward((out * out).sum())
    assert np.any(params["selector"]["proj.weight"].grad)


def test_residual_flag_uses_context(rng):
    f = rng.normal(size=(4, 3, 3))
    params = zero_params(4, DEFAULT_BRANCHES)
    params["psi"]["bias"].data[:] = 1.0
    out, _ = region_focus(Tensor(f), params, DEFAULT_BRANCHES, residual_uses_ctx=True)
    np.testing.assert_allclose(out.data, f + 1.0, atol=1e-15)


def test_branch_config_validation():
    with pytest.raises(ConfigurationError):
        BranchConfig(4, 1, 0.1)
    with pytest.raises(ConfigurationError):
        BranchConfig(3, 0, 0.1)
    with pytest.raises(ConfigurationError):
        BranchConfig(3, 1, 0.0)
    assert BranchConfig.from_dict(BranchConfig(7, 16, 0.4).to_dict()) == BranchConfig(7, 16, 0.4)
    assert BranchConfig(7, 16, 0.4).span == 97
