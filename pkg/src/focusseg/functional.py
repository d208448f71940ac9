"""Differentiable spatial kernels over [C, H, W] or [N, C, H, W] tensors.

Convolution is an explicit patch gather (im2col) followed by one matrix
product; the backward pass scatters through the same tap plan. Taps that
only ever read zero padding are dropped from the gather, which matters for
large dilations on small feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .tensor import Tensor, as_tensor, make_node


def _batched(x: Tensor, name: str = "input") -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ContractViolation(f"{name} must be [C,H,W] or [N,C,H,W], got {x.shape}")


def same_padding(kernel: int, dilation: int) -> int:
    return (kernel - 1) * dilation // 2


def receptive_span(kernel: int, dilation: int) -> int:
    """Input extent covered by one dilated kernel: 1 + (k - 1) * d."""
    return 1 + (kernel - 1) * dilation


def check_conv_config(kernel: int, stride: int, dilation: int):
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigurationError(f"kernel size must be a positive odd integer, got {kernel}")
    if dilation < 1:
        raise ConfigurationError(f"dilation must be >= 1, got {dilation}")
    if stride not in (1, 2):
        raise ConfigurationError(f"stride must be 1 or 2, got {stride}")


@dataclass(frozen=True)
class TapPlan:
    """Which kernel taps can touch real (non-padding) input for a given geometry."""

    kernel: int
    dilation: int
    stride: int
    pad: int
    out_hw: Tuple[int, int]
    taps: Tuple[Tuple[int, int], ...]

    @property
    def offsets(self) -> np.ndarray:
        """(T, 2) source offsets of each live tap relative to the output anchor."""
        return np.array([(ki * self.dilation - self.pad, kj * self.dilation - self.pad) for ki, kj in self.taps])


def tap_plan(height: int, width: int, kernel: int, dilation: int, stride: int = 1) -> TapPlan:
    check_conv_config(kernel, stride, dilation)
    pad = same_padding(kernel, dilation)
    ho = (height + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1
    wo = (width + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1

    def live(extent, n_out):
        anchors = np.arange(n_out) * stride
        return [bool(np.any((anchors + k * dilation - pad >= 0) & (anchors + k * dilation - pad < extent)))
                for k in range(kernel)]

    rows, cols = live(height, ho), live(width, wo)
    taps = tuple((ki, kj) for ki in range(kernel) for kj in range(kernel) if rows[ki] and cols[kj])
    return TapPlan(kernel, dilation, stride, pad, (ho, wo), taps)


def _im2col(xpad: np.ndarray, plan: TapPlan) -> np.ndarray:
    n, c = xpad.shape[:2]
    ho, wo = plan.out_hw
    s, d = plan.stride, plan.dilation
    cols = np.empty((n, c, len(plan.taps), ho, wo))
    for t, (ki, kj) in enumerate(plan.taps):
        r0, c0 = ki * d, kj * d
        cols[:, :, t] = xpad[:, :, r0:r0 + s * (ho - 1) + 1:s, c0:c0 + s * (wo - 1) + 1:s]
    return cols.reshape(n, c * len(plan.taps), ho * wo)


def _col2im(dcols: np.ndarray, plan: TapPlan, padded_shape) -> np.ndarray:
    n, c = padded_shape[:2]
    ho, wo = plan.out_hw
    s, d = plan.stride, plan.dilation
    dcols = dcols.reshape(n, c, len(plan.taps), ho, wo)
    gpad = np.zeros(padded_shape)
    for t, (ki, kj) in enumerate(plan.taps):
        r0, c0 = ki * d, kj * d
        gpad[:, :, r0:r0 + s * (ho - 1) + 1:s, c0:c0 + s * (wo - 1) + 1:s] += dcols[:, :, t]
    return gpad


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, dilation: int = 1) -> Tensor:
    """Dilated cross-correlation with zero "same" padding.

    weight is [C_out, C_in, k, k]; output spatial size is ceil(H / stride).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xb, squeeze = _batched(x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ContractViolation(f"weight must be [C_out, C_in, k, k], got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    if xb.shape[1] != c_in:
        raise ContractViolation(f"input has {xb.shape[1]} channels, weight expects {c_in}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ContractViolation(f"bias must have shape ({c_out},), got {bias.shape}")
    n, _, h, w = xb.shape
    plan = tap_plan(h, w, k, dilation, stride)
    p = plan.pad
    xpad = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
    cols = _im2col(xpad, plan)
    t_idx = np.array([ki * k + kj for ki, kj in plan.taps], dtype=np.intp)
    w2 = weight.data.reshape(c_out, c_in, k * k)[:, :, t_idx].reshape(c_out, -1)
    ho, wo = plan.out_hw
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, c_out, ho, wo)
    if squeeze:
        out = out[0]

    def rule(g):
        g = g.reshape(n, c_out, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            gpad = _col2im(np.matmul(w2.T, g), plan, xpad.shape)
            gx = gpad[:, :, p:p + h, p:p + w] if p else gpad
            gx = gx[0] if squeeze else gx
        if weight.requires_grad:
            flat = np.matmul(g.transpose(1, 0, 2).reshape(c_out, -1), cols.transpose(1, 0, 2).reshape(cols.shape[1], -1).T)
            gw = np.zeros((c_out, c_in, k * k))
            gw[:, :, t_idx] = flat.reshape(c_out, c_in, len(t_idx))
            gw = gw.reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_node(out, parents, rule, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, keeping singleton spatial axes."""
    x = as_tensor(x)
    _batched(x)
    return x.mean(axis=(-2, -1), keepdims=True)


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    # half-pixel centres, no corner alignment, clamped at the edges
    src = np.clip((np.arange(n_in * factor) + 0.5) / factor - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_in * factor, n_in))
    rows = np.arange(n_in * factor)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ConfigurationError(f"upsample factor must be an integer >= 1, got {factor}")
    x = as_tensor(x)
    _batched(x)
    if factor == 1:
        return make_node(x.data.copy(), (x,), lambda g: (g,), "upsample")
    uh = _interp_matrix(x.shape[-2], factor)
    uw = _interp_matrix(x.shape[-1], factor)
    out = uh @ x.data @ uw.T
    return make_node(out, (x,), lambda g: (uh.T @ g @ uw,), "upsample")


def max_pool(x, window: int, stride: Optional[int] = None):
    """Non-overlapping max pooling over the last two axes (targets only, no gradient).

    Input is zero-padded at the bottom/right up to a multiple of the stride.
    Returns the same kind it was given (Tensor or ndarray).
    """
    stride = window if stride is None else stride
    if window != stride:
        raise ConfigurationError("max_pool supports non-overlapping windows only (window == stride)")
    wrap = isinstance(x, Tensor)
    arr = x.data if wrap else np.asarray(x)
    h, w = arr.shape[-2:]
    ph, pw = (-h) % stride, (-w) % stride
    if ph or pw:
        pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
        arr = np.pad(arr, pad)
    h2, w2 = arr.shape[-2] // stride, arr.shape[-1] // stride
    out = arr.reshape(arr.shape[:-2] + (h2, stride, w2, stride)).max(axis=(-3, -1))
    return Tensor(out) if wrap else out


def log_softmax(logits: Tensor, axis: int = -3) -> Tensor:
    """Log-softmax over the channel axis using max subtraction."""
    logits = as_tensor(logits)
    if logits.shape[axis] < 2:
        raise ContractViolation("log_softmax needs at least two classes")
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (logits,), rule, "log_softmax")


def softmax(logits: Tensor, axis: int = -3) -> Tensor:
    return log_softmax(logits, axis=axis).exp()

