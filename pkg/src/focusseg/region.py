"""Selector-driven Top-K hard masking with multi-scale masked branches.

The block takes high-level features F and produces

    S      = sigmoid(proj(relu(conv3x3(F))))         importance map
    F_ctx  = F + psi(GAP(F))                          global context
    F_i    = conv_i(F_ctx * topk(S, ratio_i))         one per branch
    F_agg  = F + sum_i F_i                            residual aggregation

The binary masks are constants in the backward pass unless the
straight-through option is on, so the selector only learns from its own
boundary supervision.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from . import tensor as T
from .errors import ConfigurationError, ContractViolation
from .tensor import Tensor


def _check_ratio(ratio: float):
    if not (0.0 < ratio <= 1.0) or not math.isfinite(ratio):
        raise ConfigurationError(f"top-k ratio must lie in (0, 1], got {ratio}")


@dataclass(frozen=True)
class BranchConfig:
    kernel: int
    dilation: int
    topk_ratio: float

    def __post_init__(self):
        F.check_conv_config(self.kernel, 1, self.dilation)
        _check_ratio(self.topk_ratio)

    @property
    def span(self) -> int:
        return F.receptive_span(self.kernel, self.dilation)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "BranchConfig":
        return cls(kernel=int(d["kernel"]), dilation=int(d["dilation"]), topk_ratio=float(d["topk_ratio"]))


# kernels 1/3/5/7 with ratios 10/20/30/40 %; dilation 16 on the 7x7 branch
DEFAULT_BRANCHES: Tuple[BranchConfig, ...] = (
    BranchConfig(1, 1, 0.10),
    BranchConfig(3, 1, 0.20),
    BranchConfig(5, 2, 0.30),
    BranchConfig(7, 16, 0.40),
)


def topk_count(ratio: float, positions: int) -> int:
    """k = max(1, round-half-up(ratio * positions))."""
    _check_ratio(ratio)
    return max(1, int(math.floor(ratio * positions + 0.5)))


@dataclass
class SelectionMask:
    mask: np.ndarray   # [1, H, W] (or [N, 1, H, W]) of 0.0 / 1.0
    ratio: float
    k: int

    def as_tensor(self) -> Tensor:
        return Tensor(self.mask)


def topk_mask(scores, ratio: float) -> SelectionMask:
    """Binary mask keeping the k highest scores of each map.

    Ties go to the lower row-major index (stable sort on negated scores).
    Accepts [1, H, W] or [N, 1, H, W]; k counts positions per map.
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if s.ndim not in (3, 4) or s.shape[-3] != 1:
        raise ContractViolation(f"importance map must be [1,H,W] or [N,1,H,W], got {s.shape}")
    h, w = s.shape[-2:]
    k = topk_count(ratio, h * w)
    flat = s.reshape(-1, h * w)
    order = np.argsort(-flat, axis=1, kind="stable")[:, :k]
    mask = np.zeros_like(flat)
    np.put_along_axis(mask, order, 1.0, axis=1)
    return SelectionMask(mask.reshape(s.shape), float(ratio), k)


def apply_mask(feat: Tensor, mask, soft: Optional[Tensor] = None) -> Tensor:
    """Channel-broadcast product F * M.

    With ``soft`` given, the mask value is still M but its gradient is routed
    to ``soft`` (straight-through); otherwise M is a constant.
    """
    m = mask.mask if isinstance(mask, SelectionMask) else (mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64))
    feat = T.as_tensor(feat)
    if m.shape[-2:] != feat.shape[-2:] or m.ndim != feat.ndim or m.shape[-3] != 1:
        raise ContractViolation(f"mask {m.shape} does not match features {feat.shape}")
    mt = T.straight_through(m, soft) if soft is not None else Tensor(m)
    return feat * mt


def selector_channels(c: int) -> int:
    return -(-c // 4)


def selector_forward(feat: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Importance map S in (0, 1), shape [1, H', W'] (or [N, 1, H', W'])."""
    hidden = T.relu(F.conv2d(feat, params["conv.weight"], params["conv.bias"]))
    return T.sigmoid(F.conv2d(hidden, params["proj.weight"], params["proj.bias"]))


def global_context(feat: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    g = F.conv2d(F.global_avg_pool(feat), params["weight"], params["bias"])
    return feat + g


def branch_forward(ctx: Tensor, scores: Tensor, cfg: BranchConfig, params: Mapping[str, Tensor],
                   use_ste: bool = False) -> Tensor:
    sel = topk_mask(scores, cfg.topk_ratio)
    masked = apply_mask(ctx, sel, soft=scores if use_ste else None)
    return F.conv2d(masked, params["weight"], params["bias"], dilation=cfg.dilation)


def aggregate(feat: Tensor, branch_outputs: Sequence[Tensor]) -> Tensor:
    out = feat
    for b in branch_outputs:
        if b.shape != feat.shape:
            raise ContractViolation(f"branch output {b.shape} does not match features {feat.shape}")
        out = out + b
    return out


def region_focus(feat: Tensor, params: Mapping[str, Mapping[str, Tensor]], branches: Sequence[BranchConfig],
                 use_ste: bool = False, residual_uses_ctx: bool = False) -> Tuple[Tensor, Tensor]:
    """Full block. ``params`` holds "selector", "psi" and "branch{i}" groups.

    Returns (F_agg, S).
    """
    scores = selector_forward(feat, params["selector"])
    ctx = global_context(feat, params["psi"])
    outs = [branch_forward(ctx, scores, cfg, params[f"branch{i}"], use_ste) for i, cfg in enumerate(branches)]
    return aggregate(ctx if residual_uses_ctx else feat, outs), scores


def param_shapes(channels: int, branches: Sequence[BranchConfig]) -> Dict[str, Dict[str, tuple]]:
    """Shapes of every region-focus parameter, in initialization order."""
    hid = selector_channels(channels)
    shapes: Dict[str, Dict[str, tuple]] = {
        "selector": {
            "conv.weight": (hid, channels, 3, 3), "conv.bias": (hid,),
            "proj.weight": (1, hid, 1, 1), "proj.bias": (1,),
        },
        "psi": {"weight": (channels, channels, 1, 1), "bias": (channels,)},
    }
    for i, cfg in enumerate(branches):
        shapes[f"branch{i}"] = {"weight": (channels, channels, cfg.kernel, cfg.kernel), "bias": (channels,)}
    return shapes

