"""Boundary targets and the three-term segmentation objective.

total = CE + lambda1 * Dice + lambda2 * BCE(S, B)

All losses accept a single sample ([C,H,W] logits, [H,W] labels) or a batch
([N,C,H,W], [N,H,W]); batch values are the mean of per-sample values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from . import tensor as T
from .errors import ConfigurationError, ContractViolation
from .tensor import Tensor

IGNORE_INDEX = 255
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.4

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")


def boundary_map(labels, radius: int = 1, target_shape: Optional[Sequence[int]] = None,
                 ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Mark pixels that see a different (non-ignore) label within Chebyshev ``radius``.

    Ignore pixels are never marked. With ``target_shape`` the map is max-pooled
    down by the integer factor between the label and target resolutions.
    Works on [H, W] or [N, H, W]; returns float64 0/1.
    """
    if radius < 0:
        raise ConfigurationError(f"boundary radius must be >= 0, got {radius}")
    lab = np.asarray(labels)
    h, w = lab.shape[-2:]
    valid = lab != ignore_index
    marked = np.zeros(lab.shape, dtype=bool)
    if radius > 0:
        pad = [(0, 0)] * (lab.ndim - 2) + [(radius, radius)] * 2
        padded = np.pad(lab, pad, constant_values=ignore_index)
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if dy == 0 and dx == 0:
                    continue
                nb = padded[..., radius + dy:radius + dy + h, radius + dx:radius + dx + w]
                marked |= (nb != ignore_index) & (nb != lab)
        marked &= valid
    out = marked.astype(np.float64)
    if target_shape is not None:
        th, tw = (int(v) for v in target_shape)
        if th <= 0 or tw <= 0 or h % th or w % tw or h // th != w // tw:
            raise ConfigurationError(f"label shape {(h, w)} is not an integer multiple of target {(th, tw)}")
        out = F.max_pool(out, h // th)
    return out


def _as_batch(logits: Tensor, labels) -> Tuple[Tensor, np.ndarray]:
    logits = T.as_tensor(logits)
    lab = np.asarray(labels)
    if logits.ndim == 3:
        logits = logits.reshape((1,) + logits.shape)
        lab = lab[None]
    if logits.ndim != 4 or lab.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ContractViolation(f"logits {logits.shape} and labels {np.shape(labels)} do not match")
    return logits, lab


def one_hot(labels: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """[N, H, W] int -> [N, C, H, W] float; ignore pixels are all-zero."""
    valid = labels != ignore_index
    if np.any(labels[valid] >= num_classes) or np.any(labels[valid] < 0):
        raise ContractViolation(f"label values must lie in [0, {num_classes}) or be {ignore_index}")
    classes = np.arange(num_classes).reshape(1, -1, 1, 1)
    return ((labels[:, None] == classes) & valid[:, None]).astype(np.float64)


def ce_loss(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean of -log p[label] over non-ignore pixels (0 when every pixel is ignored)."""
    logits, lab = _as_batch(logits, labels)
    n = logits.shape[0]
    y = one_hot(lab, logits.shape[1], ignore_index)
    counts = (lab != ignore_index).reshape(n, -1).sum(axis=1)
    per_pixel_weight = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0) / n
    nll = (F.log_softmax(logits) * Tensor(y * per_pixel_weight.reshape(n, 1, 1, 1))).sum()
    return -nll


def dice_loss(logits: Tensor, labels, eps: float = 1.0, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Soft multi-class Dice: 1 - mean_c (2 sum p*y + eps) / (sum p + sum y + eps)."""
    if eps <= 0:
        raise ConfigurationError(f"dice eps must be > 0, got {eps}")
    logits, lab = _as_batch(logits, labels)
    n, c = logits.shape[:2]
    y = one_hot(lab, c, ignore_index)
    valid = (lab != ignore_index)[:, None].astype(np.float64)
    p = F.softmax(logits)
    inter = (p * Tensor(y)).sum(axis=(2, 3))
    psum = (p * Tensor(valid)).sum(axis=(2, 3))
    ysum = Tensor(y.sum(axis=(2, 3)))
    coeff = (T.scale(inter, 2.0) + eps) / (psum + ysum + eps)
    return 1.0 - coeff.mean()


def selector_bce(scores: Tensor, boundary) -> Tensor:
    """Mean binary cross-entropy between the importance map and the boundary target."""
    scores = T.as_tensor(scores)
    b = np.asarray(boundary.data if isinstance(boundary, Tensor) else boundary, dtype=np.float64)
    if b.size != scores.size:
        raise ContractViolation(f"boundary map {b.shape} does not match importance map {scores.shape}")
    b = b.reshape(scores.shape)
    s = T.clip(scores, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = T.log(s) * Tensor(b) + T.log(1.0 - s) * Tensor(1.0 - b)
    return -ll.mean()


@dataclass
class LossTerms:
    total: Tensor
    ce: Tensor
    dice: Tensor
    sel: Tensor

    def values(self) -> Tuple[float, float, float, float]:
        return self.total.item(), self.ce.item(), self.dice.item(), self.sel.item()


def loss_terms(logits, labels, scores, boundary, weights: LossWeights = LossWeights(), dice_eps: float = 1.0,
               ignore_index: int = IGNORE_INDEX) -> LossTerms:
    """All three losses plus their weighted total.

    Zero-weighted terms are left out of the total's graph entirely, so
    parameters that only feed them receive no gradient at all.
    """
    ce = ce_loss(logits, labels, ignore_index)
    dice = dice_loss(logits, labels, dice_eps, ignore_index)
    sel = selector_bce(scores, boundary)
    total = ce
    if weights.lambda1 != 0:
        total = total + T.scale(dice, weights.lambda1)
    if weights.lambda2 != 0:
        total = total + T.scale(sel, weights.lambda2)
    return LossTerms(total, ce, dice, sel)


def total_loss(logits, labels, scores, boundary, weights: LossWeights = LossWeights(), dice_eps: float = 1.0) -> Tensor:
    return loss_terms(logits, labels, scores, boundary, weights, dice_eps).total
