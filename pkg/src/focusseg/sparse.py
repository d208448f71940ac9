"""Masked-branch convolution evaluated only at selected output positions.

A branch computes conv(F_ctx * M) and only its selected outputs matter
downstream, so the sparse path gathers the receptive field of each selected
position from the masked input (taps landing on unselected sources read
zero), runs one (k, C*T) x (C*T, C_out) product and scatters the result.
It reproduces ``conv2d(apply_mask(x, M)) * M`` exactly and is forward-only.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigurationError, ContractViolation, UnsupportedConfiguration
from .model import conv_flops
from .region import BranchConfig, SelectionMask, apply_mask, topk_mask
from .tensor import Tensor, as_tensor, no_grad


@dataclass(frozen=True)
class SelectionIndex:
    coords: np.ndarray          # (k, 2) int rows/cols, strictly increasing row-major
    shape: Tuple[int, int]

    @property
    def k(self) -> int:
        return int(self.coords.shape[0])

    def to_mask(self) -> np.ndarray:
        m = np.zeros(self.shape)
        m[self.coords[:, 0], self.coords[:, 1]] = 1.0
        return m

    def flat(self) -> np.ndarray:
        return self.coords[:, 0] * self.shape[1] + self.coords[:, 1]


def index_from_mask(mask) -> SelectionIndex:
    """Row-major coordinates of the ones in a [H, W] or [1, H, W] binary mask."""
    m = mask.mask if isinstance(mask, SelectionMask) else (mask.data if isinstance(mask, Tensor) else np.asarray(mask))
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    if m.ndim != 2:
        raise ContractViolation(f"mask must be [H,W] or [1,H,W], got {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ContractViolation("mask values must be 0 or 1")
    rows, cols = np.nonzero(m)
    return SelectionIndex(np.stack([rows, cols], axis=1).astype(np.intp), tuple(m.shape))


@dataclass
class SparseExecReport:
    dense_flops: int
    sparse_flops: int
    gathered_positions: int
    wall_time_dense: Optional[float] = None
    wall_time_sparse: Optional[float] = None

    @property
    def flop_ratio(self) -> float:
        return self.sparse_flops / self.dense_flops


def masked_conv2d(x, weight, bias, idx: SelectionIndex, dilation: int = 1,
                  stride: int = 1) -> Tuple[Tensor, SparseExecReport]:
    """Same-padded stride-1 conv of the masked input, computed at selected outputs only.

    Output is zero at every unselected position.
    """
    if stride != 1:
        raise UnsupportedConfiguration("masked_conv2d only supports stride 1")
    start = time.perf_counter()
    x, weight = as_tensor(x).data, as_tensor(weight).data
    b = None if bias is None else as_tensor(bias).data
    if x.ndim != 3:
        raise ContractViolation(f"input must be [C,H,W], got {x.shape}")
    c_in, h, w = x.shape
    c_out, wc, k, _ = weight.shape
    if wc != c_in:
        raise ContractViolation(f"input has {c_in} channels, weight expects {wc}")
    if idx.shape != (h, w):
        raise ContractViolation(f"selection index covers {idx.shape}, input is {(h, w)}")

    plan = F.tap_plan(h, w, k, dilation, 1)
    p = plan.pad
    xpad = np.pad(x * idx.to_mask(), ((0, 0), (p, p), (p, p)))
    offsets = plan.offsets + p                                  # (T, 2) in padded coordinates
    rows = idx.coords[:, 0:1] + offsets[:, 0]                   # (k, T)
    cols = idx.coords[:, 1:2] + offsets[:, 1]
    patches = xpad[:, rows, cols].transpose(1, 0, 2).reshape(idx.k, -1)     # (k, C*T)
    t_idx = np.array([ki * k + kj for ki, kj in plan.taps], dtype=np.intp)
    w2 = weight.reshape(c_out, c_in, k * k)[:, :, t_idx].reshape(c_out, -1)
    vals = patches @ w2.T
    if b is not None:
        vals += b
    out = np.zeros((c_out, h, w))
    out[:, idx.coords[:, 0], idx.coords[:, 1]] = vals.T
    elapsed = time.perf_counter() - start
    report = SparseExecReport(
        dense_flops=conv_flops(k, c_in, c_out, h, w),
        sparse_flops=conv_flops(k, c_in, c_out, idx.k, 1),
        gathered_positions=idx.k,
        wall_time_sparse=elapsed,
    )
    return Tensor(out), report


def dense_masked_branch(x, weight, bias, mask, dilation: int = 1) -> Tensor:
    """The dense reference: conv(apply_mask(x, M)) * M."""
    m = mask.mask if isinstance(mask, SelectionMask) else np.asarray(mask, dtype=np.float64)
    m = m.reshape((1,) + m.shape[-2:])
    with no_grad():
        out = F.conv2d(apply_mask(as_tensor(x), m), weight, bias, dilation=dilation)
    return Tensor(out.data * m)


@dataclass
class BranchBench:
    branch: int
    kernel: int
    dilation: int
    ratio: float
    selected: int
    dense_flops: int
    sparse_flops: int
    wall_time_dense: float
    wall_time_sparse: float

    @property
    def flop_ratio(self) -> float:
        return self.sparse_flops / self.dense_flops


BENCH_COLUMNS = ("branch", "kernel", "dilation", "ratio", "selected", "dense_flops", "sparse_flops",
                 "flop_ratio", "wall_time_dense", "wall_time_sparse")


def bench_branches(branches: Sequence[BranchConfig], channels: int, spatial: Sequence[int], trials: int = 5,
                   seed: int = 0) -> List[BranchBench]:
    """Dense masked path vs sparse path for each branch; median wall time over ``trials``."""
    if trials < 3:
        raise ConfigurationError("bench needs at least 3 trials")
    h, w = (int(v) for v in spatial)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(channels, h, w))
    scores = rng.uniform(size=(1, h, w))
    rows = []
    for i, cfg in enumerate(branches):
        weight = rng.normal(size=(channels, channels, cfg.kernel, cfg.kernel))
        bias = rng.normal(size=channels)
        sel = topk_mask(scores, cfg.topk_ratio)
        idx = index_from_mask(sel)
        dense_t, sparse_t = [], []
        report = None
        for _ in range(trials):
            t0 = time.perf_counter()
            dense_masked_branch(x, weight, bias, sel, cfg.dilation)
            dense_t.append(time.perf_counter() - t0)
            _, report = masked_conv2d(x, weight, bias, idx, cfg.dilation)
            sparse_t.append(report.wall_time_sparse)
        rows.append(BranchBench(i, cfg.kernel, cfg.dilation, cfg.topk_ratio, idx.k, report.dense_flops,
                                report.sparse_flops, statistics.median(dense_t), statistics.median(sparse_t)))
    return rows


def bench_tsv(rows: Sequence[BranchBench]) -> str:
    lines = ["\t".join(BENCH_COLUMNS)]
    for r in rows:
        d = {**asdict(r), "flop_ratio": r.flop_ratio}
        lines.append("\t".join(str(d[c]) for c in BENCH_COLUMNS))
    return "\n".join(lines) + "\n"


def bench_json(rows: Sequence[BranchBench]) -> str:
    return json.dumps([{**asdict(r), "flop_ratio": r.flop_ratio} for r in rows], indent=2)
