"""Central finite-difference gradient checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class ParamCheck:
    name: str
    checked: int
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    params: List[ParamCheck] = field(default_factory=list)
    nonfinite: List[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.nonfinite and self.max_rel_error < self.tol

    def format(self) -> str:
        lines = [f"{'group':<32} {'coords':>7} {'max_rel_err':>12} {'analytic':>14} {'numeric':>14}  worst"]
        for p in self.params:
            lines.append(f"{p.name:<32} {p.checked:>7d} {p.max_rel_error:>12.3e} "
                         f"{p.analytic:>14.6e} {p.numeric:>14.6e}  {p.worst_index}")
        for msg in self.nonfinite:
            lines.append(f"non-finite: {msg}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'}: max relative error {self.max_rel_error:.3e} (tol {self.tol:g})")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
    turning round-off into huge ratios."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Union[Sequence[Tensor], Mapping[str, Tensor]],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() gradients of the scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call. With ``max_coords`` set, each parameter is probed at a seeded random
    subset of at most that many coordinates.
    """
    if isinstance(params, Mapping):
        named: Dict[str, Tensor] = dict(params)
    else:
        named = {f"param{i}": p for i, p in enumerate(params)}
    report = GradCheckReport(tol=tol, eps=eps)

    for p in named.values():
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        report.nonfinite.append("loss at the unperturbed point")
        return report
    backward(loss)

    rng = np.random.default_rng(seed)
    for name, p in named.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        worst = ParamCheck(name, len(coords), 0.0, (), 0.0, 0.0)
        for idx in coords:
            orig = p.data[idx]
            with no_grad():
                p.data[idx] = orig + eps
                fp = f().item()
                p.data[idx] = orig - eps
                fm = f().item()
            p.data[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                report.nonfinite.append(f"{name}{idx}")
                continue
            numeric = (fp - fm) / (2 * eps)
            err = relative_error(float(analytic[idx]), numeric, floor)
            if err >= worst.max_rel_error:
                worst = ParamCheck(name, len(coords), err, tuple(int(i) for i in idx), float(analytic[idx]), numeric)
        report.params.append(worst)
    return report
