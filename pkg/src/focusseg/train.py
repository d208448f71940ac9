"""Training and evaluation loops."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from . import losses
from .config import RunConfig
from .data import SyntheticScene, augment, stack_batch
from .errors import ContractViolation, TrainingDiverged
from .metrics import MetricAccumulator, Metrics
from .model import OUTPUT_STRIDE, Model, build_model, forward, predict, save_checkpoint
from .optim import OptimState, adamw_step, poly_lr
from .tensor import backward, no_grad

logger = logging.getLogger(__name__)

LOG_HEADER = "iter\tlr\tL_total\tL_CE\tL_Dice\tL_sel"


@dataclass
class LogRecord:
    iteration: int
    epoch: int
    lr: float
    total: float
    ce: float
    dice: float
    sel: float

    def tsv(self) -> str:
        return "\t".join([str(self.iteration)] + [repr(v) for v in (self.lr, self.total, self.ce, self.dice, self.sel)])


@dataclass
class TrainResult:
    model: Model
    log: List[LogRecord]
    checkpoints: List[Path] = field(default_factory=list)

    def log_tsv(self) -> str:
        return "\n".join([LOG_HEADER] + [r.tsv() for r in self.log]) + "\n"

    def epoch_means(self, key: str) -> List[float]:
        """Mean of one logged loss (total/ce/dice/sel) per epoch."""
        per: dict = {}
        for r in self.log:
            per.setdefault(r.epoch, []).append(getattr(r, key))
        return [float(np.mean(per[e])) for e in sorted(per)]


def _batch_targets(model: Model, labels: np.ndarray) -> np.ndarray:
    h, w = labels.shape[-2:]
    return losses.boundary_map(labels, model.cfg.boundary_radius, (h // OUTPUT_STRIDE, w // OUTPUT_STRIDE))


def train(cfg: RunConfig, dataset: Sequence[SyntheticScene], epochs: Optional[int] = None, seed: Optional[int] = None,
          out_dir: Optional[Union[str, Path]] = None, model: Optional[Model] = None,
          on_epoch_end: Optional[Callable[[int, Model], None]] = None) -> TrainResult:
    """Train with AdamW + poly schedule on the three-term loss.

    The same seed drives initialization, shuffling and augmentation, so a run
    is reproducible bit for bit. A checkpoint is written to ``out_dir`` at the
    end and every ``train.checkpoint_every`` epochs when that is positive.
    """
    if not dataset:
        raise ContractViolation("training needs a non-empty dataset")
    tc = cfg.train
    epochs = tc.epochs if epochs is None else epochs
    seed = tc.seed if seed is None else seed
    model = build_model(cfg.model, seed) if model is None else model
    rng = np.random.default_rng([seed, 0x5EED])
    state = OptimState()
    steps_per_epoch = math.ceil(len(dataset) / tc.batch_size)
    max_iter = max(1, epochs * steps_per_epoch)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model, [])
    weights = cfg.model.loss
    it = 0
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        for b in range(steps_per_epoch):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            scenes = [dataset[i] for i in idx]
            if tc.augment:
                pairs = [augment(s.image, s.labels, rng, tc.flip_p, tc.scale_range) for s in scenes]
                images, labels = np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])
            else:
                images, labels = stack_batch(scenes)
            lr = poly_lr(it, max_iter, tc.base_lr, tc.lr_power)
            model.zero_grad()
            logits, scores = forward(model, images)
            terms = losses.loss_terms(logits, labels, scores, _batch_targets(model, labels), weights,
                                      cfg.model.dice_eps)
            rec = LogRecord(it, epoch, lr, *terms.values())
            if not all(math.isfinite(v) for v in (rec.total, rec.ce, rec.dice, rec.sel)):
                msg = (f"non-finite loss at epoch {epoch}, batch {b} (iteration {it}), seed {seed}, "
                       f"scene indices {idx.tolist()}")
                if out is not None:
                    (out / "diverged.json").write_text(json.dumps(
                        {"epoch": epoch, "batch_index": b, "iteration": it, "seed": seed,
                         "indices": idx.tolist(), "losses": [rec.total, rec.ce, rec.dice, rec.sel]}))
                raise TrainingDiverged(msg, epoch=epoch, batch_index=b, seed=seed, indices=idx.tolist())
            backward(terms.total)
            adamw_step({k: p.data for k, p in model.params.items()},
                       {k: p.grad for k, p in model.params.items()}, state, lr,
                       tc.beta1, tc.beta2, tc.eps, tc.weight_decay)
            result.log.append(rec)
            it += 1
        logger.info("epoch %d: loss %.4f", epoch, np.mean([r.total for r in result.log if r.epoch == epoch]))
        if on_epoch_end is not None:
            on_epoch_end(epoch, model)
        if out is not None and tc.checkpoint_every > 0 and (epoch + 1) % tc.checkpoint_every == 0 and epoch + 1 < epochs:
            path = out / f"checkpoint_epoch{epoch + 1:03d}.frck"
            save_checkpoint(path, model, {"epoch": epoch + 1, "seed": seed})
            result.checkpoints.append(path)
    model.zero_grad()
    if out is not None:
        path = out / "checkpoint.frck"
        save_checkpoint(path, model, {"epoch": epochs, "seed": seed})
        result.checkpoints.append(path)
        (out / "train_log.tsv").write_text(result.log_tsv())
    return result


@dataclass
class EvalResult:
    metrics: Metrics
    predictions: Optional[List[np.ndarray]] = None

    def table(self) -> str:
        return self.metrics.table()

    def to_json(self) -> str:
        return self.metrics.to_json()


def evaluate(model: Model, dataset: Sequence[SyntheticScene], batch_size: int = 8,
             keep_predictions: bool = False) -> EvalResult:
    """Single-scale argmax evaluation accumulated over the whole dataset."""
    acc = MetricAccumulator(model.cfg.num_classes)
    preds = [] if keep_predictions else None
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            images, labels = stack_batch(dataset[start:start + batch_size])
            pred = predict(model, images)
            for p, g in zip(pred, labels):
                acc.update(p, g)
            if preds is not None:
                preds.extend(pred)
    return EvalResult(acc.result(), preds)
