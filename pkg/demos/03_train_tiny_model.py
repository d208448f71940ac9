"""
Training a small model end to end
=================================

Generate synthetic scenes, train the narrow 16x16 model for 40 epochs,
evaluate, and round-trip a checkpoint. Takes under a minute.
"""

import tempfile
from pathlib import Path

import numpy as np

from focusseg.config import tiny_config, with_overrides
from focusseg.data import gen_synthetic
from focusseg.model import build_model, count_flops, count_params, forward, load_checkpoint
from focusseg.tensor import no_grad
from focusseg.train import evaluate, train

# the narrow model is built for gradient checks; a larger step and batch
# let it learn something within a few seconds
cfg = with_overrides(tiny_config(), train={"base_lr": 1e-2, "batch_size": 4})
train_set = gen_synthetic(0, 64, (16, 16), 3)
val_set = gen_synthetic(1, 16, (16, 16), 3)

model = build_model(cfg.model, seed=0)
print(f"{count_params(model)} parameters")
print(count_flops(model, (16, 16)).format())
print("before training:", evaluate(model, val_set).metrics.to_json())

out = Path(tempfile.mkdtemp())
result = train(cfg, train_set, epochs=40, seed=0, out_dir=out)
sel = result.epoch_means("sel")
print(f"selector loss per epoch: first {sel[0]:.4f}, last {sel[-1]:.4f}")
print(evaluate(result.model, val_set).table())

# the checkpoint reproduces logits bit for bit
loaded, meta = load_checkpoint(out / "checkpoint.frck")
with no_grad():
    a, _ = forward(result.model, val_set[0].image)
    b, _ = forward(loaded, val_set[0].image)
print("checkpoint meta:", meta, "| identical logits:", np.array_equal(a.data, b.data))
print("log head:\n" + "\n".join((out / "train_log.tsv").read_text().splitlines()[:3]))
