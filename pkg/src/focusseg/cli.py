"""Command-line entry point: ``focusseg <command> [flags]``.

Exit codes: 0 success, 1 check failure, 2 usage or environment error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import losses
from .config import RunConfig, load_config, tiny_config, with_overrides
from .data import gen_synthetic, load_dataset, read_manifest, read_pgm, read_ppm, write_dataset, write_pgm, make_scene
from .errors import ConfigurationError, ContractViolation, TrainingDiverged
from .functional import receptive_span
from .gradcheck import grad_check
from .metrics import compute_miou
from .model import build_model, forward, load_checkpoint, predict
from .region import BranchConfig
from .sparse import bench_branches, bench_json, bench_tsv
from .train import evaluate, train


class UsageError(Exception):
    pass


def _size(text: str):
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}; use N or HxW")
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"bad size {text!r}; use N or HxW")
    return tuple(vals)


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _echo(title: str, payload: dict):
    print(f"# {title}")
    print(json.dumps(payload, indent=2, sort_keys=True))


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig().validate()
    train_over = {}
    if getattr(args, "epochs", None) is not None:
        train_over["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        train_over["seed"] = args.seed
    return with_overrides(cfg, train=train_over) if train_over else cfg


def _datasets(cfg: RunConfig, data_dir: Optional[str]):
    if data_dir:
        return load_dataset(data_dir)
    d = cfg.data
    return gen_synthetic(d.train_seed, d.train_count, d.size, d.num_classes)


def _val_dataset(cfg: RunConfig, data_dir: Optional[str]):
    if data_dir:
        return load_dataset(data_dir)
    d = cfg.data
    return gen_synthetic(d.val_seed, d.val_count, d.size, d.num_classes)


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    gen = {"seed": args.seed, "count": args.count, "size": list(args.size), "num_classes": args.classes}
    _echo("resolved config", {"gen-data": {**gen, "out_dir": args.out_dir}})
    if args.classes < 3:
        raise UsageError("--classes must be >= 3 (background, blob class, thin-structure class)")
    try:
        scenes = gen_synthetic(args.seed, args.count, args.size, args.classes)
        manifest = write_dataset(args.out_dir, scenes, gen)
    except OSError as exc:
        raise UsageError(f"cannot write to {args.out_dir}: {exc}")
    print(f"wrote {len(scenes)} pairs, manifest {manifest}")
    return 0


def run_gradcheck(cfg: RunConfig, tol: float, seed: int, eps: float = 1e-5, max_coords: Optional[int] = None):
    """Full forward + total loss gradient check on one synthetic scene.

    Biases are redrawn from U(-0.1, 0.1): with the zero-bias init, pixels whose
    inputs are all zero sit exactly on a ReLU kink, where no finite difference
    agrees with any one-sided derivative.
    """
    model = build_model(cfg.model, seed)
    rng = np.random.default_rng([seed, 1])
    for name, p in model.params.items():
        if name.endswith(".bias"):
            p.data = rng.uniform(-0.1, 0.1, size=p.shape)
    scene = make_scene(seed, 0, cfg.model.input_size, max(3, cfg.model.num_classes))
    labels = np.minimum(scene.labels, cfg.model.num_classes - 1)
    h, w = cfg.model.input_size
    target = losses.boundary_map(labels, cfg.model.boundary_radius, (h // 8, w // 8))

    def f():
        logits, scores = forward(model, scene.image)
        return losses.total_loss(logits, labels, scores, target, cfg.model.loss, cfg.model.dice_eps)

    return grad_check(f, model.params, eps=eps, tol=tol, max_coords=max_coords, seed=seed)


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else tiny_config()
    _echo("resolved config", {**cfg.to_dict(), "gradcheck": {"tol": args.tol, "seed": args.seed, "eps": args.eps}})
    report = run_gradcheck(cfg, args.tol, args.seed, args.eps, args.max_coords)
    print(report.format())
    print(json.dumps({"passed": report.passed, "max_rel_error": report.max_rel_error,
                      "groups": {p.name: p.max_rel_error for p in report.params}}, sort_keys=True))
    return 0 if report.passed else 1


def cmd_train(args) -> int:
    cfg = _run_config(args)
    _echo("resolved config", {**cfg.to_dict(), "out_dir": args.out_dir, "data": args.data or "synthetic"})
    dataset = _datasets(cfg, args.data)
    try:
        result = train(cfg, dataset, out_dir=args.out_dir)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    sel = result.epoch_means("sel")
    print(f"trained {cfg.train.epochs} epochs, {len(result.log)} iterations; "
          f"L_sel first/last epoch {sel[0]:.4f}/{sel[-1]:.4f}" if sel else "no iterations run")
    for p in result.checkpoints:
        print(f"checkpoint {p}")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    cfg = RunConfig(model=model.cfg)
    if args.config:
        cfg = load_config(args.config)
    _echo("resolved config", {"checkpoint": str(args.checkpoint), "meta": meta, "model": model.cfg.to_dict(),
                              "data": args.data or cfg.data.__dict__})
    res = evaluate(model, _val_dataset(cfg, args.data))
    print(res.table())
    print(res.to_json())
    return 0


def cmd_predict(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    _echo("resolved config", {"checkpoint": str(args.checkpoint), "inputs": args.inputs, "out_dir": args.out_dir})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for item in args.inputs:
        p = Path(item)
        if p.is_dir() or p.suffix == ".tsv":
            pairs.extend(read_manifest(p))
        else:
            pairs.append((p, None))
    for img_path, lab_path in pairs:
        pred = predict(model, read_ppm(img_path))
        dest = out / (Path(img_path).stem + "_pred.pgm")
        write_pgm(dest, pred)
        line = f"{img_path}\t{dest}"
        if lab_path is not None and Path(lab_path).exists():
            m = compute_miou(pred, read_pgm(lab_path), model.cfg.num_classes)
            line += f"\tmiou={m.miou:.4f}\tband_miou={m.band_miou:.4f}\tpixel_acc={m.pixel_accuracy:.4f}"
        print(line)
    return 0


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    branches = cfg.model.branches
    spatial = args.spatial or tuple(v // 8 for v in cfg.model.input_size)
    channels = args.channels or cfg.model.head_channels
    _echo("resolved config", {"branches": [b.to_dict() for b in branches], "channels": channels,
                              "spatial": list(spatial), "trials": args.trials, "seed": args.seed})
    rows = bench_branches(branches, channels, spatial, args.trials, args.seed or 0)
    print(bench_tsv(rows), end="")
    print(bench_json(rows))
    return 0


def ablate_dilation(cfg: RunConfig, rates: Sequence[int], epochs: Optional[int] = None, seed: Optional[int] = None,
                    branch: Optional[int] = None) -> List[dict]:
    """Train one model per dilation rate of the widest branch; everything else fixed."""
    branches = list(cfg.model.branches)
    if branch is None:
        branch = max(range(len(branches)), key=lambda i: (branches[i].kernel, i))
    target = branches[branch]
    train_set = _datasets(cfg, None)
    val_set = _val_dataset(cfg, None)
    rows = []
    for rate in rates:
        branches[branch] = BranchConfig(target.kernel, rate, target.topk_ratio)
        run = with_overrides(cfg, model={"branches": [b.to_dict() for b in branches]})
        result = train(run, train_set, epochs=epochs, seed=seed)
        m = evaluate(result.model, val_set).metrics
        rows.append({"dilation": rate, "kernel": target.kernel, "span": receptive_span(target.kernel, rate),
                     "miou": m.miou, "band_miou": m.band_miou})
    return rows


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    _echo("resolved config", {**cfg.to_dict(), "rates": args.rates})
    if not args.rates:
        raise UsageError("--rates needs at least one value")
    rows = ablate_dilation(cfg, args.rates)
    print(f"{'dilation':>8} {'span':>5} {'mIoU (%)':>9} {'band (%)':>9}")
    for r in rows:
        print(f"{r['dilation']:>8d} {r['span']:>5d} {100 * r['miou']:>9.2f} {100 * r['band_miou']:>9.2f}")
    print(json.dumps(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="focusseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic PPM/PGM dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=_size, default=(64, 64))
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--config")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train on synthetic scenes or a manifest")
    p.add_argument("--config")
    p.add_argument("--data", help="dataset directory or manifest (default: generate from config)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted label maps as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("inputs", nargs="+", help="PPM images, dataset directories or manifests")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="dense vs sparse masked-branch benchmark")
    p.add_argument("--config")
    p.add_argument("--channels", type=int)
    p.add_argument("--spatial", type=_size)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate-dilation", help="train once per dilation rate of the 7x7 branch")
    p.add_argument("--config")
    p.add_argument("--rates", type=_int_list, default=[1, 2, 4, 8, 16])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
