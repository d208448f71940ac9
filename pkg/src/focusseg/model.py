"""Encoder -> region-focus block -> decoder, plus parameter/FLOP accounting
and checkpoint I/O."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import functional as F
from . import region
from . import tensor as T
from .container import read_tensor, write_tensor
from .errors import ConfigurationError, ContractViolation
from .losses import LossWeights
from .region import BranchConfig
from .tensor import Tensor

OUTPUT_STRIDE = 8
LOWLEVEL_STRIDE = 4


@dataclass
class ModelConfig:
    num_classes: int = 5
    input_size: Tuple[int, int] = (64, 64)
    # stem (stride 2) -> block1 (stride 4, low-level tap) -> block2 (stride 8)
    encoder_channels: Tuple[int, int, int] = (16, 32, 64)
    head_channels: int = 64
    branches: Tuple[BranchConfig, ...] = region.DEFAULT_BRANCHES
    decoder_lowlevel_channels: int = 16
    decoder_channels: int = 32
    loss: LossWeights = field(default_factory=LossWeights)
    boundary_radius: int = 1
    dice_eps: float = 1.0
    use_ste: bool = False
    residual_uses_ctx: bool = False

    def validate(self) -> "ModelConfig":
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if len(self.encoder_channels) != 3 or min(self.encoder_channels) < 1:
            raise ConfigurationError("encoder_channels must list three positive widths (stride 2, 4, 8)")
        if self.encoder_channels[-1] != self.head_channels:
            raise ConfigurationError(
                f"last encoder width {self.encoder_channels[-1]} must equal head_channels {self.head_channels}")
        if self.decoder_lowlevel_channels < 1 or self.decoder_channels < 1:
            raise ConfigurationError("decoder widths must be positive")
        h, w = self.input_size
        if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
            raise ConfigurationError(f"input_size {self.input_size} must be divisible by {OUTPUT_STRIDE}")
        if not self.branches:
            raise ConfigurationError("at least one branch is required")
        if self.boundary_radius < 0 or self.dice_eps <= 0:
            raise ConfigurationError("boundary_radius must be >= 0 and dice_eps > 0")
        return self

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "input_size": list(self.input_size),
            "encoder_channels": list(self.encoder_channels),
            "head_channels": self.head_channels,
            "branches": [b.to_dict() for b in self.branches],
            "decoder_lowlevel_channels": self.decoder_lowlevel_channels,
            "decoder_channels": self.decoder_channels,
            "loss": {"lambda1": self.loss.lambda1, "lambda2": self.loss.lambda2},
            "boundary_radius": self.boundary_radius,
            "dice_eps": self.dice_eps,
            "use_ste": self.use_ste,
            "residual_uses_ctx": self.residual_uses_ctx,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        base = cls().to_dict()
        base.update(d)
        return cls(
            num_classes=int(base["num_classes"]),
            input_size=tuple(int(v) for v in base["input_size"]),
            encoder_channels=tuple(int(v) for v in base["encoder_channels"]),
            head_channels=int(base["head_channels"]),
            branches=tuple(BranchConfig.from_dict(b) for b in base["branches"]),
            decoder_lowlevel_channels=int(base["decoder_lowlevel_channels"]),
            decoder_channels=int(base["decoder_channels"]),
            loss=LossWeights(float(base["loss"]["lambda1"]), float(base["loss"]["lambda2"])),
            boundary_radius=int(base["boundary_radius"]),
            dice_eps=float(base["dice_eps"]),
            use_ste=bool(base["use_ste"]),
            residual_uses_ctx=bool(base["residual_uses_ctx"]),
        ).validate()


def param_shapes(cfg: ModelConfig) -> Dict[str, tuple]:
    """Every parameter name and shape, in registry (= initialization) order."""
    c0, c1, c2 = cfg.encoder_channels
    shapes: Dict[str, tuple] = {}

    def conv(name, cin, cout, k):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    conv("encoder.stem", 3, c0, 3)
    conv("encoder.block1.conv1", c0, c1, 3)
    conv("encoder.block1.conv2", c1, c1, 3)
    conv("encoder.block2.conv1", c1, c2, 3)
    conv("encoder.block2.conv2", c2, c2, 3)
    for group, entries in region.param_shapes(cfg.head_channels, cfg.branches).items():
        for name, shape in entries.items():
            shapes[f"region.{group}.{name}"] = shape
    dl, dc = cfg.decoder_lowlevel_channels, cfg.decoder_channels
    conv("decoder.low", c1, dl, 1)
    conv("decoder.fuse1", cfg.head_channels + dl, dc, 3)
    conv("decoder.fuse2", dc, dc, 3)
    conv("decoder.classifier", dc, cfg.num_classes, 1)
    return shapes


class Model:
    """Config plus a flat, ordered name -> Tensor parameter registry."""

    def __init__(self, cfg: ModelConfig, params: Dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def group(self, prefix: str) -> Dict[str, Tensor]:
        prefix = prefix.rstrip(".") + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def region_params(self) -> Dict[str, Dict[str, Tensor]]:
        groups: Dict[str, Dict[str, Tensor]] = {}
        for k, v in self.group("region").items():
            g, rest = k.split(".", 1)
            groups.setdefault(g, {})[rest] = v
        return groups

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ContractViolation("state keys do not match the parameter registry")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ContractViolation(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def parameter_groups(self) -> List[str]:
        """Registry names with the trailing .weight/.bias stripped, order kept."""
        seen: Dict[str, None] = {}
        for k in self.params:
            seen.setdefault(k.rsplit(".", 1)[0], None)
        return list(seen)


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """He-normal weights (std sqrt(2 / fan_in)) drawn in registry order; zero biases."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return Model(cfg, params)


def _conv(model: Model, name: str, x: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    return F.conv2d(x, model[f"{name}.weight"], model[f"{name}.bias"], stride=stride, dilation=dilation)


def encode(model: Model, image) -> Tuple[Tensor, Tensor]:
    """Returns (F_low at stride 4, F at stride 8)."""
    x = T.relu(_conv(model, "encoder.stem", T.as_tensor(image), stride=2))
    x = T.relu(_conv(model, "encoder.block1.conv1", x, stride=2))
    low = T.relu(_conv(model, "encoder.block1.conv2", x))
    x = T.relu(_conv(model, "encoder.block2.conv1", low, stride=2))
    high = T.relu(_conv(model, "encoder.block2.conv2", x))
    return low, high


def decode(model: Model, agg: Tensor, low: Tensor) -> Tensor:
    up = F.bilinear_upsample(agg, OUTPUT_STRIDE // LOWLEVEL_STRIDE)
    low = T.relu(_conv(model, "decoder.low", low))
    x = T.concat([up, low], axis=-3)
    x = T.relu(_conv(model, "decoder.fuse1", x))
    x = T.relu(_conv(model, "decoder.fuse2", x))
    return F.bilinear_upsample(_conv(model, "decoder.classifier", x), LOWLEVEL_STRIDE)


def forward(model: Model, image) -> Tuple[Tensor, Tensor]:
    """Image [3,H,W] (or [N,3,H,W]) -> (logits at input resolution, importance map at H/8)."""
    image = T.as_tensor(image)
    if image.ndim not in (3, 4) or image.shape[-3] != 3:
        raise ContractViolation(f"image must be [3,H,W] or [N,3,H,W], got {image.shape}")
    h, w = image.shape[-2:]
    if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
        raise ContractViolation(f"image size {(h, w)} must be divisible by {OUTPUT_STRIDE}")
    low, high = encode(model, image)
    agg, scores = region.region_focus(high, model.region_params(), model.cfg.branches,
                                      use_ste=model.cfg.use_ste, residual_uses_ctx=model.cfg.residual_uses_ctx)
    return decode(model, agg, low), scores


def predict(model: Model, image) -> np.ndarray:
    """Argmax label map(s) without recording a graph."""
    with T.no_grad():
        logits, _ = forward(model, image)
    return logits.data.argmax(axis=-3)


# -- accounting ----------------------------------------------------------------

def count_params(model: Union[Model, Dict[str, Tensor]]) -> int:
    params = model.params if isinstance(model, Model) else model
    return int(sum(p.size for p in params.values()))


@dataclass
class LayerFlops:
    name: str
    kernel: int
    c_in: int
    c_out: int
    out_hw: Tuple[int, int]
    dense: int
    sparse: int
    selected: Optional[int] = None

    @property
    def ratio(self) -> float:
        return self.sparse / self.dense


@dataclass
class FlopReport:
    layers: List[LayerFlops]

    @property
    def dense_total(self) -> int:
        return sum(layer.dense for layer in self.layers)

    @property
    def sparse_total(self) -> int:
        return sum(layer.sparse for layer in self.layers)

    def format(self) -> str:
        rows = [f"{'layer':<28} {'k':>2} {'c_in':>5} {'c_out':>5} {'out':>9} {'dense':>14} {'mask-aware':>14}"]
        for l in self.layers:
            rows.append(f"{l.name:<28} {l.kernel:>2} {l.c_in:>5} {l.c_out:>5} {l.out_hw[0]:>4}x{l.out_hw[1]:<4} "
                        f"{l.dense:>14,d} {l.sparse:>14,d}")
        rows.append(f"{'total':<58} {self.dense_total:>14,d} {self.sparse_total:>14,d}")
        return "\n".join(rows)


def conv_flops(kernel: int, c_in: int, c_out: int, h_out: int, w_out: int) -> int:
    """One multiply-add counts as two FLOPs."""
    return 2 * kernel * kernel * c_in * c_out * h_out * w_out


def count_flops(model: Union[Model, ModelConfig], input_shape: Sequence[int]) -> FlopReport:
    """Per-conv FLOPs at ``input_shape`` (H, W). Masked branches also report the
    cost of evaluating only their k selected output positions."""
    cfg = model.cfg if isinstance(model, Model) else model
    h, w = (int(v) for v in input_shape[-2:])
    if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
        raise ContractViolation(f"input size {(h, w)} must be divisible by {OUTPUT_STRIDE}")
    shapes = param_shapes(cfg)
    hw = {
        "encoder.stem": (h // 2, w // 2),
        "encoder.block1": (h // 4, w // 4),
        "encoder.block2": (h // 8, w // 8),
        "region": (h // 8, w // 8),
        "decoder": (h // 4, w // 4),
    }
    branch_k = {f"region.branch{i}": region.topk_count(b.topk_ratio, (h // 8) * (w // 8))
                for i, b in enumerate(cfg.branches)}
    layers = []
    for name, shape in shapes.items():
        if not name.endswith(".weight"):
            continue
        layer = name[: -len(".weight")]
        c_out, c_in, k, _ = shape
        key = next(p for p in hw if layer.startswith(p))
        oh, ow = hw[key]
        if layer == "region.psi":
            oh, ow = 1, 1
        dense = conv_flops(k, c_in, c_out, oh, ow)
        if layer in branch_k:
            sel = branch_k[layer]
            layers.append(LayerFlops(layer, k, c_in, c_out, (oh, ow), dense, conv_flops(k, c_in, c_out, sel, 1), sel))
        else:
            layers.append(LayerFlops(layer, k, c_in, c_out, (oh, ow), dense, dense))
    return FlopReport(layers)


# -- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"FRCK"
CKPT_VERSION = 1


def checkpoint_bytes(model: Model, meta: Optional[dict] = None) -> bytes:
    """Magic, version, JSON document (model config + meta), then name-prefixed FRNT entries."""
    buf = io.BytesIO()
    doc = json.dumps({"model": model.cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<HI", CKPT_VERSION, len(doc)))
    buf.write(doc)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_tensor(buf, p.data)
    return buf.getvalue()


def save_checkpoint(path: Union[str, Path], model: Model, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, meta))


def load_checkpoint(path: Union[str, Path]) -> Tuple[Model, dict]:
    stream = io.BytesIO(Path(path).read_bytes())
    if stream.read(4) != CKPT_MAGIC:
        raise ContractViolation(f"{path} is not a checkpoint")
    version, doc_len = struct.unpack("<HI", stream.read(6))
    if version != CKPT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {version}")
    doc = json.loads(stream.read(doc_len).decode())
    cfg = ModelConfig.from_dict(doc["model"])
    (count,) = struct.unpack("<I", stream.read(4))
    params: Dict[str, Tensor] = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", stream.read(2))
        name = stream.read(n).decode()
        params[name] = Tensor(read_tensor(stream), requires_grad=True)
    expected = param_shapes(cfg)
    if list(params) != list(expected) or any(params[k].shape != s for k, s in expected.items()):
        raise ContractViolation("checkpoint registry does not match its config")
    return Model(cfg, params), doc.get("meta", {})
