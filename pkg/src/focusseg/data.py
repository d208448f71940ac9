"""Synthetic scenes with thin structures, augmentation, and PPM/PGM I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .losses import IGNORE_INDEX

NOISE_STD = 0.05

BACKGROUND_COLOR = (0.45, 0.45, 0.45)
THIN_COLOR = (0.95, 0.90, 0.15)
_BLOB_COLORS = np.array([
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.30, 0.90],
    [0.85, 0.25, 0.85],
    [0.15, 0.85, 0.85],
    [0.95, 0.55, 0.10],
])


@dataclass
class SyntheticScene:
    image: np.ndarray    # [3, H, W] float64 in [0, 1]
    labels: np.ndarray   # [H, W] int64, IGNORE_INDEX for void

    @property
    def size(self) -> Tuple[int, int]:
        return self.labels.shape


def palette(num_classes: int) -> np.ndarray:
    """Row c is the base colour of class c: background, blob classes, thin class last."""
    n_blob = num_classes - 2
    blobs = _BLOB_COLORS[:n_blob]
    if n_blob > len(_BLOB_COLORS):
        extra = np.random.default_rng(12345).uniform(0.1, 0.9, size=(n_blob - len(_BLOB_COLORS), 3))
        blobs = np.vstack([blobs, extra])
    return np.vstack([BACKGROUND_COLOR, blobs, THIN_COLOR])


def _draw_blob(labels, rng, cls):
    h, w = labels.shape
    bh, bw = rng.integers(h // 8, h // 3 + 1), rng.integers(w // 8, w // 3 + 1)
    top, left = rng.integers(0, h - bh + 1), rng.integers(0, w - bw + 1)
    yy, xx = np.mgrid[0:h, 0:w]
    if rng.random() < 0.5:
        region = (yy >= top) & (yy < top + bh) & (xx >= left) & (xx < left + bw)
    else:
        cy, cx = top + (bh - 1) / 2, left + (bw - 1) / 2
        region = ((yy - cy) / (bh / 2)) ** 2 + ((xx - cx) / (bw / 2)) ** 2 <= 1.0
    labels[region] = cls


def _draw_bar(labels, rng, cls):
    h, w = labels.shape
    width = int(rng.integers(1, 3))
    kind = rng.integers(0, 3)
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:    # vertical pole
        length = rng.integers(h // 4, h + 1)
        x0, y0 = rng.integers(0, w - width + 1), rng.integers(0, h - length + 1)
        region = (xx >= x0) & (xx < x0 + width) & (yy >= y0) & (yy < y0 + length)
    elif kind == 1:  # horizontal
        length = rng.integers(w // 4, w + 1)
        y0, x0 = rng.integers(0, h - width + 1), rng.integers(0, w - length + 1)
        region = (yy >= y0) & (yy < y0 + width) & (xx >= x0) & (xx < x0 + length)
    else:            # diagonal, either slope
        length = rng.integers(min(h, w) // 4, min(h, w) // 2 + 1)
        y0, x0 = rng.integers(0, h - length + 1), rng.integers(0, w - length + 1)
        if rng.random() < 0.5:
            d = (yy - y0) - (xx - x0)
        else:
            d = (yy - y0) + (xx - x0 - length + 1)
        box = (yy >= y0) & (yy < y0 + length) & (xx >= x0) & (xx < x0 + length)
        region = box & (d >= 0) & (d < width)
    labels[region] = cls


def make_scene(seed: int, index: int, size: Sequence[int] = (64, 64), num_classes: int = 5) -> SyntheticScene:
    """One deterministic scene for (seed, index).

    Class 0 is a textured background, classes 1..C-2 are blobs and class C-1
    is reserved for 1-2 px wide bars.
    """
    h, w = (int(v) for v in size)
    if num_classes < 3:
        raise ConfigurationError("the generator needs at least 3 classes (background, blob, thin bar)")
    if h < 16 or w < 16:
        raise ConfigurationError(f"scene size must be at least 16x16, got {(h, w)}")
    rng = np.random.default_rng([int(seed), int(index)])
    labels = np.zeros((h, w), dtype=np.int64)
    thin = num_classes - 1
    for _ in range(int(rng.integers(1, 4))):
        _draw_blob(labels, rng, int(rng.integers(1, thin)))
    for _ in range(int(rng.integers(1, 4))):
        _draw_bar(labels, rng, thin)

    colors = palette(num_classes)
    image = colors[labels].transpose(2, 0, 1).copy()
    yy, xx = np.mgrid[0:h, 0:w]
    freq = rng.uniform(1.0, 4.0, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    texture = 0.06 * np.sin(2 * np.pi * (freq[0] * yy / h + freq[1] * xx / w) + phase)
    image += np.where(labels == 0, texture, 0.0)[None]
    image += rng.normal(0.0, NOISE_STD, size=image.shape)
    return SyntheticScene(np.clip(image, 0.0, 1.0), labels)


def gen_synthetic(seed: int, count: int, size: Sequence[int] = (64, 64), num_classes: int = 5) -> List[SyntheticScene]:
    if count < 0:
        raise ConfigurationError("count must be >= 0")
    return [make_scene(seed, i, size, num_classes) for i in range(count)]


def stack_batch(scenes: Sequence[SyntheticScene]) -> Tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in scenes]), np.stack([s.labels for s in scenes])


# -- augmentation --------------------------------------------------------------

def _bilinear_resize(image: np.ndarray, oh: int, ow: int) -> np.ndarray:
    _, h, w = image.shape
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    top = image[:, y0][:, :, x0] * (1 - fx) + image[:, y0][:, :, x1] * fx
    bot = image[:, y1][:, :, x0] * (1 - fx) + image[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def _nearest_resize(labels: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = labels.shape
    ys = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
    xs = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
    return labels[ys][:, xs]


def _fit(arr: np.ndarray, target: int, axis: int, offset: int, fill) -> np.ndarray:
    n = arr.shape[axis]
    if n >= target:
        return np.take(arr, np.arange(offset, offset + target), axis=axis)
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (offset, target - n - offset)
    return np.pad(arr, pad, constant_values=fill)


def augment(image: np.ndarray, labels: np.ndarray, rng: np.random.Generator, flip_p: float = 0.5,
            scale_range: Tuple[float, float] = (0.75, 1.25)) -> Tuple[np.ndarray, np.ndarray]:
    """Horizontal flip, random rescale (nearest-neighbour labels), then crop/pad
    back to the input size. Padded label pixels are IGNORE_INDEX."""
    _, h, w = image.shape
    if rng.random() < flip_p:
        image, labels = image[:, :, ::-1], labels[:, ::-1]
    s = rng.uniform(*scale_range)
    oh, ow = max(1, int(round(h * s))), max(1, int(round(w * s)))
    image, labels = _bilinear_resize(image, oh, ow), _nearest_resize(labels, oh, ow)
    for axis, target in ((0, h), (1, w)):
        n = labels.shape[axis]
        offset = int(rng.integers(0, abs(n - target) + 1))
        image = _fit(image, target, axis + 1, offset, 0.0)
        labels = _fit(labels, target, axis, offset, IGNORE_INDEX)
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


# -- PPM / PGM -----------------------------------------------------------------

def write_ppm(path: Union[str, Path], image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractViolation(f"PPM image must be [3,H,W], got {img.shape}")
    pixels = np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8).transpose(1, 2, 0)
    h, w = pixels.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes())


def write_pgm(path: Union[str, Path], labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    if lab.ndim != 2 or lab.min(initial=0) < 0 or lab.max(initial=0) > 255:
        raise ContractViolation("PGM label map must be 2-D with values in [0, 255]")
    h, w = lab.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + lab.astype(np.uint8).tobytes())


def _read_pnm(path: Union[str, Path], magic: bytes) -> Tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != magic:
        raise ContractViolation(f"{path}: expected {magic.decode()} header")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ContractViolation(f"{path}: only 8-bit files are supported")
    return np.frombuffer(raw[pos + 1:], dtype=np.uint8), h, w


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    data, h, w = _read_pnm(path, b"P6")
    return data[: h * w * 3].reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    data, h, w = _read_pnm(path, b"P5")
    return data[: h * w].reshape(h, w).astype(np.int64)


# -- datasets on disk ----------------------------------------------------------

def write_dataset(out_dir: Union[str, Path], scenes: Sequence[SyntheticScene], generator: dict) -> Path:
    """PPM/PGM pairs plus ``manifest.tsv`` (one ``image<TAB>label`` pair per line,
    generator config on a leading ``#`` line)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# generator " + json.dumps(generator, sort_keys=True)]
    for i, scene in enumerate(scenes):
        img, lab = f"scene_{i:05d}.ppm", f"scene_{i:05d}_labels.pgm"
        write_ppm(out / img, scene.image)
        write_pgm(out / lab, scene.labels)
        lines.append(f"{img}\t{lab}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path: Union[str, Path]) -> List[Tuple[Path, Path]]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.tsv"
    pairs = []
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        img, lab = line.split("\t")
        pairs.append((path.parent / img, path.parent / lab))
    return pairs


def load_dataset(path: Union[str, Path]) -> List[SyntheticScene]:
    return [SyntheticScene(read_ppm(i), read_pgm(l)) for i, l in read_manifest(path)]
