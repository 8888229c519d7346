"""Synthetic text-line corpus: deterministic procedural glyphs, line
composition, and training-time augmentations.

Each symbol class renders as a fixed subset of strokes on a small grid
(subset chosen by the class index, so classes are always distinct), with
per-sample jitter on the endpoints. Lines are glyphs placed left to right
with random spacing. Everything derives from explicit seeds; the same
config yields bit-identical datasets.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from linerec.dataio import DatasetManifest, ManifestEntry, Vocabulary, write_pgm


@dataclass
class SynthConfig:
    num_samples: int = 32
    num_symbols: int = 5
    chars_min: int = 2
    chars_max: int = 6
    canvas_height: int = 64
    seed: int = 42
    split: str = "train"

    def __post_init__(self):
        if self.num_symbols < 1:
            raise ValueError("need at least one symbol class")
        if not 1 <= self.chars_min <= self.chars_max:
            raise ValueError("invalid chars-per-line range")
        if self.canvas_height < 16:
            raise ValueError("canvas too small for glyph rendering")

    def symbols(self) -> list[str]:
        letters = string.ascii_lowercase + string.ascii_uppercase + string.digits
        if self.num_symbols > len(letters):
            raise ValueError(f"at most {len(letters)} symbol classes supported")
        return list(letters[: self.num_symbols])


# stroke endpoints on a unit glyph box: edges, midlines, diagonals
_STROKES = [
    ((0.1, 0.1), (0.9, 0.1)),   # top
    ((0.1, 0.9), (0.9, 0.9)),   # bottom
    ((0.1, 0.1), (0.1, 0.9)),   # left
    ((0.9, 0.1), (0.9, 0.9)),   # right
    ((0.1, 0.5), (0.9, 0.5)),   # horizontal mid
    ((0.5, 0.1), (0.5, 0.9)),   # vertical mid
    ((0.1, 0.1), (0.9, 0.9)),   # main diagonal
    ((0.9, 0.1), (0.1, 0.9)),   # anti diagonal
]


def class_strokes(class_index: int) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Strokes for one class: the bits of class_index + 1 select from the
    stroke set, so distinct classes always draw distinct glyphs."""
    bits = class_index + 1
    if bits >= 2 ** len(_STROKES):
        raise ValueError(f"class {class_index} exceeds the glyph space")
    return [_STROKES[i] for i in range(len(_STROKES)) if bits >> i & 1]


def _draw_stroke(canvas: np.ndarray, x0, y0, x1, y1, thickness: float) -> None:
    h, w = canvas.shape
    length = max(abs(x1 - x0), abs(y1 - y0), 1.0)
    steps = int(length * 2) + 2
    ts = np.linspace(0.0, 1.0, steps)
    xs = x0 + (x1 - x0) * ts
    ys = y0 + (y1 - y0) * ts
    r = max(1, int(round(thickness)))
    for x, y in zip(xs, ys):
        xi, yi = int(round(x)), int(round(y))
        canvas[max(0, yi - r + 1): min(h, yi + r),
               max(0, xi - r + 1): min(w, xi + r)] = 1.0


def render_glyph(class_index: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """[height, width] glyph image, ink 1.0 on 0 background, jittered."""
    width = max(8, int(round(height * 0.6)))
    canvas = np.zeros((height, width))
    margin = 2
    gx = width - 2 * margin - 1
    gy = height - 2 * margin - 1
    thickness = max(1.0, height / 16.0)
    for (ux0, uy0), (ux1, uy1) in class_strokes(class_index):
        jitter = rng.uniform(-0.04, 0.04, 4)
        x0 = margin + (ux0 + jitter[0]) * gx
        y0 = margin + (uy0 + jitter[1]) * gy
        x1 = margin + (ux1 + jitter[2]) * gx
        y1 = margin + (uy1 + jitter[3]) * gy
        _draw_stroke(canvas, x0, y0, x1, y1, thickness)
    return canvas


def render_line(class_ids: list[int], height: int, rng: np.random.Generator) -> np.ndarray:
    """Concatenate jittered glyphs left to right with random spacing."""
    glyphs = [render_glyph(c, height, rng) for c in class_ids]
    margin = max(2, height // 16)
    gaps = [int(rng.integers(margin, 2 * margin + 1)) for _ in glyphs]
    width = margin + sum(g.shape[1] + gap for g, gap in zip(glyphs, gaps)) + margin
    canvas = np.zeros((height, width))
    x = margin
    for g, gap in zip(glyphs, gaps):
        canvas[:, x: x + g.shape[1]] = np.maximum(canvas[:, x: x + g.shape[1]], g)
        x += g.shape[1] + gap
    return canvas


def synth_generate(config: SynthConfig, out_dir) -> tuple[DatasetManifest, Vocabulary]:
    """Render the whole corpus: PGM images, TSV manifest, vocabulary file."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary(config.symbols())
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, 0x5E)))
                              )
    manifest = DatasetManifest(split=config.split)
    for i in range(config.num_samples):
        n = int(rng.integers(config.chars_min, config.chars_max + 1))
        ids = [int(rng.integers(1, config.num_symbols + 1)) for _ in range(n)]
        text = vocab.decode(ids)
        image = render_line([i - 1 for i in ids], config.canvas_height, rng)
        rel = f"images/{config.split}_{i:05d}.pgm"
        write_pgm(out_dir / rel, image)
        manifest.entries.append(ManifestEntry(path=rel, label=text,
                                              sample_id=f"{config.split}-{i:05d}"))
    manifest.save(out_dir / f"{config.split}.tsv")
    vocab.save(out_dir / "vocabulary.txt")
    return manifest, vocab


# ---------------------------------------------------------------------------
# augmentations: location shift, box blur, gamma, contrast, shear


def _shift(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = img.shape
    out = np.zeros_like(img)
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = img[src_y, src_x]
    return out


def _box_blur3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    acc = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy: dy + img.shape[0], dx: dx + img.shape[1]]
    return acc / 9.0


def _shear(img: np.ndarray, factor: float) -> np.ndarray:
    h, w = img.shape
    ys = np.arange(h)
    offsets = factor * (ys - h / 2.0)
    xs = np.arange(w)[None, :] - offsets[:, None]
    x0 = np.floor(xs).astype(int)
    frac = xs - x0
    x1 = x0 + 1
    valid0 = (x0 >= 0) & (x0 < w)
    valid1 = (x1 >= 0) & (x1 < w)
    rows = np.repeat(ys[:, None], w, axis=1)
    left = np.where(valid0, img[rows, np.clip(x0, 0, w - 1)], 0.0)
    right = np.where(valid1, img[rows, np.clip(x1, 0, w - 1)], 0.0)
    return left * (1 - frac) + right * frac


def augment(image: np.ndarray, seed: int) -> np.ndarray:
    """Randomized training distortions, each applied with probability 0.5:
    shift up to 10% of each dimension, 3x3 box blur, gamma in [0.7, 1.3],
    contrast scale in [0.8, 1.2], horizontal shear up to 0.1. The label is
    untouched; output is clamped to [0, 1]."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xA6))))
    img = image.astype(np.float64, copy=True)
    h, w = img.shape
    if rng.random() < 0.5:
        dx = int(rng.integers(-w // 10, w // 10 + 1))
        dy = int(rng.integers(-h // 10, h // 10 + 1))
        img = _shift(img, dx, dy)
    if rng.random() < 0.5:
        img = _box_blur3(img)
    if rng.random() < 0.5:
        img = np.power(np.clip(img, 0.0, 1.0), rng.uniform(0.7, 1.3))
    if rng.random() < 0.5:
        img = 0.5 + (img - 0.5) * rng.uniform(0.8, 1.2)
    if rng.random() < 0.5:
        img = _shear(img, rng.uniform(-0.1, 0.1))
    return np.clip(img, 0.0, 1.0)
