"""Export block-attention weights as grayscale heatmaps.

Each block's [S, H] attention field is upsampled by the backbone's
downsample factor and placed at the block's horizontal position on a
full-size canvas, so every heatmap has exactly the input image's pixel
dimensions and can be overlaid on the strokes it attends to.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from linerec.dataio import write_pgm
from linerec.model import ModelBundle, attention_maps


def upsample_nearest(field: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(field, factor, axis=0), factor, axis=1)


def attention_canvases(image: np.ndarray, bundle: ModelBundle,
                       scale: int | None = None) -> list[np.ndarray]:
    """One [H, W] canvas per block, matching the input image size, each
    normalized to [0, 1] by its own peak."""
    maps, factor, _ = attention_maps(image, bundle, scale)
    img_h, img_w = image.shape
    s = maps.shape[1]
    canvases = []
    for t in range(maps.shape[0]):
        canvas = np.zeros((img_h, img_w))
        block = upsample_nearest(maps[t].T, factor)  # [S, H] -> image rows x cols
        x0 = t * s * factor
        x1 = min(img_w, x0 + block.shape[1])
        y1 = min(img_h, block.shape[0])
        if x1 > x0:
            canvas[:y1, x0:x1] = block[:y1, : x1 - x0]
        peak = canvas.max()
        if peak > 0:
            canvas /= peak
        canvases.append(canvas)
    return canvases


def export_attention_heatmaps(image: np.ndarray, bundle: ModelBundle,
                              out_dir, scale: int | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, canvas in enumerate(attention_canvases(image, bundle, scale)):
        path = out_dir / f"attention_block_{t:03d}.pgm"
        write_pgm(path, canvas)
        paths.append(path)
    return paths
