"""Slice a feature volume into sliding-window blocks and add position info.

A volume of shape [C, W, H] is scanned left to right by a window of width S
(stride S, so windows never overlap); the right edge is zero-padded up to a
multiple of S. Before attention, every plane location (w, h) inside a block
receives a split sinusoidal encoding: the first C/2 channels get the width
sinusoid, the last C/2 the height sinusoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor

MAX_POSITIONS = 512


@dataclass
class PositionalTable:
    """Sinusoid lookup: row p holds the encoding for position p.

    table[p, 2i]   = sin(p * exp(2i * (-ln 10000 / C)))
    table[p, 2i+1] = cos(p * exp(2i * (-ln 10000 / C)))

    where C is the full channel count and rows have C/2 entries, so the same
    table serves both the width and the height half of the channels.
    """

    table: np.ndarray
    channels: int

    @property
    def max_pos(self) -> int:
        return self.table.shape[0]


def sinusoid_table(channels: int, max_pos: int = MAX_POSITIONS) -> PositionalTable:
    if channels % 2 != 0:
        raise ValueError(f"channel count must be even, got {channels}")
    dim = channels // 2
    idx = np.arange(dim)
    scales = np.exp((idx - idx % 2) * (-np.log(10000.0) / channels))
    angles = np.arange(max_pos)[:, None] * scales[None, :]
    table = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return PositionalTable(table=table, channels=channels)


@dataclass
class BlockSequence:
    """T equally shaped [C, S, H] windows of a feature volume.

    Stored stacked as a single [T, C, S, H] tensor so downstream attention
    can batch over blocks; `block(t)` slices out an individual window.
    """

    stacked: Tensor
    frame_length: int

    @property
    def count(self) -> int:
        return self.stacked.shape[0]

    def block(self, t: int) -> Tensor:
        c, s, h = self.stacked.shape[1:]
        return ad.reshape(ad.narrow(self.stacked, 0, t, 1), (c, s, h))

    @property
    def blocks(self) -> list[Tensor]:
        return [self.block(t) for t in range(self.count)]


def extract_blocks(volume, frame_length: int) -> BlockSequence:
    """Split [C, W, H] into ceil(W/S) non-overlapping width-S windows.

    Accepts a raw tensor or a backbone FeatureVolume. The final window is
    right-padded with zeros when S does not divide W, so the first
    floor(W/S) blocks are unaffected by padding.
    """
    if frame_length <= 0:
        raise ValueError(f"frame length must be positive, got {frame_length}")
    if not isinstance(volume, Tensor):  # FeatureVolume wraps its tensor in .data
        volume = volume.data
    c, w, h = volume.shape
    count = -(-w // frame_length)
    pad = count * frame_length - w
    if pad:
        volume = ad.concat([volume, Tensor(np.zeros((c, pad, h)))], axis=1)
    split = ad.reshape(volume, (c, count, frame_length, h))
    return BlockSequence(stacked=ad.transpose(split, (1, 0, 2, 3)),
                         frame_length=frame_length)


def positional_field(table: PositionalTable, s: int, h: int) -> np.ndarray:
    """The constant [C, S, H] offset added to one block: width sinusoids on
    the first C/2 channels, height sinusoids on the rest."""
    if max(s, h) > table.max_pos:
        raise ValueError(f"block extent {(s, h)} exceeds table size {table.max_pos}")
    half = table.channels // 2
    field = np.zeros((table.channels, s, h))
    field[:half] = table.table[:s].T[:, :, None]
    field[half:] = table.table[:h].T[:, None, :]
    return field


def add_positional_encoding(block: Tensor, table: PositionalTable) -> Tensor:
    """Add the split sinusoidal encoding to a [C, S, H] block (or to every
    block of a stacked [T, C, S, H] batch)."""
    c, s, h = block.shape[-3:]
    if c != table.channels:
        raise ValueError(f"block has {c} channels, table built for {table.channels}")
    return ad.add(block, Tensor(positional_field(table, s, h)))


def reshape_block(block: Tensor) -> Tensor:
    """[C, S, H] -> [S*H, C]; row s*H + h is the channel vector at (s, h).

    Works on a stacked [T, C, S, H] batch too, giving [T, S*H, C].
    """
    if block.ndim == 3:
        c, s, h = block.shape
        return ad.reshape(ad.transpose(block, (1, 2, 0)), (s * h, c))
    t, c, s, h = block.shape
    return ad.reshape(ad.transpose(block, (0, 2, 3, 1)), (t, s * h, c))


def unshape_block(flat: Tensor, s: int, h: int) -> Tensor:
    """Inverse of `reshape_block` for a single [S*H, C] matrix."""
    c = flat.shape[-1]
    return ad.transpose(ad.reshape(flat, (s, h, c)), (2, 0, 1))
