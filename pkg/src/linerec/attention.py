"""Attention over feature blocks: 2D self-attention across the S*H plane
positions of each block, a LayerNorm + two-FC sublayer, and an additive
1D aggregation that pools every block down to a single visual vector.

Queries, keys and values of the self-attention are the block rows
themselves (no projection matrices, single head). Aggregation scores are
e_p = w . tanh(W f'_p + b); by default they are normalized with a softmax,
the raw e_p / sum(e_i) form being available behind `literal_scores` for
study (it is numerically fragile whenever the scores sum near zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec.framing import BlockSequence, PositionalTable, add_positional_encoding, reshape_block
from linerec.initializers import uniform_fan


@dataclass
class BlockAttentionParams:
    """Weights of one block-attention branch; all matrices are [in, out]."""

    ln_gamma: Tensor
    ln_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    agg_W: Tensor
    agg_b: Tensor
    agg_w: Tensor
    scale_s: float

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.ln_gamma": self.ln_gamma,
            f"{prefix}.ln_beta": self.ln_beta,
            f"{prefix}.ffn_w1": self.ffn_w1,
            f"{prefix}.ffn_b1": self.ffn_b1,
            f"{prefix}.ffn_w2": self.ffn_w2,
            f"{prefix}.ffn_b2": self.ffn_b2,
            f"{prefix}.agg_W": self.agg_W,
            f"{prefix}.agg_b": self.agg_b,
            f"{prefix}.agg_w": self.agg_w,
        }


def init_block_attention(channels: int, rng: np.random.Generator,
                         hidden: int | None = None,
                         score_dim: int | None = None) -> BlockAttentionParams:
    hidden = hidden or channels
    score_dim = score_dim or channels
    return BlockAttentionParams(
        ln_gamma=ad.parameter(np.ones(channels)),
        ln_beta=ad.parameter(np.zeros(channels)),
        ffn_w1=uniform_fan(rng, channels, hidden),
        ffn_b1=ad.parameter(np.zeros(hidden)),
        ffn_w2=uniform_fan(rng, hidden, channels),
        ffn_b2=ad.parameter(np.zeros(channels)),
        agg_W=uniform_fan(rng, channels, score_dim),
        agg_b=ad.parameter(np.zeros(score_dim)),
        agg_w=uniform_fan(rng, score_dim, 1),
        scale_s=float(np.sqrt(channels)),
    )


@dataclass
class VisualSequence:
    """One pooled feature vector per block, kept as a [T, C] matrix."""

    matrix: Tensor
    frame_length: int

    @property
    def count(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def feature(self, t: int) -> Tensor:
        return ad.reshape(ad.narrow(self.matrix, 0, t, 1), (self.dim,))

    @property
    def features(self) -> list[Tensor]:
        return [self.feature(t) for t in range(self.count)]


def self_attend(x: Tensor, scale_s: float) -> Tensor:
    """softmax(X X^T / s) X over the last two axes; rows attend to rows."""
    scores = ad.matmul(x, ad.transpose(x, tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)))
    weights = ad.softmax_lastdim(scores * (1.0 / scale_s))
    return ad.matmul(weights, x)


def block_self_attention(f: Tensor, scale_s: float) -> Tensor:
    """Self-attention over the S*H rows of one reshaped block (or over each
    block of a [T, S*H, C] batch)."""
    return self_attend(f, scale_s)


def sublayer(fp: Tensor, params: BlockAttentionParams) -> Tensor:
    """Per-position LayerNorm, then FC -> tanh -> FC back to C channels."""
    normed = ad.layer_norm(fp, params.ln_gamma, params.ln_beta)
    h = ad.tanh(ad.add(ad.matmul(normed, params.ffn_w1), params.ffn_b1))
    return ad.add(ad.matmul(h, params.ffn_w2), params.ffn_b2)


def attention_scores(fp: Tensor, params: BlockAttentionParams,
                     literal_scores: bool = False) -> Tensor:
    """Normalized aggregation weights over the rows of `fp` (last-2 axis)."""
    hidden = ad.tanh(ad.add(ad.matmul(fp, params.agg_W), params.agg_b))
    e = ad.reshape(ad.matmul(hidden, params.agg_w), fp.shape[:-2] + (fp.shape[-2],))
    if literal_scores:
        return ad.div(e, ad.tsum(e, axis=-1, keepdims=True))
    return ad.softmax_lastdim(e)


def aggregate(fp: Tensor, params: BlockAttentionParams,
              literal_scores: bool = False,
              return_weights: bool = False):
    """Pool the rows of `fp` into one vector: r = sum_p alpha_p f'_p.

    `fp` is [S*H, C] or batched [T, S*H, C]; the result drops the pooled
    axis ([C] or [T, C]).
    """
    alpha = attention_scores(fp, params, literal_scores)
    pooled = ad.matmul(ad.reshape(alpha, alpha.shape[:-1] + (1, alpha.shape[-1])), fp)
    r = ad.reshape(pooled, fp.shape[:-2] + (fp.shape[-1],))
    if return_weights:
        return r, alpha
    return r


def forward_block_attention(blocks: BlockSequence, params: BlockAttentionParams,
                            table: PositionalTable,
                            literal_scores: bool = False):
    """Full per-block pipeline: positional encoding -> reshape -> block
    self-attention -> sublayer -> aggregation.

    Returns the visual sequence plus the per-block attention weights
    ([T, S, H] tensor) for visualization.
    """
    s, h = blocks.stacked.shape[2], blocks.stacked.shape[3]
    if blocks.count == 0:
        c = blocks.stacked.shape[1]
        empty = Tensor(np.zeros((0, c)))
        return (VisualSequence(matrix=empty, frame_length=blocks.frame_length),
                Tensor(np.zeros((0, s, h))))
    encoded = add_positional_encoding(blocks.stacked, table)
    flat = reshape_block(encoded)
    attended = block_self_attention(flat, params.scale_s)
    refined = sublayer(attended, params)
    r, alpha = aggregate(refined, params, literal_scores, return_weights=True)
    alpha_maps = ad.reshape(alpha, (blocks.count, s, h))
    return VisualSequence(matrix=r, frame_length=blocks.frame_length), alpha_maps
