"""Convolutional feature extractor producing the [C, W, H] volume that the
framing module slices.

Volumes are laid out channels x width x height so the width axis the text
runs along stays explicit. Each stage is conv -> batch norm -> ReLU with an
optional 2x2 max pool; batch statistics are taken over the spatial plane of
the sample being processed, with running estimates kept for eval mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec.initializers import uniform_conv

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass
class StageSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pool: bool = False


@dataclass
class BackboneConfig:
    stages: list[StageSpec]
    input_height: int = 64
    input_channels: int = 1

    def __post_init__(self):
        for s in self.stages:
            if s.out_channels <= 0 or s.kernel <= 0 or s.stride <= 0:
                raise ValueError(f"invalid stage spec {s}")
        if self.input_height <= 0 or self.input_channels <= 0:
            raise ValueError("input dimensions must be positive")
        if self.feature_height() < 1:
            raise ValueError(
                f"input height {self.input_height} collapses below one row")

    @property
    def channels(self) -> int:
        return self.stages[-1].out_channels

    def downsample_factor(self) -> int:
        f = 1
        for s in self.stages:
            f *= s.stride * (2 if s.pool else 1)
        return f

    def feature_width(self, input_width: int) -> int:
        w = input_width
        for s in self.stages:
            w = _conv_out(w, s.kernel, s.stride)
            if s.pool:
                w //= 2
        return w

    def feature_height(self) -> int:
        h = self.input_height
        for s in self.stages:
            h = _conv_out(h, s.kernel, s.stride)
            if s.pool:
                h //= 2
        return h

    def min_input_width(self) -> int:
        w = 1
        while self.feature_width(w) < 1:
            w += 1
        return w


def default_backbone_config(input_height: int = 64) -> BackboneConfig:
    """Five 3x3 stages, channels 32-64-128-128-128, 2x2 pooling after the
    first three; 8x downsampling both axes."""
    return BackboneConfig(
        stages=[
            StageSpec(32, pool=True),
            StageSpec(64, pool=True),
            StageSpec(128, pool=True),
            StageSpec(128),
            StageSpec(128),
        ],
        input_height=input_height,
    )


def _conv_out(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Same-padded convolution of a [C_in, W, H] volume with a
    [C_out, C_in, kw, kh] kernel (odd kernel sizes)."""
    cin, w, h = x.shape
    cout, cin_w, kw, kh = weight.shape
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels, kernel expects {cin_w}")
    pw, ph = kw // 2, kh // 2
    xp = np.pad(x.data, ((0, 0), (pw, pw), (ph, ph)))
    win = sliding_window_view(xp, (kw, kh), axis=(1, 2))[:, ::stride, ::stride]
    w_out, h_out = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(w_out * h_out, cin * kw * kh)
    wmat = weight.data.reshape(cout, cin * kw * kh)
    out = cols @ wmat.T + bias.data
    data = np.ascontiguousarray(out.reshape(w_out, h_out, cout).transpose(2, 0, 1))

    def backward_fn(g):
        gmat = g.transpose(1, 2, 0).reshape(w_out * h_out, cout)
        ad.accumulate_grad(bias, gmat.sum(axis=0))
        ad.accumulate_grad(weight, (gmat.T @ cols).reshape(weight.data.shape))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(w_out, h_out, cin, kw, kh).transpose(2, 0, 1, 3, 4)
            gxp = np.zeros_like(xp)
            for di in range(kw):
                for dj in range(kh):
                    gxp[:, di:di + stride * w_out:stride,
                        dj:dj + stride * h_out:stride] += gcols[:, :, :, di, dj]
            ad.accumulate_grad(x, gxp[:, pw:pw + w, ph:ph + h])

    return ad.primitive(data, (x, weight, bias), backward_fn)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2, floor mode (a trailing odd row/column is
    dropped). Gradient routes to the first maximum of each window."""
    c, w, h = x.shape
    w2, h2 = w // 2, h // 2
    if w2 < 1 or h2 < 1:
        raise ValueError(f"volume {x.shape} too small for 2x2 pooling")
    crop = x.data[:, :2 * w2, :2 * h2]
    quads = crop.reshape(c, w2, 2, h2, 2).transpose(0, 1, 3, 2, 4).reshape(c, w2, h2, 4)
    idx = quads.argmax(axis=-1)
    data = np.take_along_axis(quads, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gq = np.zeros_like(quads)
        np.put_along_axis(gq, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :2 * w2, :2 * h2] = (
            gq.reshape(c, w2, h2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * w2, 2 * h2))
        ad.accumulate_grad(x, gx)

    return ad.primitive(np.ascontiguousarray(data), (x,), backward_fn)


@dataclass
class BatchNormState:
    """Affine parameters plus running statistics for one stage."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, channels: int) -> "BatchNormState":
        return cls(gamma=ad.parameter(np.ones(channels)),
                   beta=ad.parameter(np.zeros(channels)),
                   running_mean=np.zeros(channels),
                   running_var=np.ones(channels))


def batchnorm2d(x: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Per-channel normalization of a [C, W, H] volume.

    Train mode normalizes with the sample's own spatial statistics and
    updates the running estimates; eval mode uses the running estimates.
    """
    c = x.shape[0]
    gamma = ad.reshape(state.gamma, (c, 1, 1))
    beta = ad.reshape(state.beta, (c, 1, 1))
    if train:
        m = ad.mean(x, axis=(1, 2), keepdims=True)
        centered = ad.sub(x, m)
        v = ad.mean(ad.mul(centered, centered), axis=(1, 2), keepdims=True)
        xhat = ad.div(centered, ad.sqrt(ad.add(v, Tensor(state.eps))))
        state.running_mean = (state.momentum * state.running_mean
                              + (1 - state.momentum) * m.data.reshape(c))
        state.running_var = (state.momentum * state.running_var
                             + (1 - state.momentum) * v.data.reshape(c))
    else:
        rm = Tensor(state.running_mean.reshape(c, 1, 1))
        rs = Tensor(np.sqrt(state.running_var + state.eps).reshape(c, 1, 1))
        xhat = ad.div(ad.sub(x, rm), rs)
    return ad.add(ad.mul(xhat, gamma), beta)


@dataclass
class BackboneParams:
    config: BackboneConfig
    conv_w: list[Tensor] = field(default_factory=list)
    conv_b: list[Tensor] = field(default_factory=list)
    bn: list[BatchNormState] = field(default_factory=list)

    def named(self, prefix: str = "backbone") -> dict[str, Tensor]:
        out = {}
        for i, (w, b, bn) in enumerate(zip(self.conv_w, self.conv_b, self.bn)):
            out[f"{prefix}.stage{i}.conv_w"] = w
            out[f"{prefix}.stage{i}.conv_b"] = b
            out[f"{prefix}.stage{i}.bn_gamma"] = bn.gamma
            out[f"{prefix}.stage{i}.bn_beta"] = bn.beta
        return out

    def named_buffers(self, prefix: str = "backbone") -> dict[str, np.ndarray]:
        out = {}
        for i, bn in enumerate(self.bn):
            out[f"{prefix}.stage{i}.bn_mean"] = bn.running_mean
            out[f"{prefix}.stage{i}.bn_var"] = bn.running_var
        return out


def init_backbone(config: BackboneConfig, rng: np.random.Generator) -> BackboneParams:
    params = BackboneParams(config=config)
    cin = config.input_channels
    for spec in config.stages:
        params.conv_w.append(uniform_conv(rng, spec.out_channels, cin, spec.kernel, spec.kernel))
        params.conv_b.append(ad.parameter(np.zeros(spec.out_channels)))
        params.bn.append(BatchNormState.create(spec.out_channels))
        cin = spec.out_channels
    return params


@dataclass
class FeatureVolume:
    data: Tensor
    downsample_factor: int


def backbone_forward(image: Tensor, params: BackboneParams, train: bool = False) -> FeatureVolume:
    """Run a [1, W0, H0] image through every stage. Raises if the image is
    the wrong height or too narrow to produce at least one output column."""
    cfg = params.config
    if image.ndim != 3 or image.shape[0] != cfg.input_channels:
        raise ValueError(f"expected [{cfg.input_channels}, W, H] image, got {image.shape}")
    if image.shape[2] != cfg.input_height:
        raise ValueError(
            f"image height {image.shape[2]} does not match configured {cfg.input_height}")
    if cfg.feature_width(image.shape[1]) < 1:
        raise ValueError(
            f"image width {image.shape[1]} too narrow: needs >= {cfg.min_input_width()}")
    x = image
    for spec, w, b, bn in zip(cfg.stages, params.conv_w, params.conv_b, params.bn):
        x = conv2d(x, w, b, stride=spec.stride)
        x = batchnorm2d(x, bn, train)
        x = ad.relu(x)
        if spec.pool:
            x = maxpool2x2(x)
    return FeatureVolume(data=x, downsample_factor=cfg.downsample_factor())


def width_table(config: BackboneConfig, input_widths) -> dict[int, int]:
    """Input width -> feature width map for the given config."""
    return {w: config.feature_width(w) for w in input_widths}
