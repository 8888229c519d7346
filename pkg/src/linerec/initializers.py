"""Parameter initialization helpers shared across the network modules."""

from __future__ import annotations

import numpy as np

from linerec.autodiff import Tensor, parameter


def uniform_fan(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    """[fan_in, fan_out] matrix drawn uniform in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, (fan_in, fan_out)))


def uniform_conv(rng: np.random.Generator, out_channels: int, in_channels: int,
                 kw: int, kh: int) -> Tensor:
    """Convolution kernel with the same fan-balanced uniform bound."""
    fan_in = in_channels * kw * kh
    fan_out = out_channels * kw * kh
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, (out_channels, in_channels, kw, kh)))
