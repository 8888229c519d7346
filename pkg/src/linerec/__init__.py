"""linerec: text-line recognition built on a from-scratch float64 autodiff core.

The pipeline: a small CNN backbone produces a channels x width x height
feature volume; a sliding window slices it into blocks that a two-stage
attention module turns into one visual vector per block; self-attention and
an LSTM add global and local context; a linear head feeds CTC training and
greedy decoding, with an optional attention decoder adding a cross-entropy
objective during joint training.
"""

from linerec.autodiff import Tensor, backward, gradcheck, parameter

__all__ = ["Tensor", "backward", "gradcheck", "parameter"]

__version__ = "0.1.0"
