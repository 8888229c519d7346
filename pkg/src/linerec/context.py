"""Global and local context over the visual sequence.

Global context runs the same row self-attention used inside blocks over the
whole [T, C] visual matrix (with its own LayerNorm + two-FC sublayer, which
can be disabled). Local context is a left-to-right LSTM. The integrated
representation per timestep is the plain concatenation [r_t | l_t | s_t].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec.attention import VisualSequence, self_attend
from linerec.initializers import uniform_fan


@dataclass
class LstmParams:
    """Gate weights, recurrent weights and biases; matrices are [in, out]."""

    w_f: Tensor
    u_f: Tensor
    b_f: Tensor
    w_i: Tensor
    u_i: Tensor
    b_i: Tensor
    w_c: Tensor
    u_c: Tensor
    b_c: Tensor
    w_o: Tensor
    u_o: Tensor
    b_o: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.b_f.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_f.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for gate in ("f", "i", "c", "o"):
            out[f"{prefix}.w_{gate}"] = getattr(self, f"w_{gate}")
            out[f"{prefix}.u_{gate}"] = getattr(self, f"u_{gate}")
            out[f"{prefix}.b_{gate}"] = getattr(self, f"b_{gate}")
        return out


def init_lstm(input_dim: int, hidden_dim: int, rng: np.random.Generator,
              forget_bias: float = 1.0) -> LstmParams:
    def pair():
        return uniform_fan(rng, input_dim, hidden_dim), uniform_fan(rng, hidden_dim, hidden_dim)

    w_f, u_f = pair()
    w_i, u_i = pair()
    w_c, u_c = pair()
    w_o, u_o = pair()
    return LstmParams(
        w_f=w_f, u_f=u_f, b_f=ad.parameter(np.full(hidden_dim, forget_bias)),
        w_i=w_i, u_i=u_i, b_i=ad.parameter(np.zeros(hidden_dim)),
        w_c=w_c, u_c=u_c, b_c=ad.parameter(np.zeros(hidden_dim)),
        w_o=w_o, u_o=u_o, b_o=ad.parameter(np.zeros(hidden_dim)),
    )


@dataclass
class GlobalContextParams:
    """Sublayer applied after the sequence-level self-attention."""

    ln_gamma: Tensor
    ln_beta: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.ln_gamma": self.ln_gamma,
            f"{prefix}.ln_beta": self.ln_beta,
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


def init_global_context(channels: int, rng: np.random.Generator) -> GlobalContextParams:
    return GlobalContextParams(
        ln_gamma=ad.parameter(np.ones(channels)),
        ln_beta=ad.parameter(np.zeros(channels)),
        w1=uniform_fan(rng, channels, channels),
        b1=ad.parameter(np.zeros(channels)),
        w2=uniform_fan(rng, channels, channels),
        b2=ad.parameter(np.zeros(channels)),
    )


def global_context(visual: VisualSequence, scale_s: float,
                   sublayer_params: GlobalContextParams | None = None) -> Tensor:
    """[T, C] context matrix: softmax(R R^T / s) R, optionally refined by the
    LayerNorm + two-FC sublayer. Row t is the global feature for step t."""
    attended = self_attend(visual.matrix, scale_s)
    if sublayer_params is None:
        return attended
    p = sublayer_params
    normed = ad.layer_norm(attended, p.ln_gamma, p.ln_beta)
    h = ad.tanh(ad.add(ad.matmul(normed, p.w1), p.b1))
    return ad.add(ad.matmul(h, p.w2), p.b2)


def lstm_step(x_t: Tensor, state: tuple[Tensor, Tensor], params: LstmParams):
    """One LSTM update. `x_t` is a [1, input_dim] row; state is (s, c).

    Gates: forget g, input i, output o through sigmoids; candidate through
    tanh; c_t = g * c_prev + i * cand; s_t = o * tanh(c_t).
    """
    s_prev, c_prev = state
    if x_t.shape != (1, params.input_dim):
        raise ValueError(f"lstm_step expects [1, {params.input_dim}] input, got {x_t.shape}")
    if s_prev.shape != (1, params.hidden_dim):
        raise ValueError(f"state dim {s_prev.shape} does not match hidden {params.hidden_dim}")
    g = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, params.w_f), ad.matmul(s_prev, params.u_f)), params.b_f))
    i = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, params.w_i), ad.matmul(s_prev, params.u_i)), params.b_i))
    cand = ad.tanh(ad.add(ad.add(ad.matmul(x_t, params.w_c), ad.matmul(s_prev, params.u_c)), params.b_c))
    o = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, params.w_o), ad.matmul(s_prev, params.u_o)), params.b_o))
    c_t = ad.add(ad.mul(g, c_prev), ad.mul(i, cand))
    s_t = ad.mul(o, ad.tanh(c_t))
    return s_t, c_t


def lstm_zero_state(params: LstmParams) -> tuple[Tensor, Tensor]:
    return (Tensor(np.zeros((1, params.hidden_dim))),
            Tensor(np.zeros((1, params.hidden_dim))))


def local_context(visual: VisualSequence, params: LstmParams) -> Tensor:
    """[T, hidden] matrix of LSTM outputs, unrolled left to right from a
    zero state."""
    state = lstm_zero_state(params)
    rows = []
    for t in range(visual.count):
        x_t = ad.narrow(visual.matrix, 0, t, 1)
        s_t, c_t = lstm_step(x_t, state, params)
        state = (s_t, c_t)
        rows.append(s_t)
    if not rows:
        return Tensor(np.zeros((0, params.hidden_dim)))
    return ad.concat(rows, axis=0)


@dataclass
class IntegratedSequence:
    """Concatenated per-step features [r_t | l_t | s_t] as a [T, D] matrix.

    `dims` records the split (visual, global, local) so the parts can be
    recovered exactly.
    """

    matrix: Tensor
    dims: tuple[int, int, int]

    @property
    def count(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def split(self) -> tuple[Tensor, Tensor, Tensor]:
        c, g, h = self.dims
        return (ad.narrow(self.matrix, 1, 0, c),
                ad.narrow(self.matrix, 1, c, g),
                ad.narrow(self.matrix, 1, c + g, h))


def integrate(visual: Tensor, global_ctx: Tensor, local_ctx: Tensor) -> IntegratedSequence:
    """Concatenate the three [T, *] context matrices along features."""
    if not (visual.shape[0] == global_ctx.shape[0] == local_ctx.shape[0]):
        raise ValueError(
            f"sequence lengths differ: {visual.shape[0]}, {global_ctx.shape[0]}, {local_ctx.shape[0]}")
    matrix = ad.concat([visual, global_ctx, local_ctx], axis=1)
    return IntegratedSequence(matrix=matrix,
                              dims=(visual.shape[1], global_ctx.shape[1], local_ctx.shape[1]))
