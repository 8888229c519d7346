"""Training-only attention decoder and its cross-entropy objective.

Per step: the previous LSTM hidden state is projected into a query, each
integrated feature into a key, and the previous step's attention weights
into a coverage term; a scoring vector turns their tanh-combined sum into
weights over the T timesteps. The context plus the previous gold embedding
feed the decoder LSTM, and a linear head predicts the next character. An
explicit end-of-sequence class is appended to every target, and a start
embedding row stands in for the step-zero "previous" character.

The coverage projection is a fixed [max_keys, score] matrix of which the
first T rows are used, so variable-length sequences share one parameter.
The decoder is never evaluated at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec.context import IntegratedSequence, LstmParams, init_lstm, lstm_step, lstm_zero_state
from linerec.ctc import BLANK, LabelSequence
from linerec.initializers import uniform_fan

MAX_KEYS = 256


@dataclass
class DecoderParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_a: Tensor           # [max_keys, score_dim] coverage projection
    w_score: Tensor       # [score_dim, 1]
    embedding: Tensor     # [num_classes + 1, embed_dim]; last row = start token
    lstm: LstmParams
    w_out: Tensor         # [hidden, num_classes + 1]; last column = end token
    b_out: Tensor

    @property
    def num_classes(self) -> int:
        return self.embedding.shape[0] - 1

    @property
    def end_class(self) -> int:
        return self.num_classes

    @property
    def start_row(self) -> int:
        return self.num_classes

    @property
    def max_keys(self) -> int:
        return self.w_a.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.w_q": self.w_q, f"{prefix}.b_q": self.b_q,
            f"{prefix}.w_k": self.w_k, f"{prefix}.b_k": self.b_k,
            f"{prefix}.w_a": self.w_a, f"{prefix}.w_score": self.w_score,
            f"{prefix}.embedding": self.embedding,
            f"{prefix}.w_out": self.w_out, f"{prefix}.b_out": self.b_out,
        }
        out.update(self.lstm.named(f"{prefix}.lstm"))
        return out


def init_decoder(feature_dim: int, num_classes: int, rng: np.random.Generator,
                 hidden: int | None = None, embed_dim: int | None = None,
                 score_dim: int | None = None, max_keys: int = MAX_KEYS) -> DecoderParams:
    hidden = hidden or feature_dim
    embed_dim = embed_dim or hidden
    score_dim = score_dim or hidden
    return DecoderParams(
        w_q=uniform_fan(rng, hidden, score_dim),
        b_q=ad.parameter(np.zeros(score_dim)),
        w_k=uniform_fan(rng, feature_dim, score_dim),
        b_k=ad.parameter(np.zeros(score_dim)),
        w_a=uniform_fan(rng, max_keys, score_dim),
        w_score=uniform_fan(rng, score_dim, 1),
        embedding=uniform_fan(rng, num_classes + 1, embed_dim),
        lstm=init_lstm(feature_dim + embed_dim, hidden, rng),
        w_out=uniform_fan(rng, hidden, num_classes + 1),
        b_out=ad.parameter(np.zeros(num_classes + 1)),
    )


@dataclass
class DecoderState:
    hidden: Tensor  # [1, hidden]
    cell: Tensor    # [1, hidden]
    alpha: Tensor   # [1, T] previous attention weights (zeros at step 0)
    prev_embedding: Tensor  # [1, embed_dim]


def initial_state(params: DecoderParams, num_keys: int) -> DecoderState:
    s, c = lstm_zero_state(params.lstm)
    start = ad.narrow(params.embedding, 0, params.start_row, 1)
    return DecoderState(hidden=s, cell=c,
                        alpha=Tensor(np.zeros((1, num_keys))),
                        prev_embedding=start)


def decoder_step(features: IntegratedSequence, state: DecoderState,
                 params: DecoderParams):
    """One decode step.

    Returns (class distribution [1, K+1], new state, x_t, raw logits); x_t
    is the LSTM output the head projects. The new state keeps the previous
    embedding unchanged; the caller decides what to feed next (gold during
    teacher forcing, argmax during greedy decoding).
    """
    t_len = features.count
    if t_len < 1:
        raise ValueError("cannot decode over an empty feature sequence")
    if t_len > params.max_keys:
        raise ValueError(f"sequence of {t_len} steps exceeds coverage size {params.max_keys}")
    v = features.matrix
    q = ad.tanh(ad.add(ad.matmul(state.hidden, params.w_q), params.b_q))      # [1, d]
    k = ad.tanh(ad.add(ad.matmul(v, params.w_k), params.b_k))                 # [T, d]
    cov = ad.tanh(ad.matmul(state.alpha, ad.narrow(params.w_a, 0, 0, t_len)))  # [1, d]
    e = ad.matmul(ad.tanh(ad.add(ad.add(q, k), cov)), params.w_score)         # [T, 1]
    alpha = ad.softmax_lastdim(ad.reshape(e, (1, t_len)))                     # [1, T]
    context = ad.matmul(alpha, v)                                             # [1, D]
    x_in = ad.concat([context, state.prev_embedding], axis=1)
    hidden, cell = lstm_step(x_in, (state.hidden, state.cell), params.lstm)
    logits = ad.add(ad.matmul(hidden, params.w_out), params.b_out)            # [1, K+1]
    dist = ad.softmax_lastdim(logits)
    new_state = DecoderState(hidden=hidden, cell=cell, alpha=alpha,
                             prev_embedding=state.prev_embedding)
    return dist, new_state, hidden, logits


def _validate_target(target: LabelSequence, num_classes: int) -> None:
    for i in target.ids:
        if i == BLANK:
            raise ValueError("decoder targets must not contain the blank")
        if not 0 < i < num_classes:
            raise ValueError(f"target id {i} outside vocabulary of {num_classes}")


def ce_loss(features: IntegratedSequence, target: LabelSequence,
            params: DecoderParams) -> Tensor:
    """Teacher-forced negative log-likelihood, averaged per predicted step.

    The step sequence is the target characters followed by the end class;
    the embedding fed at each step is the gold previous character (the start
    row at step one).
    """
    if len(target) < 1:
        raise ValueError("target must contain at least one character")
    _validate_target(target, params.num_classes)
    state = initial_state(params, features.count)
    steps = list(target.ids) + [params.end_class]
    logit_rows = []
    for gold_prev in [None] + list(target.ids):
        if gold_prev is not None:
            state.prev_embedding = ad.narrow(params.embedding, 0, gold_prev, 1)
        _, state, _, logits = decoder_step(features, state, params)
        logit_rows.append(logits)
    logp = ad.log_softmax_lastdim(ad.concat(logit_rows, axis=0))
    onehot = np.zeros((len(steps), params.num_classes + 1))
    onehot[np.arange(len(steps)), steps] = 1.0
    picked = ad.tsum(ad.mul(logp, Tensor(onehot)), axis=1)
    return ad.neg(ad.mean(picked))


def decoder_greedy(features: IntegratedSequence, params: DecoderParams,
                   max_len: int) -> LabelSequence:
    """Feed back the argmax class until the end token or `max_len` steps.

    Debug decoding only; the recognition path never runs the decoder.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = initial_state(params, features.count)
    out: list[int] = []
    for _ in range(max_len):
        dist, state, _, _ = decoder_step(features, state, params)
        cls = int(dist.data.argmax())
        if cls == params.end_class:
            break
        out.append(cls)
        state.prev_embedding = ad.narrow(params.embedding, 0, cls, 1)
    return LabelSequence(ids=[i for i in out if i != BLANK])
