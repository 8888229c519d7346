"""CTC loss, the blank-collapse rule, greedy decoding, and a brute-force
path-enumeration oracle.

The loss is -log of the total probability of every frame path that
collapses to the target: adjacent repeats merge first, then blanks drop.
It is computed in log space with the forward recursion over the extended
label (blanks interleaved, 2n+1 states); the gradient comes from the
forward-backward posteriors combined with the frame softmax. Class index 0
is reserved for the blank.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor

BLANK = 0


class CtcInfeasibleError(ValueError):
    """Raised when no frame path of length T can collapse to the label."""


@dataclass
class LabelSequence:
    """Target character ids (never the blank) plus the source string."""

    ids: list[int]
    text: str = ""

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if any(i == BLANK for i in self.ids):
            raise ValueError("label ids must not contain the blank index")

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if isinstance(other, LabelSequence):
            return self.ids == other.ids
        return NotImplemented


def collapse_path(path) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out = []
    prev = None
    for cls in path:
        if cls != prev:
            out.append(cls)
        prev = cls
    return [c for c in out if c != BLANK]


def collapse_phi(path) -> LabelSequence:
    return LabelSequence(ids=collapse_path(path))


def _extended(ids: list[int]) -> np.ndarray:
    ext = np.full(2 * len(ids) + 1, BLANK, dtype=np.int64)
    ext[1::2] = ids
    return ext


def min_frames(ids: list[int]) -> int:
    """Shortest path length that can collapse to `ids` (repeats need a
    separating blank)."""
    repeats = sum(1 for a, b in zip(ids, ids[1:]) if a == b)
    return len(ids) + repeats


def ctc_feasible(label: LabelSequence, frames: int) -> bool:
    return frames >= min_frames(label.ids)


def _forward_log_alpha(logp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    t_len, _ = logp.shape
    n_ext = len(ext)
    alpha = np.full((t_len, n_ext), -np.inf)
    alpha[0, 0] = logp[0, ext[0]]
    if n_ext > 1:
        alpha[0, 1] = logp[0, ext[1]]
    # transitions: stay, advance one, or skip a blank between distinct chars
    can_skip = np.zeros(n_ext, dtype=bool)
    can_skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    for t in range(1, t_len):
        stay = alpha[t - 1]
        prev1 = np.full(n_ext, -np.inf)
        prev1[1:] = alpha[t - 1, :-1]
        prev2 = np.full(n_ext, -np.inf)
        prev2[2:] = alpha[t - 1, :-2]
        prev2 = np.where(can_skip, prev2, -np.inf)
        merged = np.logaddexp(np.logaddexp(stay, prev1), prev2)
        alpha[t] = merged + logp[t, ext]
    return alpha


def _backward_log_beta(logp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    t_len, _ = logp.shape
    n_ext = len(ext)
    beta = np.full((t_len, n_ext), -np.inf)
    beta[-1, -1] = logp[-1, ext[-1]]
    if n_ext > 1:
        beta[-1, -2] = logp[-1, ext[-2]]
    can_skip = np.zeros(n_ext, dtype=bool)
    can_skip[:-2] = (ext[:-2] != BLANK) & (ext[:-2] != ext[2:])
    for t in range(t_len - 2, -1, -1):
        stay = beta[t + 1]
        next1 = np.full(n_ext, -np.inf)
        next1[:-1] = beta[t + 1, 1:]
        next2 = np.full(n_ext, -np.inf)
        next2[:-2] = beta[t + 1, 2:]
        next2 = np.where(can_skip, next2, -np.inf)
        merged = np.logaddexp(np.logaddexp(stay, next1), next2)
        beta[t] = merged + logp[t, ext]
    return beta


def ctc_loss(logits: Tensor, label: LabelSequence) -> Tensor:
    """-log p(label | logits) summed over all collapsing frame paths.

    `logits` is [T, K] with the blank at column 0; frames are normalized
    with a softmax internally. Fully differentiable via the
    forward-backward posteriors.
    """
    t_len, n_classes = logits.shape
    if n_classes < 2:
        raise ValueError(f"need at least blank plus one class, got K={n_classes}")
    if any(i >= n_classes for i in label.ids):
        raise ValueError("label id outside class range")
    if not ctc_feasible(label, t_len):
        raise CtcInfeasibleError(
            f"label of length {len(label)} (min {min_frames(label.ids)} frames) "
            f"cannot be emitted in {t_len} frames")

    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ext = _extended(label.ids)
    alpha = _forward_log_alpha(logp, ext)
    if len(ext) > 1:
        log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        log_z = alpha[-1, -1]
    loss = -log_z

    def backward_fn(g):
        beta = _backward_log_beta(logp, ext)
        # posterior over extended states; alpha and beta both include the
        # frame term, so subtract it once
        log_gamma = alpha + beta - logp[:, ext] - log_z
        post = np.zeros_like(logp)
        gamma = np.exp(log_gamma)
        for s, cls in enumerate(ext):
            post[:, cls] += gamma[:, s]
        grad = (np.exp(logp) - post) * g.reshape(())
        ad.accumulate_grad(logits, grad)

    return ad.primitive(np.float64(loss), (logits,), backward_fn)


def brute_force_ctc(logits, label: LabelSequence, max_paths: int = 10 ** 6) -> float:
    """-log of the label probability by enumerating all K^T frame paths.

    Exhaustive oracle for `ctc_loss`; returns +inf when no path collapses
    to the label.
    """
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    t_len, n_classes = x.shape
    if n_classes ** t_len > max_paths:
        raise ValueError(f"{n_classes}^{t_len} paths exceed the {max_paths} cap")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    target = list(label.ids)
    total = 0.0
    for path in itertools.product(range(n_classes), repeat=t_len):
        if collapse_path(path) == target:
            p = 1.0
            for t, cls in enumerate(path):
                p *= probs[t, cls]
            total += p
    if total == 0.0:
        return float("inf")
    return -float(np.log(total))


def greedy_decode(logits, vocab=None) -> LabelSequence:
    """Best-path decoding: per-frame argmax (ties to the lowest class index)
    followed by the collapse rule."""
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    path = x.argmax(axis=1)
    ids = collapse_path(path)
    text = vocab.decode(ids) if vocab is not None else ""
    return LabelSequence(ids=ids, text=text)
