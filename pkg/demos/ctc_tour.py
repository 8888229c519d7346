"""The CTC loss from both ends: the efficient forward-backward computation
and the brute-force enumeration over every frame path.

Run:  python demos/ctc_tour.py
"""

import itertools

import numpy as np

from linerec.autodiff import Tensor, backward, parameter
from linerec.ctc import (
    LabelSequence,
    brute_force_ctc,
    collapse_phi,
    ctc_loss,
    greedy_decode,
)


def main():
    print("== the collapse rule: merge repeats, then drop blanks ==")
    for path in ([1, 1, 0, 1], [0, 0], [1, 0, 2], [2, 2, 2, 0, 0, 2]):
        print(f"  path {path} -> label ids {collapse_phi(path).ids}")

    print("\n== tiny instance, all paths written out ==")
    # T=2 frames, classes {blank, a}; uniform scores give each path probability 1/4
    logits = Tensor(np.zeros((2, 2)))
    label = LabelSequence(ids=[1])
    print("paths collapsing to 'a': (a,a), (a,-), (-,a) -> probability 3/4")
    print(f"  ctc_loss          = {ctc_loss(logits, label).item():.6f}")
    print(f"  -ln(3/4)          = {-np.log(0.75):.6f}")
    print(f"  brute_force_ctc   = {brute_force_ctc(logits, label):.6f}")

    print("\n== random instances: dynamic programming vs enumeration ==")
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        t_len, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
        label = LabelSequence(ids=[int(rng.integers(1, k))
                                   for _ in range(int(rng.integers(0, 3)))])
        from linerec.ctc import ctc_feasible
        if not ctc_feasible(label, t_len):
            continue
        lg = Tensor(rng.normal(0, 2, (t_len, k)))
        worst = max(worst, abs(ctc_loss(lg, label).item() - brute_force_ctc(lg, label)))
    print(f"  worst absolute disagreement over 200 instances: {worst:.2e}")

    print("\n== total probability over all labels is exactly one ==")
    lg = Tensor(rng.normal(0, 1, (3, 3)))
    total = 0.0
    for n in range(4):
        for ids in itertools.product((1, 2), repeat=n):
            loss = brute_force_ctc(lg, LabelSequence(ids=list(ids)))
            if np.isfinite(loss):
                total += np.exp(-loss)
    print(f"  sum over labels of p(label) = {total:.12f}")

    print("\n== the loss is differentiable ==")
    x = parameter(rng.normal(0, 1, (4, 3)))
    loss = ctc_loss(x, LabelSequence(ids=[1, 2]))
    backward(loss)
    print(f"  loss {loss.item():.4f}; gradient norm {np.linalg.norm(x.grad):.4f}")

    print("\n== greedy decoding is argmax-then-collapse ==")
    peaked = np.full((5, 3), -4.0)
    for t, cls in enumerate([1, 1, 0, 2, 2]):
        peaked[t, cls] = 4.0
    print(f"  frame argmaxes [1,1,0,2,2] decode to {greedy_decode(Tensor(peaked)).ids}")


if __name__ == "__main__":
    main()
