"""Tour of the float64 autodiff core: build expressions, differentiate,
and check every gradient against central finite differences.

Run:  python demos/autodiff_tour.py
"""

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor, backward, gradcheck, parameter


def main():
    print("== forward expressions ==")
    x = parameter([[1.0, 2.0], [3.0, 4.0]])
    w = Tensor([[0.5, -0.5], [1.0, 0.25]])
    y = ad.tanh(ad.matmul(x, w))
    print("tanh(x @ w) =\n", y.data)

    print("\n== reverse pass ==")
    loss = ad.tsum(ad.mul(y, y))
    backward(loss)
    print("loss =", loss.item())
    print("d loss / d x =\n", x.grad)

    print("\n== gradcheck: analytic vs central differences ==")
    rng = np.random.default_rng(0)
    w2 = Tensor(rng.uniform(-1, 1, (4, 4)))

    def f(t):
        h = ad.softmax_lastdim(ad.matmul(t, w2))
        return ad.tsum(ad.layer_norm(h, Tensor(np.ones(4)), Tensor(np.zeros(4))))

    err = gradcheck(f, parameter(rng.uniform(-1, 1, (3, 4))))
    print(f"max relative error through softmax+layernorm chain: {err:.2e}")

    print("\n== a broken gradient is caught ==")

    def broken_square(t):
        return ad.primitive(t.data * t.data, (t,),
                            lambda g: ad.accumulate_grad(t, g * t.data))  # wrong rule

    err = gradcheck(lambda t: ad.tsum(broken_square(t)), parameter([1.5, -0.8]))
    print(f"deliberately wrong backward rule reports error {err:.2e} (large, as it should)")


if __name__ == "__main__":
    main()
