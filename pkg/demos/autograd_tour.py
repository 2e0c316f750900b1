"""A short tour of the tensor library underneath the models.

Builds a small expression, backpropagates it, checks one gradient by
hand against finite differences, then runs the packaged self-check
suite that does the same for every operation and loss.
"""

import numpy as np

from rawtorgb import tensor as T
from rawtorgb.gradcheck import format_table, run_suite
from rawtorgb.tensor import Tensor


def main():
    # forward: y = mean(relu(conv(x, w) + b) ** 2), a miniature of what
    # the training loss does at scale; float64 leaves so the numeric
    # comparison below is meaningful
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(1, 2, 6, 6)), name="x", dtype=np.float64)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5, requires_grad=True,
               name="w", dtype=np.float64)
    b = Tensor(np.zeros(3), requires_grad=True, name="b", dtype=np.float64)
    h = T.relu(T.conv2d(x, w, b, stride=1, padding=1))
    y = T.mean_all(T.mul(h, h))
    y.backward()
    print(f"y = {float(y.data):.6f}")
    print(f"dy/dw: shape {w.grad.shape}, |grad| max {np.abs(w.grad).max():.4f}")

    # check one weight's gradient the slow way: nudge it up and down and
    # difference the outputs
    idx = (1, 0, 2, 2)
    eps = 1e-5

    def forward_value(delta: float) -> float:
        w2 = w.data.copy()
        w2[idx] += delta
        h2 = T.relu(T.conv2d(Tensor(x.data, dtype=np.float64),
                             Tensor(w2, dtype=np.float64),
                             Tensor(b.data, dtype=np.float64),
                             stride=1, padding=1))
        return float(T.mean_all(T.mul(h2, h2)).data)

    numeric = (forward_value(+eps) - forward_value(-eps)) / (2 * eps)
    analytic = float(w.grad[idx])
    print(f"w{list(idx)}: analytic {analytic:.8f}, numeric {numeric:.8f}, "
          f"rel err {abs(analytic - numeric) / max(abs(numeric), 1e-12):.2e}")

    # the packaged suite repeats this, in float64, for every op and loss
    print("\nself-check suite (float64):")
    print(format_table(run_suite(seed=0, dtype=np.float64)))


if __name__ == "__main__":
    main()
