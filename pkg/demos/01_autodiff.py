"""Tape-based reverse mode on rank-4 tensors, checked against finite differences."""
import numpy as np

from floorplan_net import tensor as T
from floorplan_net.tensor import Tensor

rng = np.random.default_rng(0)

# A tiny two-layer conv net on a 1x1x8x8 image.
x = Tensor(rng.normal(size=(1, 1, 8, 8)))
w1 = Tensor(rng.normal(size=(4, 1, 3, 3)) * 0.3, requires_grad=True, name="w1")
w2 = Tensor(rng.normal(size=(2, 4, 3, 3)) * 0.3, requires_grad=True, name="w2")
labels = rng.integers(0, 2, (8, 8))


def loss_of(w):
    h = T.relu(T.conv2d(x, w, zero_pad=1))
    logits = T.conv2d(h, w2, zero_pad=1)
    return T.weighted_cross_entropy(logits, labels, [0.5, 0.5])


with T.Tape() as tape:
    loss = loss_of(w1)
print("recorded ops:", [node.op for node in tape.nodes])
tape.backward(loss)
print("loss", loss.item())
print("dL/dw1[0, 0]:\n", np.round(w1.grad[0, 0], 5))

# The same gradient by central differences, in double precision.
err = T.grad_check(loss_of, Tensor(w1.data.copy()), eps=1e-6)
print(f"worst relative gap vs finite differences: {err:.2e}")

# Nothing is recorded inside no_tape, which is what inference uses.
with T.no_tape():
    print("inference loss", loss_of(w1).item())
