"""
Reverse-mode gradients and the finite-difference check
======================================================

Every layer in the package is built from a handful of primitive ops on
``Tensor``.  This script builds a tiny expression, runs the reverse pass and
compares the result with central differences.
"""

import numpy as np

from dchanet import tensor as T
from dchanet.gradcheck import check_gradients

rng = np.random.default_rng(0)

# a small convolution followed by a softmax over the last axis
x = T.Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
k = T.Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
y = T.softmax_lastdim(T.conv2d(x, k, pad=1))
loss = T.mean(y * y)
tape = T.backward(loss)
print("loss", loss.item())
print("recorded ops", len(tape.nodes))
print("d loss / d kernel, first filter:\n", k.grad[0, 0])

# the same expression, rebuilt from raw arrays, checked against differences
def build(a, b):
    s = T.softmax_lastdim(T.conv2d(a, b, pad=1))
    return T.mean(s * s)


err = check_gradients(build, [x.data, k.data])
print("max relative error vs finite differences: %.2e" % err)

# a second backward on the same graph is refused until it is reset
try:
    tape.backward()
except Exception as exc:
    print("second backward:", exc)
tape.reset()
