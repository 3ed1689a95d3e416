"""
Reverse-mode gradients and the finite-difference check
======================================================

Build a small graph, backpropagate through it, and compare every gradient
with central differences.
"""

import numpy as np

from vflreid import tensor as tn
from vflreid.gradcheck import check_gradients, run_gradcheck

rng = np.random.default_rng(0)

# a 2x3 weight, a 3-vector input batch, and a tanh squashing
W = tn.parameter(rng.normal(size=(3, 2)))
x = tn.Tensor(rng.normal(size=(4, 3)))
loss = tn.mean(tn.tanh(x @ W))
tn.backward(loss)
print("loss", loss.item())
print("dL/dW\n", W.grad)

# the same gradient by central differences
errors = check_gradients(lambda: tn.mean(tn.tanh(x @ W)), {"W": W})
print("max relative error vs finite differences:", errors["W"])

# log of a non-positive value is a domain error that names the index
try:
    tn.log(tn.Tensor([1.0, 0.0, 2.0]))
except ValueError as exc:
    print("domain error:", exc)

# the full suite that `vflreid gradcheck` runs
report = run_gradcheck(seed=0)
for line in report.lines():
    if not line.startswith("    "):
        print(line)
