"""
Reverse-mode autodiff on numpy arrays
=====================================

Every operation records how to push a gradient back to its inputs.
Calling ``backward`` on a scalar replays those steps in reverse.
"""

import numpy as np

from usadapt.tensor import Tensor, conv2d, gelu, grad_check, layer_norm

rng = np.random.default_rng(0)

# a tiny channels-last image batch and a 3x3 kernel
x = Tensor(rng.normal(size=(1, 6, 6, 2)), requires_grad=True)
k = Tensor(rng.normal(size=(3, 3, 2, 4)) * 0.3, requires_grad=True)
gamma = Tensor(np.ones(4), requires_grad=True)
beta = Tensor(np.zeros(4), requires_grad=True)

y = gelu(layer_norm(conv2d(x, k, pad=1), gamma, beta))
loss = (y * y).mean()
loss.backward()
print("loss", loss.item())
print("kernel grad norm", np.linalg.norm(k.grad))

###############################################################################
# Finite differences agree with the analytic gradient.
# ``grad_check`` re-runs the function in float64 and reports the worst
# relative error over every entry of every tensor.

def objective():
    y = gelu(layer_norm(conv2d(x, k, pad=1), gamma, beta))
    return (y * y).mean()


err = grad_check(objective, [x, k, gamma, beta])
print("max relative error", err)
